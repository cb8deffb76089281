"""Q-learning agent covering the four variants (DQN, TState, TDiscount, TQN)
plus Double targets, Dueling heads and prioritized replay."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .core import StateWindow, TemporalDiscountSpec, build_state_vector, state_vector_size, temporal_discount
from .errors import DomainError, TrainingError
from .network import AdamState, QNetwork, gradient_step
from .replay import ReplayBuffer, Transition, anneal_beta, make_replay

VARIANTS = ("dqn", "tstate", "tdiscount", "tqn")


@dataclass(frozen=True)
class EpsilonSchedule:
    initial: float = 1.0
    final: float = 0.001
    final_iteration: int = 6904


def epsilon_at(schedule: EpsilonSchedule, iteration: int) -> float:
    """Linear decay from ``initial`` to ``final`` over ``final_iteration`` iterations."""
    if iteration < 0:
        raise DomainError(f"iteration must be >= 0, got {iteration}")
    if schedule.final_iteration <= 0 or iteration >= schedule.final_iteration:
        return schedule.final
    frac = iteration / schedule.final_iteration
    return schedule.initial + (schedule.final - schedule.initial) * frac


@dataclass(frozen=True)
class AgentConfig:
    variant: str = "dqn"
    double: bool = False
    dueling: bool = False
    per: bool = False
    gamma: float = 0.99
    discount: TemporalDiscountSpec | None = None
    epsilon: EpsilonSchedule = field(default_factory=EpsilonSchedule)
    soft_update: float = 0.2
    history: int = 3
    hidden: tuple[int, ...] = (64, 32, 16)
    lr: float = 0.01
    batch_size: int = 32
    replay_capacity: int = 50_000
    replay_start: int = 5_000

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise DomainError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.temporal_discounting and self.discount is None:
            raise DomainError(f"variant {self.variant!r} needs a temporal discount spec (tau, b)")
        if not 0.0 <= self.gamma <= 1.0:
            raise DomainError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0.0 <= self.soft_update <= 1.0:
            raise DomainError(f"soft update rate must lie in [0, 1], got {self.soft_update}")
        if self.history < 1:
            raise DomainError("history length must be >= 1")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def time_aware_state(self) -> bool:
        return self.variant in ("tstate", "tqn")

    @property
    def temporal_discounting(self) -> bool:
        return self.variant in ("tdiscount", "tqn")

    @property
    def label(self) -> str:
        if self.double and self.dueling:
            boosts = "DD"
        else:
            boosts = "Doub" if self.double else "Duel" if self.dueling else ""
        if self.per:
            boosts = "P" + boosts if len(boosts) == 2 else "-".join(filter(None, ["PER", boosts]))
        name = {"dqn": "DQN", "tstate": "TState", "tdiscount": "TDiscount", "tqn": "TQN"}[self.variant]
        return f"{name}-{boosts}-d" if boosts else f"{name}-d"


def select_action(net: QNetwork, state_vector, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy; greedy ties go to the lowest action index."""
    if not 0.0 <= epsilon <= 1.0:
        raise DomainError(f"epsilon must lie in [0, 1], got {epsilon}")
    if rng.random() < epsilon:
        return int(rng.integers(net.n_actions))
    return int(np.argmax(net.q_values(state_vector)))


def soft_update_target(target: QNetwork, online: QNetwork, rate: float) -> None:
    """target <- rate * online + (1 - rate) * target, in place."""
    if not 0.0 <= rate <= 1.0:
        raise DomainError(f"soft update rate must lie in [0, 1], got {rate}")
    if target.flat.shape != online.flat.shape or target.layer_sizes != online.layer_sizes \
            or target.dueling != online.dueling:
        raise DomainError("target and online networks have different shapes")
    target.flat[...] = rate * online.flat + (1.0 - rate) * target.flat


def discounts(config: AgentConfig, dts) -> np.ndarray | float:
    if config.temporal_discounting:
        return temporal_discount(config.discount, dts)
    return config.gamma


def batch_targets(config: AgentConfig, online: QNetwork, target: QNetwork, rewards, dts, next_states,
                  terminals, truncateds) -> np.ndarray:
    rewards = np.asarray(rewards, dtype=float)
    q_next = target.q_values(next_states)
    if config.double:
        pick = np.argmax(online.q_values(next_states), axis=1)
        boot = q_next[np.arange(len(pick)), pick]
    else:
        boot = q_next.max(axis=1)
    if not np.all(np.isfinite(boot)):
        raise TrainingError("non-finite Q-values while building TD targets")
    live = ~(np.asarray(terminals, dtype=bool) & ~np.asarray(truncateds, dtype=bool))
    return rewards + np.where(live, discounts(config, dts) * boot, 0.0)


def compute_td_target(config: AgentConfig, online: QNetwork, target: QNetwork, transition: Transition) -> float:
    """TD target for a single transition.

    A true terminal yields the reward alone; anything else (including a
    truncated episode) bootstraps from the next state.
    """
    if transition.terminal and not transition.truncated:
        return float(transition.reward)
    s2 = build_state_vector(transition.next_state, config.time_aware_state)
    q_next = target.q_values(s2)
    if config.double:
        boot = q_next[int(np.argmax(online.q_values(s2)))]
    else:
        boot = q_next.max()
    if not (math.isfinite(boot) and math.isfinite(transition.reward)):
        raise TrainingError("non-finite value while building a TD target")
    d = discounts(config, transition.dt)
    return float(transition.reward + d * boot)


class LearnStats(NamedTuple):
    loss: float
    mean_abs_td: float


def learn_step(config: AgentConfig, online: QNetwork, target: QNetwork, adam: AdamState,
               replay: ReplayBuffer, iteration: int, rng: np.random.Generator) -> LearnStats:
    beta = anneal_beta(iteration) if replay.prioritized else 0.0
    batch = replay.sample(config.batch_size, rng, beta)
    y = batch_targets(config, online, target, batch.rewards, batch.dts, batch.next_states,
                      batch.terminals, batch.truncateds)
    loss, abs_td = gradient_step(online, adam, batch.states, batch.actions, y, batch.weights)
    if replay.prioritized:
        replay.update_priorities(batch.indices, abs_td)
    soft_update_target(target, online, config.soft_update)
    return LearnStats(loss, float(abs_td.mean()))


class Agent:
    """Online/target network pair, optimizer and replay memory for one run."""

    def __init__(self, config: AgentConfig, obs_dim: int, n_actions: int, seed: int = 0,
                 replay: ReplayBuffer | None = None):
        self.config = config
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        ss = np.random.SeedSequence(seed)
        init_seed, rng_seed = ss.spawn(2)
        n_in = state_vector_size(config.history, obs_dim, config.time_aware_state)
        self.online = QNetwork([n_in, *config.hidden, n_actions], config.dueling,
                               seed=int(init_seed.generate_state(1)[0]))
        self.target = self.online.copy()
        self.adam = AdamState.for_network(self.online, config.lr)
        self.rng = np.random.default_rng(rng_seed)
        self.replay = replay if replay is not None else make_replay(
            config.per, config.replay_capacity, self.encode, config.replay_start)
        self.iteration = 0

    def encode(self, window: StateWindow) -> np.ndarray:
        return build_state_vector(window, self.config.time_aware_state)

    @property
    def epsilon(self) -> float:
        return epsilon_at(self.config.epsilon, self.iteration)

    def act(self, window: StateWindow, epsilon: float | None = None) -> int:
        eps = self.epsilon if epsilon is None else epsilon
        return select_action(self.online, self.encode(window), eps, self.rng)

    def observe(self, transition: Transition) -> None:
        self.replay.push(transition)

    def ready(self) -> bool:
        return len(self.replay) >= max(self.config.replay_start, self.config.batch_size)

    def learn(self) -> LearnStats:
        stats = learn_step(self.config, self.online, self.target, self.adam, self.replay,
                           self.iteration, self.rng)
        self.iteration += 1
        return stats

    def checkpoint_meta(self, env_kind: str) -> dict:
        c = self.config
        return {
            "env": env_kind,
            "obs_dim": self.obs_dim,
            "history": c.history,
            "time_aware": c.time_aware_state,
            "variant": c.variant,
        }
