"""Training loops, evaluation, offline logs and the agreement/outcome curve."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .agent import Agent, AgentConfig
from .core import History, StateWindow, TimedObservation, build_state_vector
from .envs import ENVIRONMENTS, IntervalEnv, IntervalWrapperConfig
from .errors import TrainingError, UsageError
from .network import QNetwork
from .replay import ReplayBuffer, Transition

log = logging.getLogger(__name__)

SOLVE_WINDOW = 100
TRAIN_CSV_HEADER = ("episode", "score", "epsilon", "mean_loss")
EPISODE_CAPS = {"cartpole": 5000, "mountaincar": 10000}


def solve_threshold(env_kind: str) -> float:
    return ENVIRONMENTS[env_kind].solve_threshold


@dataclass
class EpisodeRecord:
    transitions: list[Transition]
    score: float
    substeps: int
    seed: int | None
    cause: str  # "terminal" or "truncated"


@dataclass
class RunSummary:
    scores: list[float]
    solved_at: int | None
    config_hash: str
    seed: int
    wall_clock: float = field(default=0.0, compare=False)
    eval_mean: float | None = None
    eval_std: float | None = None
    aborted: str | None = None

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "config_hash": self.config_hash,
            "episodes": len(self.scores),
            "solved_at": self.solved_at,
            "eval_mean": self.eval_mean,
            "eval_std": self.eval_std,
            "aborted": self.aborted,
            "wall_clock": self.wall_clock,
            "scores": self.scores,
        }


@dataclass
class TrainConfig:
    """What a single online or offline run needs beyond the agent itself."""

    env: IntervalWrapperConfig
    agent: AgentConfig
    episode_cap: int | None = None
    eval_episodes: int = 100
    log_interval: int = 1000
    config_hash: str = ""

    def __post_init__(self):
        if self.episode_cap is None:
            self.episode_cap = EPISODE_CAPS[self.env.base_env]


def is_solved(scores: Sequence[float], env_kind: str | float) -> int | None:
    """First index whose trailing-100 mean reaches the solve threshold."""
    threshold = solve_threshold(env_kind) if isinstance(env_kind, str) else float(env_kind)
    s = np.asarray(scores, dtype=float)
    if s.size < SOLVE_WINDOW:
        return None
    csum = np.concatenate([[0.0], np.cumsum(s)])
    means = (csum[SOLVE_WINDOW:] - csum[:-SOLVE_WINDOW]) / SOLVE_WINDOW
    # Cumulative sums can drift by an ulp; confirm candidates exactly.
    for i in np.flatnonzero(means >= threshold - 1e-9):
        if math.fsum(s[i: i + SOLVE_WINDOW]) / SOLVE_WINDOW >= threshold:
            return int(i) + SOLVE_WINDOW - 1
    return None


def run_episode(env: IntervalEnv, agent: Agent, rng: np.random.Generator, learn: bool = False,
                epsilon: float | None = None, seed: int | None = None, losses: list | None = None) -> EpisodeRecord:
    """Play one episode.  With ``learn`` every transition is stored and a
    learning step runs once the replay start size is reached."""
    obs, dt_next = env.reset(rng)
    hist = History(agent.config.history)
    hist.reset(obs)
    state = hist.window(dt_next)
    transitions = []
    score = 0.0
    substeps = 0
    while True:
        action = agent.act(state, epsilon)
        step = env.step(action)
        hist.push(step.observation)
        next_state = hist.window(step.dt_next)
        tr = Transition(state, action, step.reward, float(step.dt_consumed), next_state,
                        step.terminal, step.truncated)
        transitions.append(tr)
        score += step.reward
        substeps += step.dt_consumed
        if learn:
            agent.observe(tr)
            if agent.ready():
                stats = agent.learn()
                if losses is not None:
                    losses.append(stats.loss)
        if step.done:
            cause = "terminal" if step.terminal else "truncated"
            return EpisodeRecord(transitions, score, substeps, seed, cause)
        state = next_state


def _episode_rngs(seed: int):
    ss = np.random.SeedSequence(seed)
    env_ss, agent_ss, eval_ss = ss.spawn(3)
    return np.random.default_rng(env_ss), int(agent_ss.generate_state(1)[0]), eval_ss


def _fmt(x: float) -> str:
    return repr(float(x))


def train_online(config: TrainConfig, seed: int, csv_file=None, checkpoint_path=None) -> RunSummary:
    """Train until solved or until the episode cap; fully determined by ``seed``.

    Per-episode rows ``episode,score,epsilon,mean_loss`` go to ``csv_file``
    (an open text stream) when given.
    """
    started = time.perf_counter()
    env = IntervalEnv(config.env)
    env_rng, agent_seed, eval_ss = _episode_rngs(seed)
    agent = Agent(config.agent, env.obs_dim, env.n_actions, seed=agent_seed)
    writer = csv.writer(csv_file, lineterminator="\n") if csv_file is not None else None
    if writer:
        writer.writerow(TRAIN_CSV_HEADER)
    scores: list[float] = []
    solved_at = None
    aborted = None
    for ep in range(config.episode_cap):
        eps = agent.epsilon
        losses: list[float] = []
        try:
            rec = run_episode(env, agent, env_rng, learn=True, losses=losses)
        except TrainingError as exc:
            aborted = f"episode {ep}: {exc}"
            log.error("run aborted: %s", aborted)
            break
        scores.append(rec.score)
        mean_loss = float(np.mean(losses)) if losses else float("nan")
        if writer:
            writer.writerow([ep, _fmt(rec.score), _fmt(eps), _fmt(mean_loss)])
        if len(scores) >= SOLVE_WINDOW and np.mean(scores[-SOLVE_WINDOW:]) >= env.solve_threshold:
            solved_at = is_solved(scores, env.kind)
            if solved_at is not None:
                break
    if checkpoint_path is not None:
        agent.online.save(checkpoint_path, agent.checkpoint_meta(env.kind))
    summary = RunSummary(scores, solved_at, config.config_hash, seed, aborted=aborted)
    if config.eval_episodes > 0 and aborted is None and scores:
        eval_seed = int(eval_ss.generate_state(1)[0])
        mean, std, _ = evaluate_network(agent.online, agent.config, config.env, config.eval_episodes, eval_seed)
        summary.eval_mean, summary.eval_std = mean, std
    summary.wall_clock = time.perf_counter() - started
    return summary


def _policy_agent(net: QNetwork, meta: dict, env: IntervalEnv) -> Agent:
    if meta.get("env") not in (None, env.kind) or meta.get("obs_dim", env.obs_dim) != env.obs_dim \
            or net.n_actions != env.n_actions:
        raise UsageError(f"checkpoint was trained on {meta.get('env')!r}, not {env.kind!r}")
    cfg = AgentConfig(variant="tstate" if meta.get("time_aware") else "dqn",
                      history=int(meta.get("history", 1)), hidden=(), replay_capacity=1)
    agent = Agent(cfg, env.obs_dim, env.n_actions, seed=0, replay=ReplayBuffer(1))
    if agent.online.n_inputs != net.n_inputs:
        raise UsageError("checkpoint input size does not match the environment and history length")
    agent.online = net
    return agent


def evaluate_network(net: QNetwork, agent_config: AgentConfig, env_config: IntervalWrapperConfig,
                     n_episodes: int, seed: int) -> tuple[float, float, list[float]]:
    meta = {"history": agent_config.history, "time_aware": agent_config.time_aware_state}
    env = IntervalEnv(env_config)
    return _evaluate(net, meta, env, n_episodes, seed)


def _evaluate(net, meta, env, n_episodes, seed, epsilon=0.0):
    if n_episodes < 1:
        raise UsageError("evaluation needs at least one episode")
    agent = _policy_agent(net, meta, env)
    agent.rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    rng = np.random.default_rng(seed)
    scores = [run_episode(env, agent, rng, learn=False, epsilon=epsilon).score for _ in range(n_episodes)]
    return float(np.mean(scores)), float(np.std(scores)), scores


def evaluate_random(env_config: IntervalWrapperConfig, n_episodes: int, seed: int):
    """Uniform-random baseline on the same episode seeds as a greedy evaluation."""
    env = IntervalEnv(env_config)
    return _evaluate(QNetwork([env.obs_dim, env.n_actions]), {"history": 1}, env, n_episodes, seed, epsilon=1.0)


def evaluate_policy(checkpoint, env_config: IntervalWrapperConfig, n_episodes: int, seed: int):
    """Greedy rollouts of a saved network.  Returns (mean, std, scores)."""
    net, meta = QNetwork.load(checkpoint)
    return _evaluate(net, meta, IntervalEnv(env_config), n_episodes, seed)


# offline logs

@dataclass
class LoggedStep:
    obs: list[float]
    dt_prev: float
    action: int
    reward: float
    dt: float
    terminal: bool
    truncated: bool
    dt_next: float | None = None  # interval announced before acting; differs from dt when cut short

    def __post_init__(self):
        if self.dt_next is None:
            self.dt_next = self.dt


@dataclass
class EpisodeLog:
    seed: int
    outcome: str  # "good" or "bad"
    score: float
    transitions: list[LoggedStep]
    final_obs: list[float]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "outcome": self.outcome,
            "score": self.score,
            "transitions": [s.__dict__ for s in self.transitions],
            "final_obs": self.final_obs,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeLog":
        return cls(int(d["seed"]), d["outcome"], float(d["score"]),
                   [LoggedStep(**s) for s in d["transitions"]], list(d["final_obs"]))

    @property
    def bad(self) -> bool:
        return self.outcome == "bad"


def outcome_label(env_kind: str, score: float) -> str:
    return "good" if score >= solve_threshold(env_kind) else "bad"


def episode_to_log(rec: EpisodeRecord, env_kind: str) -> EpisodeLog:
    steps = []
    for tr in rec.transitions:
        o = tr.state.observations[-1]
        steps.append(LoggedStep(list(o.features), o.dt_prev, tr.action, tr.reward, tr.dt,
                                tr.terminal, tr.truncated, tr.state.dt_next))
    final = list(rec.transitions[-1].next_state.observations[-1].features)
    return EpisodeLog(rec.seed, outcome_label(env_kind, rec.score), rec.score, steps, final)


def write_dataset(path, episodes: Iterable[EpisodeLog]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ep in episodes:
            fh.write(json.dumps(ep.to_dict(), separators=(",", ":")))
            fh.write("\n")


def load_dataset(path) -> list[EpisodeLog]:
    with open(path, encoding="utf-8") as fh:
        return [EpisodeLog.from_dict(json.loads(line)) for line in fh if line.strip()]


def episode_windows(ep: EpisodeLog, c: int) -> list[StateWindow]:
    """Windows for every logged decision plus the final observation.

    Each window carries the interval announced to the behaviour policy
    (``dt_next``, falling back to the consumed ``dt`` for logs without it);
    the final window gets 0.
    """
    hist = History(c)
    out = []
    steps = ep.transitions
    for i, s in enumerate(steps):
        o = TimedObservation(s.obs, s.dt_prev)
        if i == 0:
            hist.reset(o)
        else:
            hist.push(o)
        out.append(hist.window(s.dt_next))
    hist.push(TimedObservation(ep.final_obs, steps[-1].dt))
    out.append(hist.window(0.0))
    return out


def log_transitions(ep: EpisodeLog, c: int) -> list[Transition]:
    wins = episode_windows(ep, c)
    return [Transition(wins[i], s.action, s.reward, s.dt, wins[i + 1], s.terminal, s.truncated)
            for i, s in enumerate(ep.transitions)]


def generate_offline_dataset(env_config: IntervalWrapperConfig, behavior: str, n_episodes: int, seed: int,
                             path, checkpoint=None, epsilon: float = 0.5) -> list[EpisodeLog]:
    """Roll out a behaviour policy and write the episodes as NDJSON.

    ``behavior`` is ``"random"`` (uniform actions) or ``"epsilon-greedy"``
    (greedy on ``checkpoint`` with probability ``1 - epsilon``).
    """
    env = IntervalEnv(env_config)
    if behavior == "random":
        agent = _policy_agent(QNetwork([env.obs_dim, env.n_actions]), {"history": 1}, env)
        eps = 1.0
    elif behavior in ("epsilon-greedy", "egreedy"):
        if checkpoint is None:
            raise UsageError("epsilon-greedy behaviour needs a checkpoint")
        net, meta = QNetwork.load(checkpoint) if not isinstance(checkpoint, tuple) else checkpoint
        agent = _policy_agent(net, meta, env)
        eps = float(epsilon)
    else:
        raise UsageError(f"unknown behaviour policy {behavior!r}")
    ss = np.random.SeedSequence(seed)
    ep_seeds = ss.generate_state(n_episodes) if n_episodes > 0 else []
    agent.rng = np.random.default_rng(ss.spawn(1)[0])
    logs = []
    for s in ep_seeds:
        rec = run_episode(env, agent, np.random.default_rng(int(s)), learn=False, epsilon=eps, seed=int(s))
        logs.append(episode_to_log(rec, env.kind))
    write_dataset(path, logs)
    return logs


def train_offline(config: TrainConfig, dataset, iterations: int, seed: int, checkpoint_path=None,
                  diagnostics_file=None) -> tuple[QNetwork, list[tuple[int, float, float]]]:
    """Fit the agent on a logged dataset only; no environment is created.

    Diagnostics rows ``iteration,mean_loss,mean_abs_td`` are written every
    ``config.log_interval`` iterations.
    """
    episodes = load_dataset(dataset) if isinstance(dataset, (str, Path)) else list(dataset)
    if not episodes or not any(ep.transitions for ep in episodes):
        raise UsageError("offline dataset is empty")
    transitions = [t for ep in episodes if ep.transitions for t in log_transitions(ep, config.agent.history)]
    # The whole log fits in memory and learning may start right away.
    cfg = replace(config.agent, replay_capacity=len(transitions), replay_start=config.agent.batch_size)
    kind = config.env.base_env
    env_cls = ENVIRONMENTS[kind]
    agent = Agent(cfg, env_cls.obs_dim, env_cls.n_actions, seed=seed)
    for t in transitions:
        agent.observe(t)
    rows = []
    writer = csv.writer(diagnostics_file, lineterminator="\n") if diagnostics_file is not None else None
    if writer:
        writer.writerow(("iteration", "mean_loss", "mean_abs_td"))
    losses, tds = [], []
    for it in range(iterations):
        stats = agent.learn()
        losses.append(stats.loss)
        tds.append(stats.mean_abs_td)
        if (it + 1) % config.log_interval == 0 or it + 1 == iterations:
            row = (it + 1, float(np.mean(losses)), float(np.mean(tds)))
            rows.append(row)
            if writer:
                writer.writerow([row[0], _fmt(row[1]), _fmt(row[2])])
            losses, tds = [], []
    if checkpoint_path is not None:
        agent.online.save(checkpoint_path, agent.checkpoint_meta(kind))
    return agent.online, rows


def episode_agreement(net: QNetwork, meta: dict, ep: EpisodeLog) -> float:
    c = int(meta.get("history", 1))
    aware = bool(meta.get("time_aware", False))
    wins = episode_windows(ep, c)[:-1]
    x = np.stack([build_state_vector(w, aware) for w in wins])
    greedy = np.argmax(net.q_values(x), axis=1)
    logged = np.array([s.action for s in ep.transitions])
    return float(np.mean(greedy == logged))


@dataclass(frozen=True)
class CurvePoint:
    threshold: float
    outcome_rate: float
    episodes: int


def outcome_curve(agreements: Sequence[float], bad: Sequence[bool], thresholds: Sequence[float]) -> list[CurvePoint]:
    if len(thresholds) == 0:
        raise UsageError("at least one agreement threshold is required")
    a = np.asarray(agreements, dtype=float)
    b = np.asarray(bad, dtype=bool)
    out = []
    for t in thresholds:
        keep = a >= t
        n = int(keep.sum())
        rate = float(b[keep].mean()) if n else float("nan")
        out.append(CurvePoint(float(t), rate, n))
    return out


def agreement_outcome_curve(dataset, checkpoint, thresholds: Sequence[float]) -> list[CurvePoint]:
    """Bad-outcome rate among episodes whose agreement with the greedy policy
    is at least each threshold, with the number of such episodes."""
    if len(thresholds) == 0:
        raise UsageError("at least one agreement threshold is required")
    episodes = load_dataset(dataset) if isinstance(dataset, (str, Path)) else list(dataset)
    net, meta = QNetwork.load(checkpoint) if not isinstance(checkpoint, tuple) else checkpoint
    agreements = [episode_agreement(net, meta, ep) for ep in episodes]
    return outcome_curve(agreements, [ep.bad for ep in episodes], thresholds)
