"""CartPole and MountainCar dynamics with an irregular-interval wrapper.

The wrapper draws an interval ``dt`` uniformly from ``{1, ..., dt_max}``
before each decision, holds the chosen action for ``dt`` physics substeps
and returns the summed substep reward.  The draw is exposed to the agent
as ``dt_next`` so it knows how long its next action will persist.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import TimedObservation
from .errors import DomainError, UsageError

# CartPole constants (Barto, Sutton & Anderson cart-pole as used by gym).
GRAVITY = 9.8
CART_MASS = 1.0
POLE_MASS = 0.1
TOTAL_MASS = CART_MASS + POLE_MASS
POLE_HALF_LENGTH = 0.5
POLE_MASS_LENGTH = POLE_MASS * POLE_HALF_LENGTH
FORCE_MAG = 10.0
CARTPOLE_DT = 0.02
X_THRESHOLD = 2.4
THETA_THRESHOLD = 15 * math.pi / 180
CARTPOLE_MAX_STEPS = 200

# MountainCar constants (Moore's mountain car as used by gym).
MC_MIN_POSITION = -1.2
MC_MAX_POSITION = 0.6
MC_MAX_SPEED = 0.07
MC_GOAL_POSITION = 0.5
MC_FORCE = 0.001
MC_GRAVITY = 0.0025
MC_GOAL_REWARD = 100.0
MOUNTAINCAR_MAX_STEPS = 2000

LEFT, RIGHT = 0, 1
PUSH_LEFT, NO_PUSH, PUSH_RIGHT = 0, 1, 2


@dataclass(frozen=True)
class CartPoleState:
    x: float
    x_dot: float
    theta: float
    theta_dot: float

    def is_live(self) -> bool:
        return abs(self.x) <= X_THRESHOLD and abs(self.theta) <= THETA_THRESHOLD

    def as_tuple(self) -> tuple[float, ...]:
        return (self.x, self.x_dot, self.theta, self.theta_dot)


@dataclass(frozen=True)
class MountainCarState:
    position: float
    velocity: float

    def at_goal(self) -> bool:
        return self.position >= MC_GOAL_POSITION

    def as_tuple(self) -> tuple[float, ...]:
        return (self.position, self.velocity)


def cartpole_substep(state: CartPoleState, action: int) -> tuple[CartPoleState, float, bool]:
    """One Euler step of the cart-pole equations.

    Every substep that starts from a live state earns 1.0, including the one
    on which the pole falls; ``terminal`` reports a bound violation.
    """
    if not state.is_live():
        raise UsageError("cannot step a CartPole state that is already out of bounds")
    if action not in (LEFT, RIGHT):
        raise DomainError(f"CartPole action must be 0 or 1, got {action!r}")
    x, x_dot, theta, theta_dot = state.as_tuple()
    force = FORCE_MAG if action == RIGHT else -FORCE_MAG
    cos_t = math.cos(theta)
    sin_t = math.sin(theta)
    temp = (force + POLE_MASS_LENGTH * theta_dot * theta_dot * sin_t) / TOTAL_MASS
    theta_acc = (GRAVITY * sin_t - cos_t * temp) / (
        POLE_HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos_t * cos_t / TOTAL_MASS)
    )
    x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos_t / TOTAL_MASS
    nxt = CartPoleState(
        x + CARTPOLE_DT * x_dot,
        x_dot + CARTPOLE_DT * x_acc,
        theta + CARTPOLE_DT * theta_dot,
        theta_dot + CARTPOLE_DT * theta_acc,
    )
    return nxt, 1.0, not nxt.is_live()


def mountaincar_substep(state: MountainCarState, action: int) -> tuple[MountainCarState, float, bool]:
    if state.at_goal():
        raise UsageError("cannot step a MountainCar state that has reached the goal")
    if action not in (PUSH_LEFT, NO_PUSH, PUSH_RIGHT):
        raise DomainError(f"MountainCar action must be 0, 1 or 2, got {action!r}")
    pos, vel = state.position, state.velocity
    vel += MC_FORCE * (action - 1) - MC_GRAVITY * math.cos(3.0 * pos)
    vel = min(max(vel, -MC_MAX_SPEED), MC_MAX_SPEED)
    pos += vel
    pos = min(max(pos, MC_MIN_POSITION), MC_MAX_POSITION)
    if pos == MC_MIN_POSITION and vel < 0:
        vel = 0.0
    nxt = MountainCarState(pos, vel)
    if nxt.at_goal():
        return nxt, -1.0 + MC_GOAL_REWARD, True
    return nxt, -1.0, False


class StepResult(NamedTuple):
    state: tuple[float, ...]
    reward: float
    terminal: bool
    truncated: bool


class CartPole:
    """Single-step CartPole episode with the 200-substep cap."""

    kind = "cartpole"
    n_actions = 2
    obs_dim = 4
    solve_threshold = 195.0

    def __init__(self, max_steps: int = CARTPOLE_MAX_STEPS):
        self.max_steps = max_steps
        self.state: CartPoleState | None = None
        self.steps = 0
        self.done = True

    def reset(self, rng: np.random.Generator) -> tuple[float, ...]:
        self.state = CartPoleState(*(float(v) for v in rng.uniform(-0.05, 0.05, size=4)))
        self.steps = 0
        self.done = False
        return self.state.as_tuple()

    def step(self, action: int) -> StepResult:
        if self.done:
            raise UsageError("episode is over; call reset() first")
        self.state, reward, terminal = cartpole_substep(self.state, action)
        self.steps += 1
        truncated = not terminal and self.steps >= self.max_steps
        self.done = terminal or truncated
        return StepResult(self.state.as_tuple(), reward, terminal, truncated)


class MountainCar:
    """Single-step MountainCar episode, truncated after ``max_steps`` substeps."""

    kind = "mountaincar"
    n_actions = 3
    obs_dim = 2
    solve_threshold = -110.0

    def __init__(self, max_steps: int = MOUNTAINCAR_MAX_STEPS):
        self.max_steps = max_steps
        self.state: MountainCarState | None = None
        self.steps = 0
        self.done = True

    def reset(self, rng: np.random.Generator) -> tuple[float, ...]:
        self.state = MountainCarState(float(rng.uniform(-0.6, -0.4)), 0.0)
        self.steps = 0
        self.done = False
        return self.state.as_tuple()

    def step(self, action: int) -> StepResult:
        if self.done:
            raise UsageError("episode is over; call reset() first")
        self.state, reward, terminal = mountaincar_substep(self.state, action)
        self.steps += 1
        truncated = not terminal and self.steps >= self.max_steps
        self.done = terminal or truncated
        return StepResult(self.state.as_tuple(), reward, terminal, truncated)


ENVIRONMENTS = {"cartpole": CartPole, "mountaincar": MountainCar}
DEFAULT_DT_MAX = {"cartpole": 4, "mountaincar": 32}


def make_base_env(kind: str, max_steps: int | None = None):
    try:
        cls = ENVIRONMENTS[kind]
    except KeyError:
        raise DomainError(f"unknown environment {kind!r}; choose from {sorted(ENVIRONMENTS)}") from None
    return cls() if max_steps is None else cls(max_steps=max_steps)


def draw_interval(rng: np.random.Generator, dt_max: int) -> int:
    """Uniform integer interval in ``{1, ..., dt_max}``.

    ``dt_max == 1`` returns 1 without consuming randomness, which keeps the
    wrapped environment's random stream identical to the bare one.
    """
    if int(dt_max) != dt_max or dt_max < 1:
        raise DomainError(f"dt_max must be a positive integer, got {dt_max!r}")
    if dt_max == 1:
        return 1
    return int(rng.integers(1, dt_max + 1))


class IntervalStep(NamedTuple):
    observation: TimedObservation
    reward: float
    terminal: bool
    truncated: bool
    dt_consumed: int
    dt_next: int

    @property
    def done(self) -> bool:
        return self.terminal or self.truncated


@dataclass(frozen=True)
class IntervalWrapperConfig:
    base_env: str = "cartpole"
    dt_max: int | None = None
    max_steps: int | None = None

    def __post_init__(self):
        if self.base_env not in ENVIRONMENTS:
            raise DomainError(f"unknown environment {self.base_env!r}")
        if self.dt_max is None:
            object.__setattr__(self, "dt_max", DEFAULT_DT_MAX[self.base_env])
        if int(self.dt_max) != self.dt_max or self.dt_max < 1:
            raise DomainError(f"dt_max must be a positive integer, got {self.dt_max!r}")


class IntervalEnv:
    """Irregular-interval wrapper around a single-step environment."""

    def __init__(self, config: IntervalWrapperConfig):
        self.config = config
        self.env = make_base_env(config.base_env, config.max_steps)
        self.dt_max = config.dt_max
        self._rng: np.random.Generator | None = None
        self._pending: int | None = None

    @property
    def kind(self) -> str:
        return self.env.kind

    @property
    def n_actions(self) -> int:
        return self.env.n_actions

    @property
    def obs_dim(self) -> int:
        return self.env.obs_dim

    @property
    def solve_threshold(self) -> float:
        return self.env.solve_threshold

    @property
    def pending_interval(self) -> int | None:
        return self._pending

    def reset(self, rng: np.random.Generator) -> tuple[TimedObservation, int]:
        """Start an episode; ``rng`` also drives every interval draw in it."""
        self._rng = rng
        features = self.env.reset(rng)
        self._pending = draw_interval(rng, self.dt_max)
        return TimedObservation(features, 0.0), self._pending

    def step(self, action: int) -> IntervalStep:
        if self._pending is None:
            raise UsageError("no pending interval; call reset() first")
        dt = self._pending
        self._pending = None
        total = 0.0
        consumed = 0
        res = None
        for _ in range(dt):
            res = self.env.step(action)
            total += res.reward
            consumed += 1
            if res.terminal or res.truncated:
                break
        done = res.terminal or res.truncated
        dt_next = 0 if done else draw_interval(self._rng, self.dt_max)
        if not done:
            self._pending = dt_next
        obs = TimedObservation(res.state, float(consumed))
        return IntervalStep(obs, total, res.terminal, res.truncated, consumed, dt_next)


def make_env(kind: str, dt_max: int | None = None, max_steps: int | None = None) -> IntervalEnv:
    return IntervalEnv(IntervalWrapperConfig(kind, dt_max, max_steps))
