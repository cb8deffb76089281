import math

import numpy as np
import pytest

from tqn import envs
from tqn.envs import (
    CartPole,
    CartPoleState,
    IntervalWrapperConfig,
    MountainCarState,
    cartpole_substep,
    draw_interval,
    make_env,
    mountaincar_substep,
)
from tqn.errors import DomainError, UsageError


def euler_reference(x, x_dot, th, th_dot, force):
    """Straight transcription of the cart-pole equations of motion."""
    g, mc, mp, l, dt = 9.8, 1.0, 0.1, 0.5, 0.02
    m = mc + mp
    tmp = (force + mp * l * th_dot ** 2 * math.sin(th)) / m
    th_acc = (g * math.sin(th) - math.cos(th) * tmp) / (l * (4 / 3 - mp * math.cos(th) ** 2 / m))
    x_acc = tmp - mp * l * th_acc * math.cos(th) / m
    return x + dt * x_dot, x_dot + dt * x_acc, th + dt * th_dot, th_dot + dt * th_acc


def test_cartpole_push_right_from_rest():
    nxt, r, term = cartpole_substep(CartPoleState(0, 0, 0, 0), envs.RIGHT)
    assert nxt.x_dot > 0 and nxt.theta_dot < 0
    assert r == 1.0 and not term
    assert nxt.as_tuple() == pytest.approx(euler_reference(0, 0, 0, 0, 10.0), abs=1e-15)


def test_cartpole_matches_reference_on_random_states():
    rng = np.random.default_rng(3)
    for _ in range(200):
        s = rng.uniform([-2, -2, -0.2, -2], [2, 2, 0.2, 2])
        a = int(rng.integers(2))
        nxt, _, _ = cartpole_substep(CartPoleState(*s), a)
        assert nxt.as_tuple() == pytest.approx(euler_reference(*s, 10.0 if a else -10.0), abs=1e-14)


def test_cartpole_angle_threshold():
    assert envs.THETA_THRESHOLD == pytest.approx(0.2617993878, abs=1e-9)
    nxt, r, term = cartpole_substep(CartPoleState(0, 0, 0.26, 1.0), envs.LEFT)
    assert nxt.theta > envs.THETA_THRESHOLD
    assert term and r == 1.0
    with pytest.raises(UsageError):
        cartpole_substep(CartPoleState(0, 0, 0.3, 0), envs.LEFT)
    with pytest.raises(UsageError):
        cartpole_substep(CartPoleState(2.5, 0, 0, 0), envs.LEFT)


def test_cartpole_cap_at_200():
    env = CartPole()
    env.reset(np.random.default_rng(0))
    env.state = CartPoleState(0, 0, 0, 0)
    total, res = 0.0, None
    # A linear feedback controller keeps the pole up for the whole episode.
    for k in range(200):
        st = env.state
        res = env.step(int(st.theta + 0.5 * st.theta_dot + 0.01 * st.x + 0.1 * st.x_dot > 0))
        total += res.reward
        assert not res.terminal
        if res.truncated:
            break
    assert res.truncated and total == 200 and env.steps == 200
    with pytest.raises(UsageError):
        env.step(0)


def test_mountaincar_single_substep():
    nxt, r, term = mountaincar_substep(MountainCarState(-0.5, 0.0), envs.NO_PUSH)
    assert nxt.velocity == pytest.approx(-0.000176843004169, abs=1e-15)
    assert nxt.position == pytest.approx(-0.500176843004169, abs=1e-15)
    assert r == -1.0 and not term


def test_mountaincar_goal_reward():
    nxt, r, term = mountaincar_substep(MountainCarState(0.49, 0.07), envs.PUSH_RIGHT)
    assert nxt.position >= 0.5 and term and r == 99.0
    with pytest.raises(UsageError):
        mountaincar_substep(nxt, envs.NO_PUSH)


def test_mountaincar_clamps():
    nxt, _, _ = mountaincar_substep(MountainCarState(-0.5, 0.0699), envs.PUSH_RIGHT)
    assert nxt.velocity == 0.07
    nxt, _, _ = mountaincar_substep(MountainCarState(-1.19, -0.07), envs.PUSH_LEFT)
    assert nxt.position == -1.2 and nxt.velocity == 0.0


def test_draw_interval():
    rng = np.random.default_rng(0)
    assert all(draw_interval(rng, 1) == 1 for _ in range(100))
    with pytest.raises(DomainError):
        draw_interval(rng, 0)
    r1, r2 = np.random.default_rng(11), np.random.default_rng(11)
    assert [draw_interval(r1, 4) for _ in range(50)] == [draw_interval(r2, 4) for _ in range(50)]


def test_draw_interval_uniform():
    rng = np.random.default_rng(123)
    draws = np.fromiter((draw_interval(rng, 4) for _ in range(10 ** 6)), dtype=np.int64)
    freq = np.bincount(draws, minlength=5)[1:] / draws.size
    assert draws.min() == 1 and draws.max() == 4
    assert np.all((freq >= 0.248) & (freq <= 0.252))


def test_reset_ranges_and_determinism():
    cp = make_env("cartpole")
    obs, dt = cp.reset(np.random.default_rng(1))
    assert all(abs(v) <= 0.05 for v in obs.features) and obs.dt_prev == 0.0 and 1 <= dt <= 4
    again, dt2 = make_env("cartpole").reset(np.random.default_rng(1))
    assert again == obs and dt2 == dt
    mc = make_env("mountaincar")
    obs, dt = mc.reset(np.random.default_rng(2))
    assert obs.features[1] == 0.0 and -0.6 <= obs.features[0] <= -0.4 and 1 <= dt <= 32


class ScriptedCartPole(CartPole):
    """CartPole whose substep outcomes are scripted."""

    def __init__(self, fail_on):
        super().__init__()
        self.fail_on = fail_on

    def step(self, action):
        self.steps += 1
        term = self.steps == self.fail_on
        self.done = term
        return envs.StepResult((0.0, 0.0, 0.0, 0.0), 1.0, term, False)


def test_three_points_in_four_step_interval():
    env = make_env("cartpole")
    env.reset(np.random.default_rng(0))
    env.env = ScriptedCartPole(fail_on=3)
    env._pending = 4
    out = env.step(0)
    assert (out.reward, out.terminal, out.dt_consumed, out.dt_next) == (3.0, True, 3, 0)


def test_three_points_with_real_physics():
    # Search for a start state where the pole falls on the third substep.
    rng = np.random.default_rng(0)
    for _ in range(10000):
        th = rng.uniform(0.2, 0.26)
        th_dot = rng.uniform(0.5, 3.0)
        s = CartPoleState(0.0, 0.0, th, th_dot)
        falls = []
        cur = s
        for k in range(4):
            cur, _, term = cartpole_substep(cur, envs.RIGHT)
            if term:
                falls.append(k + 1)
                break
        if falls == [3]:
            break
    env = make_env("cartpole")
    env.reset(np.random.default_rng(0))
    env.env.state = s
    env._pending = 4
    out = env.step(envs.RIGHT)
    assert (out.reward, out.terminal, out.dt_consumed) == (3.0, True, 3)


def test_mountaincar_goal_mid_interval():
    env = make_env("mountaincar")
    env.reset(np.random.default_rng(0))
    env.env.state = MountainCarState(0.44, 0.04)
    env._pending = 5
    out = env.step(envs.PUSH_RIGHT)
    assert out.dt_consumed == 2 and out.reward == -2 + 100 and out.terminal


def test_single_substep_interval():
    env = make_env("mountaincar")
    env.reset(np.random.default_rng(4))
    before = env.env.state
    env._pending = 1
    out = env.step(envs.PUSH_LEFT)
    expected_state, expected_r, _ = mountaincar_substep(before, envs.PUSH_LEFT)
    assert out.dt_consumed == 1 and out.reward == expected_r
    assert out.observation.features == expected_state.as_tuple()


def test_step_without_pending_interval():
    env = make_env("cartpole")
    with pytest.raises(UsageError):
        env.step(0)


class CountingEnv:
    """Wraps a base env and records every substep reward."""

    def __init__(self, base):
        self.base = base
        self.rewards = []

    def __getattr__(self, name):
        return getattr(self.base, name)

    def step(self, a):
        res = self.base.step(a)
        self.rewards.append(res.reward)
        return res


@pytest.mark.parametrize("kind", ["cartpole", "mountaincar"])
def test_reward_conservation_and_consumption(kind):
    rng = np.random.default_rng(99)
    env = make_env(kind, max_steps=300 if kind == "mountaincar" else None)
    counter = CountingEnv(env.env)
    env.env = counter
    for _ in range(150):
        env.reset(rng)
        score = 0.0
        while True:
            pending = env.pending_interval
            counter.rewards.clear()
            out = env.step(int(rng.integers(env.n_actions)))
            assert out.reward == sum(counter.rewards)
            assert out.dt_consumed == len(counter.rewards) <= pending
            if out.dt_consumed < pending:
                assert out.done
            score += out.reward
            if out.done:
                break
        if kind == "cartpole":
            assert 1 <= score <= 200
        else:
            assert -300 <= score <= 99


def test_config_validation():
    assert IntervalWrapperConfig("cartpole").dt_max == 4
    assert IntervalWrapperConfig("mountaincar").dt_max == 32
    with pytest.raises(DomainError):
        IntervalWrapperConfig("pong")
    with pytest.raises(DomainError):
        IntervalWrapperConfig("cartpole", dt_max=0)
