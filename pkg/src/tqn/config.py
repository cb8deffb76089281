"""Run configuration: sectioned TOML files, command-line overrides, defaults.

A config file has up to three tables, ``[env]``, ``[agent]`` and ``[run]``;
every key is optional and falls back to the defaults below (the classic
control hyperparameters).  Flags override file values.
"""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .agent import AgentConfig, EpsilonSchedule
from .core import TemporalDiscountSpec
from .envs import DEFAULT_DT_MAX, ENVIRONMENTS, IntervalWrapperConfig
from .errors import DomainError, UsageError
from .harness import EPISODE_CAPS, TrainConfig

ARCHITECTURES = {"small": [32, 16, 8], "medium": [64, 32, 16], "large": [128, 64, 32]}

# Temporal discount used when a variant needs one and the config gives none:
# tau spans the substep cap of an episode, b = 0.5.
DEFAULT_DISCOUNT = {"cartpole": (200.0, 0.5), "mountaincar": (200.0, 0.5)}

DEFAULTS = {
    "env": {
        "kind": "cartpole",
        "dt_max": None,
        "max_steps": None,
    },
    "agent": {
        "variant": "dqn",
        "double": False,
        "dueling": False,
        "per": False,
        "gamma": 0.99,
        "tau": None,
        "b": None,
        "epsilon_initial": 1.0,
        "epsilon_final": 0.001,
        "epsilon_final_iteration": 6904,
        "soft_update": 0.2,
        "history": 3,
        "architecture": "medium",
        "hidden": None,
        "lr": 0.01,
        "batch_size": 32,
        "replay_capacity": 50_000,
        "replay_start": 5_000,
    },
    "run": {
        "seeds": [0],
        "episode_cap": None,
        "output_dir": "runs",
        "log_interval": 1000,
        "eval_episodes": 100,
    },
}

TYPES = {
    "env": {"kind": str, "dt_max": int, "max_steps": int},
    "agent": {
        "variant": str, "double": bool, "dueling": bool, "per": bool, "gamma": float, "tau": float,
        "b": float, "epsilon_initial": float, "epsilon_final": float, "epsilon_final_iteration": int,
        "soft_update": float, "history": int, "architecture": str, "hidden": list, "lr": float,
        "batch_size": int, "replay_capacity": int, "replay_start": int,
    },
    "run": {"seeds": list, "episode_cap": int, "output_dir": str, "log_interval": int, "eval_episodes": int},
}

# Keys that describe where/how often a run happens rather than what it is.
UNHASHED = {("run", "seeds"), ("run", "output_dir")}


class ConfigError(UsageError):
    """Invalid configuration; the message names the offending key path."""


def _coerce(section: str, key: str, value):
    path = f"{section}.{key}"
    want = TYPES[section][key]
    if value is None:
        return None
    if want is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if want is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if want is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if want is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if want is list:
        if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{path}: expected a list of integers, got {value!r}")
        return list(value)
    raise AssertionError(path)


def parse_value(text: str):
    """Parse a command-line ``key=value`` right-hand side as a TOML value."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


@dataclass(frozen=True)
class RunConfig:
    env: dict
    agent: dict
    run: dict

    def as_dict(self) -> dict:
        return {"env": dict(self.env), "agent": dict(self.agent), "run": dict(self.run)}

    @property
    def config_hash(self) -> str:
        d = self.as_dict()
        for section, key in UNHASHED:
            d[section].pop(key, None)
        raw = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(raw.encode()).hexdigest()[:12]

    def env_config(self) -> IntervalWrapperConfig:
        e = self.env
        return IntervalWrapperConfig(e["kind"], e["dt_max"], e["max_steps"])

    def agent_config(self) -> AgentConfig:
        a = self.agent
        spec = TemporalDiscountSpec(a["tau"], a["b"]) if a["tau"] is not None else None
        return AgentConfig(
            variant=a["variant"], double=a["double"], dueling=a["dueling"], per=a["per"], gamma=a["gamma"],
            discount=spec,
            epsilon=EpsilonSchedule(a["epsilon_initial"], a["epsilon_final"], a["epsilon_final_iteration"]),
            soft_update=a["soft_update"], history=a["history"], hidden=tuple(a["hidden"]), lr=a["lr"],
            batch_size=a["batch_size"], replay_capacity=a["replay_capacity"], replay_start=a["replay_start"],
        )

    def train_config(self) -> TrainConfig:
        r = self.run
        return TrainConfig(self.env_config(), self.agent_config(), r["episode_cap"], r["eval_episodes"],
                           r["log_interval"], self.config_hash)

    def to_toml(self) -> str:
        lines = []
        for section, values in self.as_dict().items():
            lines.append(f"[{section}]")
            for key, value in values.items():
                if value is None:
                    continue
                lines.append(f"{key} = {json.dumps(value)}")
            lines.append("")
        return "\n".join(lines)


def _validate(merged: dict) -> RunConfig:
    env, agent, run = merged["env"], merged["agent"], merged["run"]
    kind = env["kind"]
    if kind not in ENVIRONMENTS:
        raise ConfigError(f"env.kind: unknown environment {kind!r}; choose from {sorted(ENVIRONMENTS)}")
    if env["dt_max"] is None:
        env["dt_max"] = DEFAULT_DT_MAX[kind]
    if env["dt_max"] < 1:
        raise ConfigError("env.dt_max: must be >= 1")
    if env["max_steps"] is not None and env["max_steps"] < 1:
        raise ConfigError("env.max_steps: must be >= 1")

    if agent["hidden"] is None:
        if agent["architecture"] not in ARCHITECTURES:
            raise ConfigError(f"agent.architecture: choose from {sorted(ARCHITECTURES)}")
        agent["hidden"] = list(ARCHITECTURES[agent["architecture"]])
    else:
        named = [k for k, v in ARCHITECTURES.items() if v == agent["hidden"]]
        agent["architecture"] = named[0] if named else "custom"
    if any(h < 1 for h in agent["hidden"]):
        raise ConfigError("agent.hidden: layer widths must be >= 1")
    needs_spec = agent["variant"] in ("tdiscount", "tqn")
    if needs_spec or agent["tau"] is not None or agent["b"] is not None:
        tau0, b0 = DEFAULT_DISCOUNT[kind]
        agent["tau"] = tau0 if agent["tau"] is None else agent["tau"]
        agent["b"] = b0 if agent["b"] is None else agent["b"]
    try:
        if agent["tau"] is not None:
            TemporalDiscountSpec(agent["tau"], agent["b"])
    except DomainError as exc:
        key = "agent.b" if "belief" in str(exc) else "agent.tau"
        raise ConfigError(f"{key}: {exc}") from None
    for key, lo, hi in [("gamma", 0, 1), ("epsilon_initial", 0, 1), ("epsilon_final", 0, 1), ("soft_update", 0, 1)]:
        if not lo <= agent[key] <= hi:
            raise ConfigError(f"agent.{key}: must lie in [{lo}, {hi}], got {agent[key]}")
    for key in ("history", "batch_size", "replay_capacity"):
        if agent[key] < 1:
            raise ConfigError(f"agent.{key}: must be >= 1")
    if agent["lr"] <= 0:
        raise ConfigError("agent.lr: must be > 0")
    if agent["replay_start"] < 0 or agent["epsilon_final_iteration"] < 0:
        raise ConfigError("agent: replay_start and epsilon_final_iteration must be >= 0")

    if run["episode_cap"] is None:
        run["episode_cap"] = EPISODE_CAPS[kind]
    if run["episode_cap"] < 0 or run["eval_episodes"] < 0 or run["log_interval"] < 1:
        raise ConfigError("run: episode_cap and eval_episodes must be >= 0, log_interval >= 1")
    cfg = RunConfig(env, agent, run)
    try:
        cfg.agent_config()
        cfg.env_config()
    except DomainError as exc:
        raise ConfigError(f"agent: {exc}") from None
    return cfg


def parse_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Resolve defaults <- file <- overrides.

    ``overrides`` maps dotted key paths (``"agent.variant"``) to values.
    """
    merged = copy.deepcopy(DEFAULTS)
    layers = []
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = tomllib.loads(p.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{p}: {exc}") from None
        for section, table in data.items():
            if section not in DEFAULTS:
                raise ConfigError(f"{section}: unknown section (expected env, agent, run)")
            if not isinstance(table, dict):
                raise ConfigError(f"{section}: expected a table")
            for key, value in table.items():
                layers.append((section, key, value))
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if section not in DEFAULTS or not key:
            raise ConfigError(f"{dotted}: unknown key (use section.key)")
        layers.append((section, key, value))
    for section, key, value in layers:
        if key not in DEFAULTS[section]:
            raise ConfigError(f"{section}.{key}: unknown key")
        merged[section][key] = _coerce(section, key, value)
    return _validate(merged)
