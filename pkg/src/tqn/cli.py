"""Command-line entry point.

Subcommands::

    tqn train          --config FILE [--seeds N | --seed-list 0,1,2] [overrides]
    tqn eval           --checkpoint FILE [--config FILE] [--episodes N] [--seed S]
    tqn gen-offline    --config FILE --behavior random|epsilon-greedy [--checkpoint FILE] ...
    tqn train-offline  --config FILE --dataset FILE [--iterations N] [--seed S]
    tqn curve          --dataset FILE --checkpoint FILE [--thresholds 0,0.1,...]

Exit status: 0 on success, 1 for usage/config errors, 2 for runtime or
training failures.  ``TQN_OUTPUT_ROOT`` relocates relative output
directories.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, parse_config, parse_value
from .errors import DomainError, TrainingError, UsageError
from .harness import (
    SOLVE_WINDOW,
    agreement_outcome_curve,
    evaluate_policy,
    evaluate_random,
    generate_offline_dataset,
    load_dataset,
    train_offline,
    train_online,
)

log = logging.getLogger("tqn")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
OUTPUT_ROOT_ENV = "TQN_OUTPUT_ROOT"


def output_dir(cfg: RunConfig, override: str | None = None) -> Path:
    out = Path(override or cfg.run["output_dir"])
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not out.is_absolute():
        out = Path(root) / out
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config_overrides(args) -> dict:
    o = {}
    simple = {
        "env": "env.kind", "dt_max": "env.dt_max", "variant": "agent.variant", "gamma": "agent.gamma",
        "tau": "agent.tau", "belief": "agent.b", "lr": "agent.lr", "history": "agent.history",
        "architecture": "agent.architecture", "episode_cap": "run.episode_cap",
        "eval_episodes": "run.eval_episodes", "output_dir": "run.output_dir",
    }
    for attr, key in simple.items():
        value = getattr(args, attr, None)
        if value is not None:
            o[key] = value
    for flag in ("double", "dueling", "per"):
        if getattr(args, flag, False):
            o[f"agent.{flag}"] = True
    if getattr(args, "hidden", None):
        o["agent.hidden"] = [int(x) for x in args.hidden.split(",")]
    if getattr(args, "seeds", None) is not None:
        o["run.seeds"] = list(range(args.seeds))
    if getattr(args, "seed_list", None):
        o["run.seeds"] = [int(x) for x in args.seed_list.split(",")]
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        o[key.strip()] = parse_value(value.strip())
    return o


def load_run_config(args) -> RunConfig:
    return parse_config(args.config, _config_overrides(args))


def _echo_config(cfg: RunConfig, out: Path) -> Path:
    path = out / f"config_{cfg.config_hash}.toml"
    path.write_text(cfg.to_toml(), encoding="utf-8")
    return path


def _train_one(cfg: RunConfig, seed: int, out: Path) -> dict:
    h = cfg.config_hash
    csv_path = out / f"train_{h}_seed{seed}.csv"
    ckpt = out / f"checkpoint_{h}_seed{seed}.ckpt"
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        summary = train_online(cfg.train_config(), seed, csv_file=fh, checkpoint_path=ckpt)
    if summary.eval_mean is not None:
        with open(out / f"eval_{h}_seed{seed}.csv", "w", encoding="utf-8", newline="") as fh:
            fh.write(f"config_hash,seed,eval_mean,eval_std\n{h},{seed},{summary.eval_mean!r},{summary.eval_std!r}\n")
    data = summary.to_json()
    (out / f"summary_{h}_seed{seed}.json").write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")
    return data


def _mean_sd(xs):
    xs = [float(x) for x in xs if x is not None]
    if not xs:
        return None, None
    return statistics.fmean(xs), (statistics.stdev(xs) if len(xs) > 1 else 0.0)


def aggregate(summaries: list[dict], cfg: RunConfig) -> dict:
    solved = [s["solved_at"] for s in summaries]
    solved_mean, solved_sd = _mean_sd(solved)
    score_mean, score_sd = _mean_sd([s["eval_mean"] for s in summaries])
    return {
        "config_hash": cfg.config_hash,
        "method": cfg.agent_config().label,
        "env": cfg.env["kind"],
        "dt_max": cfg.env["dt_max"],
        "seeds": [s["seed"] for s in summaries],
        "solved_seeds": sum(x is not None for x in solved),
        "solved_episode_mean": solved_mean,
        "solved_episode_sd": solved_sd,
        "score_mean": score_mean,
        "score_sd": score_sd,
        "partial": any(s["aborted"] for s in summaries),
    }


def learning_curve_rows(summaries: list[dict]):
    """Trailing-100 mean per episode, averaged over seeds still running."""
    curves = []
    for s in summaries:
        sc = np.asarray(s["scores"], dtype=float)
        if sc.size == 0:
            continue
        csum = np.concatenate([[0.0], np.cumsum(sc)])
        n = np.arange(1, sc.size + 1)
        lo = np.maximum(n - SOLVE_WINDOW, 0)
        trailing = (csum[n] - csum[lo]) / (n - lo)
        curves.append(trailing)
    if not curves:
        return []
    longest = max(len(c) for c in curves)
    rows = []
    for ep in range(longest):
        vals = [c[ep] for c in curves if ep < len(c)]
        rows.append((ep, float(np.mean(vals)), len(vals)))
    return rows


def cmd_train(args) -> int:
    cfg = load_run_config(args)
    out = output_dir(cfg)
    _echo_config(cfg, out)
    seeds = cfg.run["seeds"]
    workers = max(1, int(args.workers or 1))
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            summaries = list(pool.map(_train_one, [cfg] * len(seeds), seeds, [out] * len(seeds)))
    else:
        summaries = [_train_one(cfg, s, out) for s in seeds]
    agg = aggregate(summaries, cfg)
    h = cfg.config_hash
    (out / f"aggregate_{h}.json").write_text(json.dumps(agg, indent=2) + "\n", encoding="utf-8")
    with open(out / f"learning_curve_{h}.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("episode", "trailing_mean", "seeds"))
        for ep, m, n in learning_curve_rows(summaries):
            w.writerow((ep, repr(m), n))
    for s in summaries:
        print(f"seed {s['seed']}: episodes={s['episodes']} solved_at={s['solved_at']} eval_mean={s['eval_mean']}")
    print(json.dumps(agg))
    if agg["partial"]:
        print("warning: at least one seed aborted; aggregate is partial", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise UsageError(f"checkpoint not found: {ckpt}")
    cfg = load_run_config(args)
    if args.episodes < 1:
        raise UsageError("--episodes must be >= 1")
    mean, std, scores = evaluate_policy(ckpt, cfg.env_config(), args.episodes, args.seed)
    out = output_dir(cfg)
    path = out / f"eval_{ckpt.stem}_seed{args.seed}.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("episode", "score"))
        for i, s in enumerate(scores):
            w.writerow((i, repr(s)))
    print(json.dumps({"checkpoint": str(ckpt), "episodes": len(scores), "mean": mean, "std": std}))
    return EXIT_OK


def cmd_gen_offline(args) -> int:
    cfg = load_run_config(args)
    out = output_dir(cfg)
    path = Path(args.out) if args.out else out / f"offline_{cfg.env['kind']}_{args.behavior}_seed{args.seed}.ndjson"
    if args.checkpoint and not Path(args.checkpoint).is_file():
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    logs = generate_offline_dataset(cfg.env_config(), args.behavior, args.episodes, args.seed, path,
                                    checkpoint=args.checkpoint, epsilon=args.epsilon)
    bad = sum(ep.bad for ep in logs)
    print(json.dumps({"dataset": str(path), "episodes": len(logs), "bad_outcomes": bad}))
    return EXIT_OK


def cmd_train_offline(args) -> int:
    cfg = load_run_config(args)
    if not Path(args.dataset).is_file():
        raise UsageError(f"dataset not found: {args.dataset}")
    out = output_dir(cfg)
    h = cfg.config_hash
    ckpt = out / f"offline_checkpoint_{h}_seed{args.seed}.ckpt"
    with open(out / f"offline_diagnostics_{h}_seed{args.seed}.csv", "w", encoding="utf-8", newline="") as fh:
        _, rows = train_offline(cfg.train_config(), args.dataset, args.iterations, args.seed,
                                checkpoint_path=ckpt, diagnostics_file=fh)
    result = {"checkpoint": str(ckpt), "iterations": args.iterations, "log_rows": len(rows)}
    if args.eval_episodes_after:
        mean, std, _ = evaluate_policy(ckpt, cfg.env_config(), args.eval_episodes_after, args.seed + 1)
        rmean, rstd, _ = evaluate_random(cfg.env_config(), args.eval_episodes_after, args.seed + 1)
        result.update(eval_mean=mean, eval_std=std, random_mean=rmean, random_std=rstd)
    print(json.dumps(result))
    return EXIT_OK


def _thresholds(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"thresholds must be comma-separated numbers, got {text!r}") from None
    if not vals:
        raise UsageError("at least one threshold is required")
    return vals


def cmd_curve(args) -> int:
    for p in (args.dataset, args.checkpoint):
        if not Path(p).is_file():
            raise UsageError(f"file not found: {p}")
    thresholds = _thresholds(args.thresholds)
    points = agreement_outcome_curve(load_dataset(args.dataset), args.checkpoint, thresholds)
    out = Path(args.out) if args.out else Path(args.checkpoint).with_name(Path(args.checkpoint).stem + "_curve.csv")
    with open(out, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("threshold", "outcome_rate", "episodes"))
        for p in points:
            w.writerow((repr(p.threshold), repr(p.outcome_rate), p.episodes))
    print(json.dumps({"curve": str(out), "rows": len(points)}))
    return EXIT_OK


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML config file ([env], [agent], [run])")
    p.add_argument("--env", choices=["cartpole", "mountaincar"])
    p.add_argument("--dt-max", type=int)
    p.add_argument("--variant", choices=["dqn", "tstate", "tdiscount", "tqn"])
    p.add_argument("--double", action="store_true")
    p.add_argument("--dueling", action="store_true")
    p.add_argument("--per", action="store_true")
    p.add_argument("--gamma", type=float)
    p.add_argument("--tau", type=float, help="action time window of the temporal discount")
    p.add_argument("--belief", type=float, help="belief b in (0, 1) of the temporal discount")
    p.add_argument("--lr", type=float)
    p.add_argument("--history", type=int)
    p.add_argument("--architecture", choices=["small", "medium", "large"])
    p.add_argument("--hidden", help="comma-separated hidden widths, e.g. 64,32,16")
    p.add_argument("--episode-cap", type=int)
    p.add_argument("--eval-episodes", type=int)
    p.add_argument("--output-dir")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override any config key")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tqn", description="Time-aware Q-networks on irregular-interval control tasks")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="online training over one or more seeds")
    _add_config_flags(p)
    p.add_argument("--seeds", type=int, help="train seeds 0..N-1")
    p.add_argument("--seed-list", help="comma-separated explicit seeds")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gen-offline", help="write an offline NDJSON log from a behaviour policy")
    _add_config_flags(p)
    p.add_argument("--behavior", choices=["random", "epsilon-greedy"], default="random")
    p.add_argument("--checkpoint")
    p.add_argument("--epsilon", type=float, default=0.5)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_offline)

    p = sub.add_parser("train-offline", help="train from an offline log without environment access")
    _add_config_flags(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--iterations", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eval-after", dest="eval_episodes_after", type=int, default=0,
                   help="greedy evaluation episodes after training (touches the environment)")
    p.set_defaults(func=cmd_train_offline)

    p = sub.add_parser("curve", help="agreement-rate vs. bad-outcome-rate table")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--thresholds", default="0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")
    p.add_argument("--out")
    p.set_defaults(func=cmd_curve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
