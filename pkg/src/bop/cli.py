"""Command-line entry point: ``bop train|eval|sweep|plot-data|verify``."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from . import checkpoint
from .agent import Trainer
from .config import SELECTION_MODES, ConfigError, RunConfig, apply_overrides, format_config, \
    load_config
from .diffcore import ContractError

# sweep axis aliases -> config field
AXES = {
    "K": "heads", "k": "heads", "heads": "heads",
    "schedule": "update_schedule", "update_schedule": "update_schedule",
    "selection": "test_selection", "test_selection": "test_selection",
    "targets": "shared_targets", "shared_targets": "shared_targets",
    "beta": "curiosity_beta", "curiosity_beta": "curiosity_beta",
}


def _parse_set(values) -> list[tuple[str, str]]:
    pairs = []
    for item in values or []:
        if "=" not in item:
            raise ConfigError(item, "expected key=value")
        key, value = item.split("=", 1)
        pairs.append((key, value))
    return pairs


def build_config(args) -> RunConfig:
    """Config file, then ``--set`` pairs, then ``BOP_SEED``, then ``--seed``/``--k``."""
    cfg = load_config(args.config) if args.config else RunConfig()
    cfg = apply_overrides(cfg, _parse_set(args.set))
    if os.environ.get("BOP_SEED"):
        cfg = apply_overrides(cfg, [("seed", os.environ["BOP_SEED"])])
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.k is not None:
        cfg = cfg.replace(heads=args.k)
    return cfg.validate()


def default_run_name(cfg: RunConfig) -> str:
    env = cfg.env.replace(":", "")
    return f"{env}-k{cfg.heads}-s{cfg.seed}-{cfg.digest()[:8]}"


def train_run(cfg: RunConfig, run_dir: Path, iterations: int | None = None,
              quiet: bool = False) -> Path:
    """Train to ``total_env_steps`` (or ``iterations``) inside ``run_dir``."""
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(format_config(cfg))
    trainer = Trainer(cfg)
    with open(run_dir / "metrics.jsonl", "w", encoding="utf-8") as fh:
        while trainer.env_steps < cfg.total_env_steps:
            if iterations is not None and trainer.iteration >= iterations:
                break
            m = trainer.train_iteration()
            fh.write(json.dumps(m, sort_keys=True) + "\n")
            fh.flush()
            if cfg.checkpoint_every and trainer.iteration % cfg.checkpoint_every == 0:
                checkpoint.save(trainer, run_dir / "checkpoints" / f"iter{trainer.iteration:06d}")
            if not quiet:
                ev = "" if m["eval_return"] is None else f" eval {m['eval_return']:.3f}"
                mr = "" if m["mean_return"] is None else f" return {m['mean_return']:.3f}"
                print(f"iter {m['iteration']} steps {m['env_steps']}{mr}{ev}"
                      f" div {m['diversity_l1']:.3f}", flush=True)
    checkpoint.save(trainer, run_dir / "checkpoints" / "final")
    return run_dir


def cmd_train(args) -> int:
    cfg = build_config(args)
    run_dir = Path(args.out) if args.out else Path(args.runs) / default_run_name(cfg)
    train_run(cfg, run_dir, args.iterations, args.quiet)
    print(run_dir)
    return 0


def cmd_eval(args) -> int:
    trainer = checkpoint.load(args.checkpoint)
    summary = trainer.evaluate(args.mode, args.episodes)
    summary["mode"] = args.mode
    print(json.dumps(summary))
    return 0


def cmd_sweep(args) -> int:
    if args.axis not in AXES:
        raise ConfigError("axis", f"must be one of {', '.join(sorted(set(AXES)))}")
    field = AXES[args.axis]
    base = build_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = []
    for value in [v.strip() for v in args.values.split(",") if v.strip()]:
        for seed in seeds:
            cfg = apply_overrides(base, [(field, value), ("seed", str(seed))]).validate()
            run_dir = out / f"{field}={value}" / f"seed{seed}"
            train_run(cfg, run_dir, args.iterations, quiet=True)
            for m in read_metrics(run_dir / "metrics.jsonl"):
                rows.append({"axis": field, "value": value, "seed": seed,
                             "iteration": m["iteration"], "env_steps": m["env_steps"],
                             "mean_return": m["mean_return"], "eval_return": m["eval_return"],
                             "diversity_l1": m["diversity_l1"]})
            print(f"{field}={value} seed={seed} done", flush=True)
    with open(out / "curves.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["axis", "value", "seed", "iteration", "env_steps",
                                                "mean_return", "eval_return", "diversity_l1"])
        writer.writeheader()
        writer.writerows(rows)
    print(out / "curves.csv")
    return 0


def read_metrics(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def tidy_rows(metrics: list[dict]):
    """Yield ``(iteration, metric, head, value)``; scalar metrics get an empty head."""
    for m in metrics:
        it = m["iteration"]
        for key in sorted(m):
            value = m[key]
            if key == "iteration" or value is None:
                continue
            if isinstance(value, list):
                for head, v in enumerate(value):
                    if v is not None:
                        yield it, key, head, v
            else:
                yield it, key, "", value


def cmd_plot_data(args) -> int:
    path = Path(args.run)
    if path.is_dir():
        path = path / "metrics.jsonl"
    out = open(args.output, "w", newline="", encoding="utf-8") if args.output else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(["iteration", "metric", "head", "value"])
        writer.writerows(tidy_rows(read_metrics(path)))
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_verify(args) -> int:
    from .verify import run_all
    ok = True
    for r in run_all():
        ok &= r.passed
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail} ({r.seconds:.1f}s)")
    return 0 if ok else 1


def _add_config_args(p) -> None:
    p.add_argument("config", nargs="?", help="key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--seed", type=int)
    p.add_argument("--k", type=int, help="number of heads")
    p.add_argument("--iterations", type=int, help="stop after this many iterations")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bop", description="Bag of Policies trainer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one run")
    _add_config_args(p)
    p.add_argument("--out", help="run directory (default: RUNS/<derived name>)")
    p.add_argument("--runs", default="runs")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--mode", choices=SELECTION_MODES, default="average-then-argmax")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train one run per axis value and seed")
    _add_config_args(p)
    p.add_argument("--axis", required=True, help="K, schedule, selection, targets or beta")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--seeds", default="0")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plot-data", help="metrics.jsonl -> tidy CSV")
    p.add_argument("run", help="run directory or metrics.jsonl")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_plot_data)

    p = sub.add_parser("verify", help="run the oracle self-check battery")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"bop: config error: {e}", file=sys.stderr)
        return 2
    except (ContractError, FileNotFoundError) as e:
        print(f"bop: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
