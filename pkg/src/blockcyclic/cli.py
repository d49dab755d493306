"""Command-line entry point: ``blockcyclic {simulate,hardcase,prodtest,ingest,grid}``.

Failures print ``{"error": <category>, "message": ...}`` on stderr and exit
with a category-specific nonzero code.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .errors import BlockCyclicError

EXIT_CODES = {"error": 1, "config": 2, "ingestion": 3, "divergence": 4, "contract": 5, "solver": 6, "io": 7}


def _load_config(args):
    from .harness import ExperimentConfig

    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.reps is not None:
        overrides["repetitions"] = args.reps
    if args.out is not None:
        overrides["out"] = args.out
    if args.scale is not None:
        overrides["scale"] = args.scale
    if getattr(args, "jobs", None) is not None:
        overrides["jobs"] = args.jobs
    return dataclasses.replace(config, **overrides) if overrides else config


def cmd_simulate(args) -> int:
    from .harness import build_task, emit_report, grid_search_learning_rate, run_experiment

    config = _load_config(args)
    task = build_task(config)
    if config.lr_grid:
        best, _ = grid_search_learning_rate(config, task=task)
        config = dataclasses.replace(config, learning_rates=best)
    report = run_experiment(config, task)
    out = config.out or "results"
    paths = emit_report(report, out)
    summary = {s: {"final_day_mean": float(report.summary(s)[0][-1])} for s in config.strategies}
    print(json.dumps({"out": str(out), "files": {k: str(v) for k, v in paths.items()},
                      "learning_rates": config.learning_rates, "scores": summary}, indent=2, sort_keys=True))
    return 0


def cmd_grid(args) -> int:
    from .harness import build_task, grid_search_learning_rate, write_json

    config = _load_config(args)
    grid = [float(x) for x in args.grid.split(",")] if args.grid else config.lr_grid
    if not grid:
        from .errors import ConfigError
        raise ConfigError("no learning-rate grid given (use --grid or lr_grid in the config)")
    best, table = grid_search_learning_rate(config, grid, task=build_task(config))
    result = {"best": best, "table": table, "seed": config.seed}
    if config.out:
        write_json(result, Path(config.out) / "grid.json")
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


def cmd_hardcase(args) -> int:
    from .harness import json_default, write_json
    from .hard_instances import HardInstanceConfig, stall_demo

    reports = []
    for K in args.K:
        cfg = HardInstanceConfig(B=args.B, K=K, m=2, n=args.n, variant=args.variant,
                                 rotation_seed=args.rotation_seed)
        reports.append(stall_demo(cfg, iid_seeds=args.reps if args.reps is not None else 10).to_dict())
    if args.out:
        write_json(reports, Path(args.out) / "hardcase.json")
    for r in reports:
        r.pop("span_profile")
    print(json.dumps(reports, indent=2, sort_keys=True, default=json_default))
    return 0


def cmd_prodtest(args) -> int:
    from .harness import write_json
    from .prod import prod_battery

    result = prod_battery(runs=args.reps if args.reps is not None else 1000, horizon=args.T,
                          num_experts=args.experts, loss_bound=args.M,
                          seed=args.seed if args.seed is not None else 0)
    for name in ("anchor", "expert"):
        result[name].pop("regret")
    if args.out:
        write_json(result, Path(args.out) / "prodtest.json")
    print(json.dumps(result, indent=2, sort_keys=True))
    ok = all(result[n]["passed"] == result["runs"] for n in ("anchor", "expert"))
    return 0 if ok else 1


def cmd_ingest(args) -> int:
    from .tasks.sentiment140 import dump_task, ingest_sentiment140
    from .tasks.text import SkewSpec

    spec = SkewSpec.diurnal() if args.skew == "diurnal" else None
    task = ingest_sentiment140(args.csv, spec, split_seed=args.seed if args.seed is not None else 0,
                               K=args.K, vocab_size=args.vocab)
    out = dump_task(task, args.out or "dataset")
    print(json.dumps({"out": str(out), "train": int(task.X_train.shape[0]), "test": int(task.X_test.shape[0]),
                      "skipped": task.info["skipped"], "vocabulary": task.vocabulary_size,
                      "positive_rates": [round(float(r), 4) for r in task.positive_rates()]},
                     indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--reps", type=int, help="repetitions (or runs / i.i.d. seeds)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--config", help="experiment config (JSON, or a run manifest)")
    common.add_argument("--scale", choices=("desk", "full"), help="synthetic task size preset")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="blockcyclic", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="run an experiment config and write CSV reports")
    p.add_argument("--jobs", type=int, help="parallel repetitions")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("grid", parents=[common], help="learning-rate grid search on the validation split")
    p.add_argument("--grid", help="comma-separated step sizes, e.g. 0.25,0.5,1,2")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("hardcase", parents=[common], help="run the stall demonstration on the hard instance")
    p.add_argument("--variant", choices=("lipschitz", "smooth"), default="lipschitz")
    p.add_argument("--K", type=int, nargs="+", default=[2, 4])
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--B", type=float, default=1.0)
    p.add_argument("--rotation-seed", type=int)
    p.set_defaults(func=cmd_hardcase)

    p = sub.add_parser("prodtest", parents=[common], help="random-sequence check of the Prod regret bounds")
    p.add_argument("--T", type=int, default=10_000)
    p.add_argument("--experts", type=int, default=1)
    p.add_argument("--M", type=float, default=1.0)
    p.set_defaults(func=cmd_prodtest)

    p = sub.add_parser("ingest", parents=[common], help="Sentiment140 CSV to canonical dump")
    p.add_argument("csv")
    p.add_argument("--skew", choices=("none", "diurnal"), default="none")
    p.add_argument("--K", type=int, default=10)
    p.add_argument("--vocab", type=int, default=1024)
    p.set_defaults(func=cmd_ingest)
    return parser


def _fail(category: str, message: str) -> int:
    print(json.dumps({"error": category, "message": message}), file=sys.stderr)
    return EXIT_CODES.get(category, 1)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except BlockCyclicError as exc:
        return _fail(exc.category, str(exc))
    except ValueError as exc:
        return _fail("config", str(exc))
    except OSError as exc:
        return _fail("io", str(exc))
