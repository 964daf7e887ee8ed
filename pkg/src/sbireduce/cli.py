"""Command line entry point: ``sbireduce {run,aggregate,metrics,sp,tasks}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import harness
from .inference import METHODS
from .metrics import c2st, ed2, mmd2
from .support_points import SpConfig, support_points_run
from .tasks import get_task, task_names


class CliError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.replace(";", ",").split(",") if t.strip()]


def _read_csv(path) -> np.ndarray:
    try:
        arr = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError:
        arr = np.loadtxt(path, delimiter=",", ndmin=2, skiprows=1)
    return arr


def _write_csv(arr, dest) -> None:
    np.savetxt(dest, np.atleast_2d(arr), delimiter=",", fmt="%.17g")


def cmd_run(args) -> int:
    if args.config:
        cfg_kw = json.loads(Path(args.config).read_text())
    else:
        cfg_kw = {}
    if args.task:
        cfg_kw["task"] = args.task
    if "task" not in cfg_kw:
        raise CliError("--task is required (or give it in --config)")
    for key, val in (
        ("method", args.method),
        ("budgets", args.budget),
        ("rounds", args.rounds),
        ("surrogate_mult", args.surrogate_mult),
        ("sp_oversample", args.sp_oversample),
        ("atoms", args.atoms),
        ("out", args.out),
        ("n_post", args.n_post),
        ("n_eval", args.n_eval),
        ("workers", args.workers),
    ):
        if val is not None:
            cfg_kw[key] = val
    if args.seed_list is not None:
        cfg_kw["seeds"] = args.seed_list
    elif args.seeds is not None:
        cfg_kw["seeds"] = args.seeds
    cfg = harness.ExperimentConfig(**cfg_kw)
    path = harness.records_path(cfg)
    records = harness.run_experiment(cfg, path)
    n_failed = sum(not r.ok for r in records)
    print(json.dumps({"written": len(records), "failed": n_failed, "path": str(path)}))
    return 0


def cmd_aggregate(args) -> int:
    records = harness.read_records(args.inputs)
    if not records:
        raise CliError("no records found")
    summaries = harness.aggregate(records, args.baseline)
    if args.format == "json":
        text = json.dumps(
            {
                "summaries": [s.to_dict() for s in summaries],
                "table": harness.table_rows(summaries, args.variant),
            },
            indent=2,
        )
    elif args.format == "csv":
        text = harness.summaries_to_csv(summaries) if not args.table else harness.table_to_csv(summaries, args.variant)
    else:
        text = harness.render_table(summaries, args.variant)
    if args.out:
        Path(args.out).write_text(text + ("" if text.endswith("\n") else "\n"))
    else:
        sys.stdout.write(text + ("" if text.endswith("\n") else "\n"))
    return 0


def cmd_metrics(args) -> int:
    a = _read_csv(args.a)
    b = _read_csv(args.b)
    out = {"mmd2": mmd2(a, b), "ed2": ed2(a, b), "c2st": None}
    if min(len(a), len(b)) >= 50:
        out["c2st"] = c2st(a, b, seed=args.seed)
    print(json.dumps(out))
    return 0


def cmd_sp(args) -> int:
    Y = _read_csv(args.input)
    res = support_points_run(Y, SpConfig(n=args.n, tol=args.tol, max_iter=args.max_iter, seed=args.seed))
    if args.out:
        _write_csv(res.points, args.out)
    else:
        _write_csv(res.points, sys.stdout)
    print(
        json.dumps({"n": args.n, "converged": res.converged, "iterations": res.n_iter, "objective": res.objective[-1]}),
        file=sys.stderr,
    )
    return 0


def cmd_tasks(args) -> int:
    if args.action == "list":
        for name in task_names():
            print(name)
    else:
        if not args.name:
            raise CliError("tasks show needs a task name")
        print(json.dumps(get_task(args.name).describe(), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sbireduce", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a seeded benchmark sweep and append JSON-lines records")
    r.add_argument("--task")
    r.add_argument("--method", help=f"one of {', '.join((*METHODS, harness.ORACLE))}")
    r.add_argument("--budget", type=_int_list, help="comma-separated budgets (default: the task's grid)")
    r.add_argument("--seeds", type=int, help="number of seeds, 0..N-1")
    r.add_argument("--seed-list", type=_int_list, help="explicit comma-separated seeds")
    r.add_argument("--rounds", type=int)
    r.add_argument("--surrogate-mult", type=float)
    r.add_argument("--sp-oversample", type=float)
    r.add_argument("--atoms", type=int)
    r.add_argument("--n-post", type=int)
    r.add_argument("--n-eval", type=int)
    r.add_argument("--workers", type=int)
    r.add_argument("--out", help=f"output directory (default ${harness.OUTPUT_ROOT_ENV} or ./results)")
    r.add_argument("--config", help="JSON file with ExperimentConfig fields")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("aggregate", help="compare methods against a baseline")
    a.add_argument("--in", dest="inputs", nargs="+", required=True, help="record files or directories")
    a.add_argument("--baseline", default="regular")
    a.add_argument("--format", choices=("csv", "json", "table"), default="csv")
    a.add_argument("--variant", choices=("mean", "median"), default="mean")
    a.add_argument("--table", action="store_true", help="csv: emit the across-budget table instead of per-budget rows")
    a.add_argument("--out")
    a.set_defaults(func=cmd_aggregate)

    m = sub.add_parser("metrics", help="MMD^2, C2ST and ED^2 between two CSV samples")
    m.add_argument("a")
    m.add_argument("b")
    m.add_argument("--seed", type=int, default=0)
    m.set_defaults(func=cmd_metrics)

    s = sub.add_parser("sp", help="support points of a CSV sample")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--tol", type=float)
    s.add_argument("--max-iter", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sp)

    t = sub.add_parser("tasks", help="list or describe benchmark tasks")
    t.add_argument("action", choices=("list", "show"))
    t.add_argument("name", nargs="?")
    t.set_defaults(func=cmd_tasks)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as err:  # noqa: BLE001
        print(json.dumps({"error": type(err).__name__, "message": str(err).strip("'\"")}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
