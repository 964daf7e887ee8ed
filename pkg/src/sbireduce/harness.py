"""Seeded benchmark sweeps, JSON-lines persistence and baseline comparisons."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .inference import METHODS, InferenceConfig, NdeConfig, run_method
from .metrics import c2st, ed2, loc_disp, mmd2
from .nn_core import TrainConfig
from .tasks import DEFAULT_BUDGETS, get_task

logger = logging.getLogger(__name__)

METRICS = ("mmd2", "c2st", "ed2")
ORACLE = "oracle"  # reference-vs-reference control
OUTPUT_ROOT_ENV = "SBIREDUCE_OUT"
REFERENCE_SEED_OFFSET = 1_000_003


def default_output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "results"))


@dataclass
class ExperimentConfig:
    task: str
    method: str = "regular"
    budgets: Sequence[int] | None = None
    seeds: int | Sequence[int] = 5
    rounds: int = 2
    surrogate_mult: float = 10
    sp_oversample: float = 2
    atoms: int = 10
    n_post: int = 5000
    n_eval: int = 2000  # points per side for every metric
    out: str | None = None
    workers: int = 1
    nde: dict = field(default_factory=dict)  # NdeConfig overrides

    def __post_init__(self):
        get_task(self.task)
        if self.method not in METHODS and self.method != ORACLE:
            raise ValueError(f"unknown method {self.method!r}; choose from {', '.join((*METHODS, ORACLE))}")
        if self.budgets is None:
            if self.task not in DEFAULT_BUDGETS:
                raise ValueError(f"no default budget grid for task {self.task!r}; pass budgets")
            self.budgets = list(DEFAULT_BUDGETS[self.task])
        self.budgets = [int(b) for b in self.budgets]
        if not self.budgets or any(b <= 0 for b in self.budgets):
            raise ValueError("budgets must be positive")
        if list(self.budgets) != sorted(self.budgets):
            raise ValueError("budgets must be sorted ascending")
        if isinstance(self.seeds, int):
            if self.seeds < 1:
                raise ValueError("need at least one seed")
            self.seeds = list(range(self.seeds))
        self.seeds = [int(s) for s in self.seeds]
        if not self.seeds:
            raise ValueError("need at least one seed")

    @property
    def seed_list(self) -> list[int]:
        return list(self.seeds)  # type: ignore[arg-type]

    def inference_config(self, budget: int, seed: int) -> InferenceConfig:
        nde_kw = dict(self.nde)
        if "train" in nde_kw and isinstance(nde_kw["train"], dict):
            nde_kw["train"] = TrainConfig(**nde_kw["train"])
        if "hidden" in nde_kw:
            nde_kw["hidden"] = tuple(nde_kw["hidden"])
        return InferenceConfig(
            task=self.task,
            budget=budget,
            method=self.method,
            rounds=self.rounds,
            surrogate_mult=self.surrogate_mult,
            sp_oversample=self.sp_oversample,
            atoms=self.atoms,
            nde=NdeConfig(**nde_kw),
            seed=seed,
            n_post=self.n_post,
        )

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls(**json.load(fh))


@dataclass
class ResultRecord:
    task: str
    method: str
    budget: int
    seed: int
    mmd2: float | None
    c2st: float | None
    ed2: float | None
    loc_disp: dict | None
    simulator_calls: int
    wall_time: float
    n_eval: int
    status: str = "ok"
    diagnostics: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_json(self) -> str:
        return json.dumps(asdict(self), default=_json_default, sort_keys=False)

    @classmethod
    def from_dict(cls, d: dict) -> "ResultRecord":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_records(records: Iterable[ResultRecord], path, append: bool = True) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a" if append else "w") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")
            fh.flush()


def read_records(paths) -> list[ResultRecord]:
    if isinstance(paths, (str, Path)):
        paths = [paths]
    out = []
    for p in paths:
        p = Path(p)
        files = sorted(p.glob("*.jsonl")) if p.is_dir() else [p]
        for f in files:
            with open(f) as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        out.append(ResultRecord.from_dict(json.loads(line)))
    return out


def evaluate(samples, reference, seed: int, n_eval: int) -> dict:
    a = np.asarray(samples)[:n_eval]
    b = np.asarray(reference)[:n_eval]
    return {"mmd2": mmd2(a, b), "c2st": c2st(a, b, seed=seed), "ed2": ed2(a, b)}


def run_single(cfg: ExperimentConfig, budget: int, seed: int) -> ResultRecord:
    """One (budget, seed) cell; failures come back as ``status="failed"`` records."""
    task = get_task(cfg.task)
    t0 = time.perf_counter()
    try:
        reference = _reference(cfg.task, cfg.n_eval, REFERENCE_SEED_OFFSET + seed)
        if cfg.method == ORACLE:
            samples = _reference(cfg.task, cfg.n_eval, 2 * REFERENCE_SEED_OFFSET + seed)
            calls, diag = 0, {}
        else:
            res = run_method(cfg.inference_config(budget, seed))
            samples, calls, diag = res.samples, res.simulator_calls, res.diagnostics
        metrics = evaluate(samples, reference, seed, cfg.n_eval)
        ld = None
        if task.theta_true is not None:
            ld = loc_disp(samples, task.theta_true, task.prior_range).as_dict()
        return ResultRecord(
            task=cfg.task,
            method=cfg.method,
            budget=budget,
            seed=seed,
            loc_disp=ld,
            simulator_calls=calls,
            wall_time=time.perf_counter() - t0,
            n_eval=cfg.n_eval,
            diagnostics=_plain(diag),
            **metrics,
        )
    except Exception as err:  # noqa: BLE001 - a failed cell must not abort the sweep
        logger.warning("run failed (%s, %s, budget=%d, seed=%d): %s", cfg.task, cfg.method, budget, seed, err)
        return ResultRecord(
            task=cfg.task,
            method=cfg.method,
            budget=budget,
            seed=seed,
            mmd2=None,
            c2st=None,
            ed2=None,
            loc_disp=None,
            simulator_calls=0,
            wall_time=time.perf_counter() - t0,
            n_eval=cfg.n_eval,
            status="failed",
            diagnostics={"error": f"{type(err).__name__}: {err}", "traceback": traceback.format_exc(limit=3)},
        )


def _reference(task: str, n: int, seed: int) -> np.ndarray:
    from .tasks import reference_posterior_sample

    return reference_posterior_sample(task, n, seed)


def _plain(obj):
    return json.loads(json.dumps(obj, default=_json_default))


def records_path(cfg: ExperimentConfig) -> Path:
    root = Path(cfg.out) if cfg.out else default_output_root()
    return root / f"{cfg.task}__{cfg.method}.jsonl"


def run_experiment(cfg: ExperimentConfig, path=None) -> list[ResultRecord]:
    """Run every (budget, seed) cell, appending each record to ``path`` as it finishes."""
    path = Path(path) if path is not None else records_path(cfg)
    cells = [(b, s) for b in cfg.budgets for s in cfg.seed_list]
    records = []
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(run_single, cfg, b, s) for b, s in cells]
            for fut in futures:  # single appender, deterministic order
                rec = fut.result()
                write_records([rec], path)
                records.append(rec)
    else:
        for b, s in cells:
            rec = run_single(cfg, b, s)
            write_records([rec], path)
            records.append(rec)
            logger.info("%s %s budget=%d seed=%d c2st=%s", rec.task, rec.method, b, s, rec.c2st)
    return records


# ---- aggregation --------------------------------------------------------


@dataclass
class MetricComparison:
    baseline_mean: float
    baseline_sd: float
    baseline_median: float
    baseline_iqr: float
    candidate_mean: float
    candidate_sd: float
    candidate_median: float
    candidate_iqr: float
    mean_reduction: float
    sd_reduction: float
    median_reduction: float
    iqr_reduction: float
    good_bad_ratio: float


@dataclass
class ComparisonSummary:
    task: str
    budget: int
    method: str
    baseline: str
    n_pairs: int
    metrics: dict[str, MetricComparison]
    verdict: int  # improved cells among {mean, SD, ratio} x metrics
    verdict_median: int  # same with {median, IQR, ratio}
    diagnostics: dict = field(default_factory=dict)

    @property
    def better(self) -> bool:
        return self.verdict >= 5

    def to_dict(self) -> dict:
        return asdict(self)


def _describe(v: np.ndarray):
    q25, q75 = np.quantile(v, [0.25, 0.75], method="linear")
    sd = float(np.std(v, ddof=1)) if len(v) > 1 else 0.0
    return float(np.mean(v)), sd, float(np.median(v)), float(q75 - q25)


def compare_metric(baseline: Sequence[float], candidate: Sequence[float]) -> MetricComparison:
    """Reductions are baseline minus candidate (positive = candidate better).

    The good:bad ratio counts pairs where the candidate is strictly lower; ties
    count against the candidate.
    """
    b = np.asarray(baseline, dtype=float)
    c = np.asarray(candidate, dtype=float)
    bm, bs, bmed, biqr = _describe(b)
    cm, cs, cmed, ciqr = _describe(c)
    return MetricComparison(
        baseline_mean=bm,
        baseline_sd=bs,
        baseline_median=bmed,
        baseline_iqr=biqr,
        candidate_mean=cm,
        candidate_sd=cs,
        candidate_median=cmed,
        candidate_iqr=ciqr,
        mean_reduction=bm - cm,
        sd_reduction=bs - cs,
        median_reduction=bmed - cmed,
        iqr_reduction=biqr - ciqr,
        good_bad_ratio=float(np.mean(c < b)),
    )


TIE_RTOL = 1e-9


def _improved(reduction: float, scale: float) -> bool:
    """Strictly positive reduction; float round-off around zero counts as a tie."""
    return reduction > TIE_RTOL * max(abs(scale), 1e-12)


def _pair(base: list[ResultRecord], cand: list[ResultRecord], diag: dict):
    bmap = {r.seed: r for r in base}
    cmap = {r.seed: r for r in cand}
    common = sorted(set(bmap) & set(cmap))
    if len(common) == len(bmap) == len(cmap):
        return [(bmap[s], cmap[s]) for s in common]
    logger.warning("unpaired seeds; pairing by seed index")
    diag["paired_by_index"] = True
    bs = sorted(base, key=lambda r: r.seed)
    cs = sorted(cand, key=lambda r: r.seed)
    return list(zip(bs, cs))


def aggregate(records: Iterable[ResultRecord], baseline_method: str = "regular") -> list[ComparisonSummary]:
    """One summary per (task, budget, candidate method) against ``baseline_method``."""
    records = list(records)
    groups: dict[tuple, list[ResultRecord]] = {}
    failed: dict[tuple, int] = {}
    for r in records:
        key = (r.task, r.budget, r.method)
        if not r.ok:
            failed[key] = failed.get(key, 0) + 1
            continue
        groups.setdefault(key, []).append(r)
    out = []
    for (task, budget, method) in sorted(groups):
        if method == baseline_method:
            continue
        base = groups.get((task, budget, baseline_method))
        if not base:
            continue
        diag = {
            "failed_baseline": failed.get((task, budget, baseline_method), 0),
            "failed_candidate": failed.get((task, budget, method), 0),
        }
        pairs = _pair(base, groups[(task, budget, method)], diag)
        if not pairs:
            continue
        metrics = {
            m: compare_metric([getattr(b, m) for b, _ in pairs], [getattr(c, m) for _, c in pairs])
            for m in METRICS
        }
        verdict = sum(
            _improved(mc.mean_reduction, mc.baseline_mean)
            + _improved(mc.sd_reduction, mc.baseline_sd)
            + (mc.good_bad_ratio > 0.5)
            for mc in metrics.values()
        )
        verdict_med = sum(
            _improved(mc.median_reduction, mc.baseline_median)
            + _improved(mc.iqr_reduction, mc.baseline_iqr)
            + (mc.good_bad_ratio > 0.5)
            for mc in metrics.values()
        )
        out.append(
            ComparisonSummary(
                task=task,
                budget=budget,
                method=method,
                baseline=baseline_method,
                n_pairs=len(pairs),
                metrics=metrics,
                verdict=int(verdict),
                verdict_median=int(verdict_med),
                diagnostics=diag,
            )
        )
    return out


METRIC_LABELS = {"mmd2": "MMD", "c2st": "C2ST", "ed2": "ED"}
VARIANTS = {
    "mean": (("mean_reduction", "Mean Reduction"), ("sd_reduction", "SD Reduction")),
    "median": (("median_reduction", "Median Reduction"), ("iqr_reduction", "IQR Reduction")),
}


def table_rows(summaries: Sequence[ComparisonSummary], variant: str = "mean") -> list[dict]:
    """Across-budget averages per (task, method): two reduction blocks and good:bad, per metric."""
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {tuple(VARIANTS)}")
    (loc_key, _), (spread_key, _) = VARIANTS[variant]
    by: dict[tuple, list[ComparisonSummary]] = {}
    for s in summaries:
        by.setdefault((s.task, s.method), []).append(s)
    rows = []
    for (task, method), group in by.items():
        row = {"task": task, "method": method, "baseline": group[0].baseline, "n_budgets": len(group)}
        for key in (loc_key, spread_key, "good_bad_ratio"):
            for m in METRICS:
                row[f"{key}_{m}"] = float(np.mean([getattr(s.metrics[m], key) for s in group]))
        good = sum(s.verdict >= 5 for s in group) if variant == "mean" else sum(s.verdict_median >= 5 for s in group)
        row["good_budgets"] = good
        rows.append(row)
    return rows


def table_columns(variant: str = "mean") -> list[str]:
    (loc_key, _), (spread_key, _) = VARIANTS[variant]
    cols = ["task", "method", "baseline", "n_budgets"]
    for key in (loc_key, spread_key, "good_bad_ratio"):
        cols += [f"{key}_{m}" for m in METRICS]
    return cols + ["good_budgets"]


def render_table(summaries: Sequence[ComparisonSummary], variant: str = "mean", digits: int = 4) -> str:
    """Plain-text table: Problem | 3 x loc-reduction | 3 x spread-reduction | 3 x good:bad."""
    (loc_key, loc_label), (spread_key, spread_label) = VARIANTS[variant]
    rows = table_rows(summaries, variant)
    head1 = f"{'Problem':<24}| {loc_label:^32} | {spread_label:^32} | {'Good:Bad Ratio':^32}"
    labels = "  ".join(f"{METRIC_LABELS[m]:>9}" for m in METRICS)
    head2 = f"{'':<24}| {labels:^32} | {labels:^32} | {labels:^32}"
    lines = [head1, head2, "-" * len(head1)]
    for row in rows:
        blocks = []
        for key in (loc_key, spread_key, "good_bad_ratio"):
            blocks.append("  ".join(f"{row[f'{key}_{m}']:>9.{digits}f}" for m in METRICS))
        name = f"{row['task']} ({row['method']})"
        lines.append(f"{name:<24}| " + " | ".join(f"{b:^32}" for b in blocks))
    return "\n".join(lines)


def summaries_to_csv(summaries: Sequence[ComparisonSummary]) -> str:
    buf = io.StringIO()
    cols = ["task", "budget", "method", "baseline", "n_pairs", "verdict", "verdict_median"]
    stat_keys = [f.name for f in fields(MetricComparison)]
    metric_cols = [f"{m}_{k}" for m in METRICS for k in stat_keys]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols + metric_cols)
    for s in summaries:
        w.writerow(
            [getattr(s, c) for c in cols]
            + [repr(float(getattr(s.metrics[m], k))) for m in METRICS for k in stat_keys]
        )
    return buf.getvalue()


def table_to_csv(summaries: Sequence[ComparisonSummary], variant: str = "mean") -> str:
    buf = io.StringIO()
    cols = table_columns(variant)
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for row in table_rows(summaries, variant):
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def is_finite_record(rec: ResultRecord) -> bool:
    return rec.ok and all(getattr(rec, m) is not None and math.isfinite(getattr(rec, m)) for m in METRICS)
