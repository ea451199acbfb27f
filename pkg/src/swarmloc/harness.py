"""Metrics over traces, batch experiments, and CSV/manifest output."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .geometry import vantage_dops
from .simengine import PLANNERS, ScenarioConfig, Trace, run_scenario

log = logging.getLogger(__name__)

DEFAULT_BIN_WIDTH = 0.25
SERIES_COLUMNS = ("distance_m", "mean", "std")
STATS_COLUMNS = ("robot_id", "mean_error_m", "max_error_m")


@dataclass
class MetricSeries:
    x: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.mean = np.asarray(self.mean, dtype=float)
        self.std = np.asarray(self.std, dtype=float)
        if np.any(np.diff(self.x) <= 0):
            raise ValueError("series x must be strictly increasing")
        if np.any(self.std < 0):
            raise ValueError("series band must be >= 0")

    def __len__(self):
        return len(self.x)


@dataclass
class ErrorStats:
    robot_ids: List[int]
    mean_error: np.ndarray
    max_error: np.ndarray

    @property
    def swarm_mean(self) -> float:
        return float(np.mean(self.mean_error))

    @property
    def swarm_max(self) -> float:
        return float(np.mean(self.max_error))


def swarm_distance(trace: Trace) -> np.ndarray:
    """Cumulative metres driven by the whole swarm at each step."""
    return trace.distance.sum(axis=1)


def per_step_dop(trace: Trace) -> np.ndarray:
    """Per-robot DOP from ground truth, averaged over live robots."""
    out = np.empty(trace.n_steps)
    xy = trace.truth[:, :, :2]
    for k in range(trace.n_steps):
        live = trace.alive[k]
        out[k] = vantage_dops(xy[k, live]).mean() if live.any() else np.nan
    return out


def bin_series(distance, values, bin_width: float = DEFAULT_BIN_WIDTH) -> MetricSeries:
    """Within-bin mean and sd of ``values`` keyed by cumulative distance.

    Bins are ``[i*w, (i+1)*w)``; there are ``max(1, ceil(total / w))`` of them
    and the final distance falls into the last one. Empty bins are omitted.
    """
    distance = np.asarray(distance, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(distance) == 0:
        raise ValueError("cannot bin an empty trace")
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    n_bins = max(1, math.ceil(distance[-1] / bin_width - 1e-12))
    idx = np.minimum(np.floor(distance / bin_width).astype(int), n_bins - 1)
    xs, means, stds = [], [], []
    for b in range(n_bins):
        sel = values[(idx == b) & np.isfinite(values)]
        if len(sel) == 0:
            continue
        xs.append(b * bin_width)
        means.append(sel.mean())
        stds.append(sel.std())
    return MetricSeries(xs, means, stds)


def dop_over_distance(trace: Trace, bin_width: float = DEFAULT_BIN_WIDTH) -> MetricSeries:
    if trace.n_steps == 0:
        raise ValueError("empty trace")
    return bin_series(swarm_distance(trace), per_step_dop(trace), bin_width)


def position_errors(trace: Trace) -> np.ndarray:
    """``(steps, robots)`` planar estimate error; NaN where a robot is dead."""
    err = np.linalg.norm(trace.est[:, :, :2] - trace.truth[:, :, :2], axis=2)
    return np.where(trace.alive, err, np.nan)


def position_error_stats(trace: Trace) -> ErrorStats:
    err = position_errors(trace)
    ids, means, maxes = [], [], []
    for i in range(trace.n_robots):
        e = err[:, i]
        e = e[np.isfinite(e)]
        if len(e) == 0:
            continue
        ids.append(i)
        means.append(e.mean())
        maxes.append(e.max())
    return ErrorStats(ids, np.array(means), np.array(maxes))


def aggregate_series(series: Sequence[MetricSeries], bin_width: float = DEFAULT_BIN_WIDTH) -> MetricSeries:
    """Mean and sd across trials of per-trial bin values.

    A bin is averaged over the trials that reached it.
    """
    buckets: Dict[int, List[float]] = {}
    for s in series:
        for x, m in zip(s.x, s.mean):
            buckets.setdefault(int(round(x / bin_width)), []).append(float(m))
    keys = sorted(buckets)
    return MetricSeries(
        [k * bin_width for k in keys],
        [np.mean(buckets[k]) for k in keys],
        [np.std(buckets[k]) for k in keys],
    )


def aggregate_stats(stats: Sequence[ErrorStats]) -> ErrorStats:
    ids = sorted({i for s in stats for i in s.robot_ids})
    means, maxes = [], []
    for i in ids:
        m = [s.mean_error[s.robot_ids.index(i)] for s in stats if i in s.robot_ids]
        x = [s.max_error[s.robot_ids.index(i)] for s in stats if i in s.robot_ids]
        means.append(np.mean(m))
        maxes.append(np.mean(x))
    return ErrorStats(ids, np.array(means), np.array(maxes))


def _fmt(v) -> str:
    return f"{float(v):.9g}"


def emit_csv(data, path) -> Path:
    """Write a :class:`MetricSeries` or :class:`ErrorStats` with a fixed header."""
    path = Path(path)
    if isinstance(data, MetricSeries):
        header = SERIES_COLUMNS
        rows = [(_fmt(x), _fmt(m), _fmt(s)) for x, m, s in zip(data.x, data.mean, data.std)]
    elif isinstance(data, ErrorStats):
        header = STATS_COLUMNS
        rows = [(str(i), _fmt(m), _fmt(x)) for i, m, x in zip(data.robot_ids, data.mean_error, data.max_error)]
    else:
        raise TypeError(f"cannot emit {type(data).__name__} as CSV")
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write CSV {path}: {exc}") from exc
    return path


def read_series_csv(path) -> MetricSeries:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return MetricSeries(
        [float(r["distance_m"]) for r in rows],
        [float(r["mean"]) for r in rows],
        [float(r["std"]) for r in rows],
    )


def read_stats_csv(path) -> ErrorStats:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return ErrorStats(
        [int(r["robot_id"]) for r in rows],
        np.array([float(r["mean_error_m"]) for r in rows]),
        np.array([float(r["max_error_m"]) for r in rows]),
    )


def cost_audit(trace: Trace) -> Dict[str, float]:
    """Check every logged candidate's total against its logged components."""
    n, worst = 0, 0.0
    for p in trace.plans:
        for c in p.get("candidates", ()):
            rebuilt = c["alpha"] * c["c_dop"] + c["beta"] * c["c_goal"] + c["c_collision"]
            worst = max(worst, abs(rebuilt - c["c_total"]))
            n += 1
    return {"candidates": n, "max_abs_error": worst}


# --------------------------------------------------------------------------
# experiments


@dataclass
class ExperimentSpec:
    base: ScenarioConfig
    trials: int = 30
    seeds: Optional[List[int]] = None
    variants: Sequence[str] = PLANNERS
    out_dir: Optional[Path] = None
    bin_width: float = DEFAULT_BIN_WIDTH
    parallel: int = 1
    write_traces: bool = True

    def __post_init__(self):
        if self.seeds is None:
            self.seeds = [self.base.seed + i for i in range(self.trials)]
        self.seeds = [int(s) for s in self.seeds]
        if self.trials < 1 or len(self.seeds) != self.trials:
            raise ValueError("need trials >= 1 and exactly one seed per trial")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        bad = [v for v in self.variants if v not in PLANNERS]
        if bad:
            raise ValueError(f"unknown planner variants {bad}")

    def trial_config(self, variant: str, seed: int) -> ScenarioConfig:
        cfg = self.base.replace(seed=seed, planner_type=variant)
        for r in cfg.robots:
            r.planner = None
        return cfg


@dataclass
class TrialResult:
    variant: str
    seed: int
    trace: Optional[Trace] = None
    dop: Optional[MetricSeries] = None
    errors: Optional[ErrorStats] = None
    error: Optional[str] = None


@dataclass
class ExperimentSummary:
    spec: ExperimentSpec
    trials: List[TrialResult]
    dop: Dict[str, MetricSeries] = field(default_factory=dict)
    errors: Dict[str, ErrorStats] = field(default_factory=dict)
    files: List[Path] = field(default_factory=list)
    manifest: Dict = field(default_factory=dict)

    def results(self, variant: str) -> List[TrialResult]:
        return [t for t in self.trials if t.variant == variant and t.error is None]


def _run_trial(args) -> TrialResult:
    cfg, variant, seed, bin_width = args
    try:
        tr = run_scenario(cfg)
        return TrialResult(variant, seed, tr, dop_over_distance(tr, bin_width), position_error_stats(tr))
    except Exception as exc:  # recorded in the manifest, other trials continue
        log.exception("trial %s seed %d failed", variant, seed)
        return TrialResult(variant, seed, error=f"{type(exc).__name__}: {exc}")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_experiment(spec: ExperimentSpec) -> ExperimentSummary:
    """Run every (variant, seed) trial, aggregate, and write outputs.

    Aggregation always walks trials in (variant, seed) order, so output bytes
    do not depend on ``parallel``.
    """
    jobs = [
        (spec.trial_config(v, s), v, s, spec.bin_width) for v in spec.variants for s in spec.seeds
    ]
    if spec.parallel > 1:
        with ProcessPoolExecutor(max_workers=spec.parallel) as pool:
            results = list(pool.map(_run_trial, jobs))
    else:
        results = [_run_trial(j) for j in jobs]

    summary = ExperimentSummary(spec, results)
    for v in spec.variants:
        ok = summary.results(v)
        if ok:
            summary.dop[v] = aggregate_series([t.dop for t in ok], spec.bin_width)
            summary.errors[v] = aggregate_stats([t.errors for t in ok])
    if spec.out_dir is not None:
        _write_outputs(summary)
    return summary


def _write_outputs(summary: ExperimentSummary) -> None:
    spec = summary.spec
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files: List[Path] = []
    if spec.write_traces:
        (out / "traces").mkdir(exist_ok=True)
        for t in summary.trials:
            if t.trace is not None:
                files.append(t.trace.write(out / "traces" / f"{t.variant}_seed{t.seed}.jsonl"))
    for v in spec.variants:
        if v in summary.dop:
            files.append(emit_csv(summary.dop[v], out / f"{v}_dop_over_distance.csv"))
            files.append(emit_csv(summary.errors[v], out / f"{v}_position_error.csv"))
    files.append(_write_trial_table(summary.trials, out / "trials.csv"))

    manifest = {
        "swarmloc_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config_hash": spec.base.config_hash(),
        "base_config": spec.base.to_dict(),
        "variants": list(spec.variants),
        "seeds": spec.seeds,
        "bin_width": spec.bin_width,
        "trials": [
            {"variant": t.variant, "seed": t.seed, "status": "ok" if t.error is None else "failed",
             **({"error": t.error} if t.error else {})}
            for t in summary.trials
        ],
        "files": {str(p.relative_to(out)): _sha256(p) for p in files},
    }
    mpath = out / "manifest.json"
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    summary.files = files + [mpath]
    summary.manifest = manifest


def _write_trial_table(trials: Sequence[TrialResult], path: Path) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("variant", "seed", "status", "swarm_mean_error_m", "swarm_max_error_m", "mean_dop", "distance_m"))
        for t in trials:
            if t.error is not None:
                w.writerow((t.variant, t.seed, "failed", "", "", "", ""))
                continue
            w.writerow((
                t.variant, t.seed, "ok", _fmt(t.errors.swarm_mean), _fmt(t.errors.swarm_max),
                _fmt(np.nanmean(per_step_dop(t.trace))), _fmt(swarm_distance(t.trace)[-1]),
            ))
    return path


def metrics_from_traces(trace_dir, out_dir, bin_width: float = DEFAULT_BIN_WIDTH) -> List[Path]:
    """Recompute aggregated CSVs from stored ``*.jsonl`` traces, grouped by planner."""
    groups: Dict[str, List[Trace]] = {}
    paths = sorted(Path(trace_dir).glob("*.jsonl"))
    if not paths:
        raise FileNotFoundError(f"no *.jsonl traces in {trace_dir}")
    for p in paths:
        tr = Trace.read(p)
        groups.setdefault(tr.config.get("planner_type", "unknown"), []).append(tr)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for v in sorted(groups):
        trs = groups[v]
        files.append(emit_csv(aggregate_series([dop_over_distance(t, bin_width) for t in trs], bin_width),
                              out / f"{v}_dop_over_distance.csv"))
        files.append(emit_csv(aggregate_stats([position_error_stats(t) for t in trs]),
                              out / f"{v}_position_error.csv"))
    return files
