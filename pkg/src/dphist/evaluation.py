"""Synthetic datasets and the utility/efficiency experiment protocol.

Experiments report per-trial mean squared error of random fixed-cardinality
range queries against exact answers, plus wall-clock build times.  Every
trial derives its own scheme seed and query stream from the experiment seed,
so trials are independent, reproducible and paired across schemes (scheme A
and B face the same queries in trial i).

The three generators are shaped after commonly published histogram types:
a sparse power-law decay with a long zero tail and similar neighbours, a
low baseline with periodic bursts, and independent uniform counts.
"""

from __future__ import annotations

import csv
import enum
import json
import statistics
import time
from dataclasses import dataclass

import numpy as np

from .core import BudgetExceededError, ConfigurationError, Histogram, prefix_sums
from .grouping import ErrorMetric
from .noise import NoiseSource, derive_seed
from .schemes import SchemeConfig, SchemeKind, SizeGuardError, run_scheme


class SyntheticKind(enum.Enum):
    SMOOTH_SPARSE = "smooth-sparse"
    SPIKY_PERIODIC = "spiky-periodic"
    UNIFORM_RANDOM = "uniform-random"

    @staticmethod
    def parse(name: str) -> "SyntheticKind":
        key = name.strip().lower().replace("_", "-")
        for kind in SyntheticKind:
            if key == kind.value:
                return kind
        raise ConfigurationError(f"unknown synthetic kind {name!r}")


@dataclass(frozen=True)
class SyntheticSpec:
    kind: SyntheticKind
    n: int
    seed: int = 0
    # smooth-sparse: Poisson(peak * i^-decay); steep decay keeps the head
    # short so the data forms a few large groups over a long zero tail
    peak: float = 600.0
    decay: float = 2.2
    # spiky-periodic: Poisson(base) baseline with Poisson(burst) bursts
    base: float = 20.0
    burst: float = 400.0
    period: int = 60
    width: int = 4
    # uniform-random: iid integers in [0, high]
    high: int = 200

    def __post_init__(self):
        if self.n < 2:
            raise ConfigurationError("synthetic histograms need n >= 2")


def generate(spec: SyntheticSpec) -> Histogram:
    """Deterministic synthetic histogram for (kind, n, seed)."""
    rng = NoiseSource(spec.seed).substream("synthetic", spec.kind.value)._rng
    if spec.kind is SyntheticKind.SMOOTH_SPARSE:
        lam = spec.peak * np.arange(1, spec.n + 1, dtype=np.float64) ** (-spec.decay)
        values = rng.poisson(lam).astype(np.float64)
    elif spec.kind is SyntheticKind.SPIKY_PERIODIC:
        values = rng.poisson(spec.base, spec.n).astype(np.float64)
        for start in range(spec.period // 2, spec.n, spec.period):
            stop = min(start + spec.width, spec.n)
            values[start:stop] = rng.poisson(spec.burst, stop - start)
    else:
        values = rng.integers(0, spec.high + 1, spec.n).astype(np.float64)
    return Histogram(values)


@dataclass(frozen=True)
class ExperimentSpec:
    histogram: Histogram
    schemes: tuple[SchemeKind, ...]
    eps: float = 1.0
    range_fraction: float = 0.3
    trials: int = 100
    queries_per_trial: int = 2000
    seed: int = 0
    fanout: int = 16
    allocation: str = "geometric"
    metric: ErrorMetric | None = None
    fq_strategy: str = "hierarchical"
    force: bool = False

    def __post_init__(self):
        if not 0.1 <= self.range_fraction <= 0.5:
            raise ConfigurationError("range_fraction must lie in the sweep [0.1, 0.5]")
        if self.trials < 1 or self.queries_per_trial < 1:
            raise ConfigurationError("trials and queries_per_trial must be >= 1")


@dataclass
class TrialRow:
    scheme: str
    trial: int
    mse: float  # NaN when the trial did not produce a structure
    build_ms: float
    status: str = "ok"


def sample_queries(n: int, cardinality: int, count: int, seed: int, trial: int):
    """Fixed-cardinality ranges with uniform random starts, per (seed, trial)."""
    m = min(max(1, cardinality), n)
    rng = NoiseSource(seed).substream("queries", trial)
    los = rng.integers(1, n - m + 2, size=count).astype(np.int64)
    return los, los + m - 1


def _config_for(spec: ExperimentSpec, kind: SchemeKind, trial: int) -> SchemeConfig:
    return SchemeConfig(
        kind,
        eps=spec.eps,
        seed=derive_seed(spec.seed, "scheme", kind.value, trial),
        fanout=spec.fanout,
        allocation=spec.allocation,
        metric=spec.metric,
        fq_strategy=spec.fq_strategy,
        force=spec.force,
    )


def mse_experiment(spec: ExperimentSpec) -> list[TrialRow]:
    """Per-trial MSE of random range queries for every scheme.

    A failing scheme yields error/skipped rows and the table carries on.
    """
    h = spec.histogram
    n = h.n
    cardinality = max(1, round(spec.range_fraction * n))
    true_prefix = np.concatenate(([0.0], prefix_sums(h.values)))
    rows: list[TrialRow] = []
    for kind in spec.schemes:
        for trial in range(spec.trials):
            cfg = _config_for(spec, kind, trial)
            t0 = time.perf_counter()
            try:
                structure = run_scheme(h, cfg)
            except SizeGuardError:
                rows.append(TrialRow(kind.value, trial, float("nan"), 0.0, "skipped"))
                continue
            except (BudgetExceededError, ConfigurationError) as exc:
                rows.append(TrialRow(kind.value, trial, float("nan"), 0.0, f"error: {exc}"))
                continue
            build_ms = (time.perf_counter() - t0) * 1e3
            los, his = sample_queries(n, cardinality, spec.queries_per_trial, spec.seed, trial)
            estimates = structure.range_sums(los, his)
            truth = true_prefix[his] - true_prefix[los - 1]
            mse = float(np.mean((estimates - truth) ** 2))
            rows.append(TrialRow(kind.value, trial, mse, build_ms))
    return rows


def summarize(rows: list[TrialRow]) -> dict:
    """Per-scheme medians/means over the trials that produced structures."""
    out: dict[str, dict] = {}
    for row in rows:
        out.setdefault(row.scheme, {"mses": [], "build_ms": [], "skipped": 0, "errors": 0})
        slot = out[row.scheme]
        if row.status == "ok":
            slot["mses"].append(row.mse)
            slot["build_ms"].append(row.build_ms)
        elif row.status == "skipped":
            slot["skipped"] += 1
        else:
            slot["errors"] += 1
    summary = {}
    for scheme, slot in out.items():
        mses = slot["mses"]
        summary[scheme] = {
            "trials_ok": len(mses),
            "skipped": slot["skipped"],
            "errors": slot["errors"],
            "median_mse": statistics.median(mses) if mses else None,
            "mean_mse": statistics.fmean(mses) if mses else None,
            "mean_build_ms": statistics.fmean(slot["build_ms"]) if slot["build_ms"] else None,
        }
    return summary


@dataclass
class TimingRow:
    scheme: str
    fraction: float
    n: int
    build_ms: float
    status: str = "ok"


def timing_experiment(
    h: Histogram,
    schemes: tuple[SchemeKind, ...],
    size_fractions: tuple[float, ...],
    eps: float = 1.0,
    seed: int = 0,
    repeats: int = 3,
    fanout: int = 16,
    force: bool = False,
) -> list[TimingRow]:
    """Build time per scheme on prefix-truncated copies of the dataset."""
    for frac in size_fractions:
        if not 0 < frac <= 1:
            raise ConfigurationError("size fractions must lie in (0, 1]")
    rows: list[TimingRow] = []
    # warm any JIT caches off the clock
    warm = Histogram(h.values[: min(h.n, 128)], h.labels[: min(h.n, 128)])
    for kind in schemes:
        try:
            run_scheme(warm, SchemeConfig(kind, eps=eps, seed=seed, fanout=fanout, force=True))
        except Exception:
            pass
    for kind in schemes:
        for frac in sorted(size_fractions):
            k = max(2, round(frac * h.n))
            sub = Histogram(h.values[:k], h.labels[:k])
            cfg = SchemeConfig(kind, eps=eps, seed=seed, fanout=fanout, force=force)
            try:
                times = []
                for _ in range(repeats):
                    t0 = time.perf_counter()
                    run_scheme(sub, cfg)
                    times.append((time.perf_counter() - t0) * 1e3)
                rows.append(TimingRow(kind.value, frac, k, statistics.median(times)))
            except SizeGuardError:
                rows.append(TimingRow(kind.value, frac, k, float("nan"), "skipped"))
            except (BudgetExceededError, ConfigurationError) as exc:
                rows.append(TimingRow(kind.value, frac, k, float("nan"), f"error: {exc}"))
    return rows


_TRIAL_FIELDS = ["scheme", "trial", "mse", "build_ms", "status"]


def write_trials_csv(rows: list[TrialRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_TRIAL_FIELDS)
        for r in rows:
            writer.writerow([r.scheme, r.trial, repr(r.mse), repr(r.build_ms), r.status])


def read_trials_csv(path) -> list[TrialRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            rows.append(
                TrialRow(rec["scheme"], int(rec["trial"]), float(rec["mse"]),
                         float(rec["build_ms"]), rec["status"])
            )
    return rows


def write_summary_json(summary: dict, path, extra: dict | None = None) -> None:
    doc = {"summary": summary}
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
