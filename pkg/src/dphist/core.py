"""Domain types shared by every publication scheme.

A histogram is an ordered vector of labeled non-negative counts; a range-sum
query asks for the sum of a contiguous run of bins.  Everything a scheme
publishes derives from these two notions plus a budget ledger that enforces
sequential composition: mechanisms running on non-disjoint data spend
additively against a fixed total, mechanisms on disjoint data compose by max.

Bin indices are 1-based throughout the public API.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

#: Relative tolerance for budget arithmetic at finalization.
BUDGET_REL_TOL = 1e-12


class BudgetExceededError(RuntimeError):
    """A spend would push (or finalization finds) the ledger past its total."""


class ConfigurationError(ValueError):
    """A scheme or module was wired with forbidden parameters."""


@dataclass(frozen=True)
class BinLabel:
    """Opaque bin token, optionally augmented with a group id or pruned mark."""

    token: str
    group: int | None = None
    pruned: bool = False

    def with_group(self, group: int) -> "BinLabel":
        return BinLabel(self.token, group, self.pruned)

    def with_pruned(self) -> "BinLabel":
        return BinLabel(self.token, self.group, True)

    def __str__(self) -> str:
        s = self.token
        if self.group is not None:
            s += f"|g{self.group}"
        if self.pruned:
            s += "|pruned"
        return s


def _as_value_array(values, *, allow_negative: bool) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).copy()
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("histogram needs a non-empty 1-d value vector")
    if not np.all(np.isfinite(arr)):
        raise ValueError("histogram values must be finite")
    if not allow_negative and np.any(arr < 0):
        raise ValueError("histogram counts must be non-negative at ingestion")
    arr.flags.writeable = False
    return arr


class Histogram:
    """Ordered vector of labeled counts; the unit of publication."""

    __slots__ = ("labels", "values")

    def __init__(self, values, labels=None):
        self.values = _as_value_array(values, allow_negative=False)
        n = self.values.size
        if labels is None:
            labels = tuple(f"b{i}" for i in range(1, n + 1))
        else:
            labels = tuple(str(t) for t in labels)
        if len(labels) != n:
            raise ValueError("labels/values length mismatch")
        if len(set(labels)) != n:
            raise ValueError("bin labels must be unique")
        self.labels = labels

    @property
    def n(self) -> int:
        return self.values.size

    def __len__(self) -> int:
        return self.values.size

    def __repr__(self) -> str:
        return f"Histogram(n={self.n})"


class NoisyHistogram:
    """Published histogram: same bins as its source, values possibly negative.

    ``values`` is None for grouping-only outputs (zero noise-addition budget):
    the bin labels then carry the grouping information and any numeric use of
    the values is a bug we want to fail loudly, hence no NaN placeholder.
    """

    __slots__ = ("labels", "values")

    def __init__(self, values, labels):
        if values is None:
            self.values = None
        else:
            self.values = _as_value_array(values, allow_negative=True)
        self.labels = tuple(
            lab if isinstance(lab, BinLabel) else BinLabel(str(lab)) for lab in labels
        )
        if self.values is not None and len(self.labels) != self.values.size:
            raise ValueError("labels/values length mismatch")

    @property
    def n(self) -> int:
        return len(self.labels)

    def __len__(self) -> int:
        return len(self.labels)

    def require_values(self) -> np.ndarray:
        if self.values is None:
            raise TypeError(
                "this histogram carries grouping labels only; its values are undefined"
            )
        return self.values

    def group_ids(self) -> np.ndarray:
        """Per-bin group ids (0 where a bin was never grouped)."""
        return np.array(
            [lab.group if lab.group is not None else 0 for lab in self.labels],
            dtype=np.int64,
        )


@dataclass(frozen=True)
class RangeQuery:
    """Contiguous bin range [lo, hi], 1-based inclusive."""

    lo: int
    hi: int

    def __post_init__(self):
        if not (1 <= self.lo <= self.hi):
            raise IndexError(f"invalid range [{self.lo}, {self.hi}]")

    def validate(self, n: int) -> None:
        if self.hi > n:
            raise IndexError(f"range [{self.lo}, {self.hi}] exceeds n={n}")

    @property
    def width(self) -> int:
        return self.hi - self.lo + 1


def range_sum(h, q: RangeQuery) -> float:
    """Sum of bin values over q; works on clean and noisy histograms."""
    values = h.require_values() if isinstance(h, NoisyHistogram) else h.values
    q.validate(values.size)
    return float(np.sum(values[q.lo - 1 : q.hi]))


def prefix_sums(values) -> np.ndarray:
    """out[j] = sum of values[0..j]; length preserved."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("prefix_sums needs a non-empty vector")
    return np.cumsum(arr)


@dataclass(frozen=True)
class LedgerEntry:
    module_id: str
    eps: float
    disjoint_class: str | None = None


@dataclass
class BudgetLedger:
    """Records every privacy spend and enforces exhaustive composition.

    Entries without a disjoint class accumulate additively (sequential
    composition); entries sharing a named class contribute only their max
    (parallel composition over disjoint inputs).  The schemes built here use
    a single sequential class, but the max branch is supported.
    """

    total: float
    entries: list[LedgerEntry] = field(default_factory=list)

    def __post_init__(self):
        if not (self.total > 0 and math.isfinite(self.total)):
            raise ValueError("ledger total must be positive and finite")

    @property
    def spent(self) -> float:
        seq = 0.0
        groups: dict[str, float] = {}
        for e in self.entries:
            if e.disjoint_class is None:
                seq += e.eps
            else:
                groups[e.disjoint_class] = max(groups.get(e.disjoint_class, 0.0), e.eps)
        return seq + sum(groups.values())

    @property
    def remaining(self) -> float:
        return self.total - self.spent

    def spend(self, module_id: str, eps: float, disjoint_class: str | None = None) -> None:
        if eps < 0 or not math.isfinite(eps):
            raise ValueError("spend must be a finite non-negative epsilon")
        candidate = BudgetLedger(self.total, self.entries + [LedgerEntry(module_id, eps, disjoint_class)])
        tol = BUDGET_REL_TOL * max(abs(self.total), 1.0)
        if candidate.spent > self.total + tol:
            raise BudgetExceededError(
                f"spending {eps} by {module_id!r} exceeds budget "
                f"(spent {self.spent} of {self.total})"
            )
        self.entries.append(LedgerEntry(module_id, eps, disjoint_class))

    def finalize(self) -> None:
        """Require exhaustive spend: the composed total must equal the budget."""
        tol = BUDGET_REL_TOL * max(abs(self.total), 1.0)
        if abs(self.spent - self.total) > tol:
            raise BudgetExceededError(
                f"ledger not exhausted: spent {self.spent} of {self.total}"
            )

    def snapshot(self) -> dict:
        return {
            "total": self.total,
            "spent": self.spent,
            "entries": [
                {"module": e.module_id, "eps": e.eps, "disjoint_class": e.disjoint_class}
                for e in self.entries
            ],
        }


def read_histogram_csv(path) -> Histogram:
    """Read the dataset format: header ``label,value``, one bin per row."""
    labels: list[str] = []
    values: list[float] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip().lower() for c in header[:2]] != ["label", "value"]:
            raise ValueError(f"{path}: expected CSV header 'label,value'")
        for row in reader:
            if not row:
                continue
            labels.append(row[0])
            values.append(float(row[1]))
    return Histogram(values, labels)


def write_histogram_csv(h: Histogram, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "value"])
        for lab, val in zip(h.labels, h.values):
            writer.writerow([lab, _format_count(val)])


def _format_count(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))
