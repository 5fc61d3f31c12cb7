"""Cost engines and partition optimizers for smoothing.

A grouping strategy is a disjoint contiguous cover of all bins.  Candidate
groups come from a public vector of permissible spans, each carrying a
noise-error term ``v``.  Two objective functions are supported:

* absolute:  cost(g) = sum_j |b_j - mean(g)| + v
* squared:   cost(g) = sum_j (b_j - mean(g))^2 + v^2

The squared cost of a span can be rewritten as sum(b^2) - (sum b)^2 / |g|,
so with prefix sums of the values and their squares every candidate is O(1)
and the full candidate set costs O(n^2) overall, which is optimal (any
optimizer must look at all n(n+1)/2 spans at least once).  The absolute cost
needs rank statistics at the running mean; an order-statistics index makes
each window extension O(log n), giving O(n^2 log n) for the full set and
O(n log^2 n) for the power-of-two subset.

Costs may be perturbed before minimization (the private-cost route adds
Lap(1/(eps2*|g|)) per candidate) or corrected for noise inflation (the bias
correction subtracts 2(|g|-1)/eps2^2).  Adjusted costs can go negative and
are fed to the optimizer unchanged; clamping would re-introduce the bias the
correction removes.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import BudgetLedger
from .noise import NoiseSource


class ErrorMetric(enum.Enum):
    ABSOLUTE = "absolute"
    SQUARED = "squared"


@dataclass(frozen=True)
class PermissibleGroups:
    """Public candidate spans (1-based, inclusive) with noise-error terms.

    ``kind == "all"`` stands for every contiguous span with a uniform v and
    is never materialized; explicit sets carry their spans as arrays.  Every
    singleton must be permissible so a feasible cover always exists.
    """

    kind: str
    n: int
    v: float = 0.0
    los: np.ndarray | None = None
    his: np.ndarray | None = None
    vs: np.ndarray | None = None

    @staticmethod
    def all_groups(n: int, v: float) -> "PermissibleGroups":
        if n < 1:
            raise ValueError("n must be >= 1")
        return PermissibleGroups("all", n, float(v))

    @staticmethod
    def explicit(n: int, los, his, v) -> "PermissibleGroups":
        los = np.asarray(los, dtype=np.int64)
        his = np.asarray(his, dtype=np.int64)
        vs = np.broadcast_to(np.asarray(v, dtype=np.float64), los.shape).copy()
        if los.shape != his.shape or los.ndim != 1:
            raise ValueError("candidate arrays must be 1-d and congruent")
        if np.any(los < 1) or np.any(his > n) or np.any(los > his):
            raise ValueError("candidate spans must satisfy 1 <= lo <= hi <= n")
        singles = set(los[los == his].tolist())
        if singles != set(range(1, n + 1)):
            raise ValueError("every singleton span must be permissible")
        return PermissibleGroups("explicit", n, 0.0, los, his, vs)

    def __len__(self) -> int:
        if self.kind == "all":
            return self.n * (self.n + 1) // 2
        return int(self.los.shape[0])


def all_candidates(n: int, v: float) -> PermissibleGroups:
    return PermissibleGroups.all_groups(n, v)


def dyadic_candidates(n: int, v: float) -> PermissibleGroups:
    """Every span [l, l + 2^k - 1] inside [1, n]; O(n log n) candidates."""
    if n < 1:
        raise ValueError("n must be >= 1")
    los, his = [], []
    w = 1
    while w <= n:
        starts = np.arange(1, n - w + 2, dtype=np.int64)
        los.append(starts)
        his.append(starts + w - 1)
        w *= 2
    return PermissibleGroups.explicit(n, np.concatenate(los), np.concatenate(his), v)


def subtree_span_candidates(n: int, f: int, v: float) -> PermissibleGroups:
    """Leaf spans of full subtrees of the fan-out-f aggregate tree over n bins.

    Spans are aligned to the tree grid (node at depth k covers
    [j*f^k + 1, (j+1)*f^k]) and clipped to the real bins; depth-0 spans are
    the singletons, so the set is always feasible.
    """
    if f < 2:
        raise ValueError("fanout must be >= 2")
    los, his = [], []
    w = 1
    while w <= n:
        starts = np.arange(1, n - w + 2, w, dtype=np.int64)
        los.append(starts)
        his.append(starts + w - 1)
        w *= f
    return PermissibleGroups.explicit(n, np.concatenate(los), np.concatenate(his), v)


@dataclass(frozen=True)
class GroupingStrategy:
    """Ordered contiguous cover of [1, n]; group ids are positional (1-based).

    ``costs`` holds the optimizer's adjusted cost of each chosen group (noisy
    or bias-corrected, whichever the route used).
    """

    n: int
    los: np.ndarray
    his: np.ndarray
    costs: np.ndarray

    def __post_init__(self):
        if self.los[0] != 1 or self.his[-1] != self.n:
            raise ValueError("groups must cover [1, n]")
        if np.any(self.los[1:] != self.his[:-1] + 1):
            raise ValueError("groups must be contiguous and disjoint")

    def __len__(self) -> int:
        return int(self.los.shape[0])

    def sizes(self) -> np.ndarray:
        return self.his - self.los + 1

    def bin_groups(self) -> np.ndarray:
        """1-based group id for each bin."""
        return np.repeat(np.arange(1, len(self) + 1), self.sizes())

    def total_cost(self) -> float:
        return float(np.sum(self.costs))


def cost_absolute(values, lo: int, hi: int, v: float) -> float:
    """sum |b_j - mean| over [lo, hi] plus the noise-error term v."""
    values = np.asarray(values, dtype=np.float64)
    _check_span(values.size, lo, hi)
    window = values[lo - 1 : hi]
    return float(np.sum(np.abs(window - window.mean())) + v)


def cost_squared(prefix1, prefix2, lo: int, hi: int, v: float) -> float:
    """O(1) rewritten squared cost from prefix sums of values and squares."""
    prefix1 = np.asarray(prefix1, dtype=np.float64)
    prefix2 = np.asarray(prefix2, dtype=np.float64)
    _check_span(prefix1.size, lo, hi)
    w = hi - lo + 1
    s1 = prefix1[hi - 1] - (prefix1[lo - 2] if lo > 1 else 0.0)
    s2 = prefix2[hi - 1] - (prefix2[lo - 2] if lo > 1 else 0.0)
    return float(s2 - s1 * s1 / w + v * v)


def _check_span(n, lo, hi):
    if not (1 <= lo <= hi <= n):
        raise IndexError(f"span [{lo}, {hi}] invalid for n={n}")


def _materialize(candidates: PermissibleGroups) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(los, his, vs) arrays for any candidate kind. 1-based."""
    if candidates.kind == "explicit":
        return candidates.los, candidates.his, candidates.vs
    n = candidates.n
    los = np.concatenate([np.full(n - lo + 1, lo, dtype=np.int64) for lo in range(1, n + 1)])
    his = np.concatenate([np.arange(lo, n + 1, dtype=np.int64) for lo in range(1, n + 1)])
    vs = np.full(los.shape[0], candidates.v)
    return los, his, vs


def _strategy_from_choice(n, choice_hi0, chosen_cost) -> GroupingStrategy:
    spans = kernels.reconstruct_cover(n, choice_hi0)
    los = np.array([lo + 1 for lo, _ in spans], dtype=np.int64)
    his = np.array([hi + 1 for _, hi in spans], dtype=np.int64)
    costs = np.array([chosen_cost[lo] for lo, _ in spans])
    return GroupingStrategy(n, los, his, costs)


def dp_partition(n: int, candidates: PermissibleGroups, cost_of) -> GroupingStrategy:
    """Minimum-total-cost cover of [1, n] from the candidate spans.

    ``cost_of`` is either a callable (lo, hi) -> cost or an array aligned
    with the candidate order.  Ties prefer fewer groups, then the longest
    leftmost group.
    """
    los, his, _ = _materialize(candidates)
    if callable(cost_of):
        costs = np.array([cost_of(int(lo), int(hi)) for lo, hi in zip(los, his)])
    else:
        costs = np.asarray(cost_of, dtype=np.float64)
        if costs.shape != los.shape:
            raise ValueError("cost array must align with the candidate order")
    choice, best = kernels.partition_explicit(n, los - 1, his - 1, costs)
    if choice[0] < 0 or not np.isfinite(best[0]):
        raise ValueError("candidate set admits no cover of [1, n]")
    return _explicit_strategy(n, los, his, costs, choice)


def _explicit_strategy(n, los, his, costs, choice) -> GroupingStrategy:
    los_l, his_l, costs_l, choice_l = los.tolist(), his.tolist(), costs.tolist(), choice.tolist()
    g_los, g_his, g_costs = [], [], []
    lo = 0
    while lo < n:
        idx = choice_l[lo]
        if idx < 0:
            raise ValueError("candidate set admits no cover of [1, n]")
        g_los.append(los_l[idx])
        g_his.append(his_l[idx])
        g_costs.append(costs_l[idx])
        lo = his_l[idx]
    return GroupingStrategy(
        n, np.array(g_los, dtype=np.int64), np.array(g_his, dtype=np.int64), np.array(g_costs)
    )


def group_absolute_dp(
    values,
    eps2: float,
    candidates: PermissibleGroups,
    src: NoiseSource | None,
    ledger: BudgetLedger | None,
    *,
    module_id: str = "smoothing.grouping",
    stats: dict | None = None,
) -> GroupingStrategy:
    """Absolute-metric grouping, DAWA style.

    With eps2 > 0 each candidate cost is perturbed with Lap(1/(eps2*|g|))
    before minimization and eps2 is charged; with eps2 = 0 the costs are used
    as-is (connector behaviour on already-private input).

    The minimizer runs on ĉ_i plus a selection-bias offset ln(n)/(eps2*|g_i|)
    per candidate.  An exact optimizer over ~n independent Lap(1/(eps2*w))
    noisy costs per position otherwise chains extreme negative draws on flat
    regions into piles of tiny groups (the minimum of k such draws sits near
    -ln(k) scales); the offset is the matching extreme-value correction.  It
    is deterministic post-processing of the noisy costs (privacy-neutral)
    and vanishes as eps2 grows, so the large-eps2 limit still returns the
    noise-free optimum.
    """
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    if eps2 < 0:
        raise ValueError("eps2 must be non-negative")
    if eps2 > 0:
        if src is None or ledger is None:
            raise ValueError("the private-cost route needs a noise source and ledger")
        ledger.spend(module_id, eps2)
    offset = math.log(max(n, 2))

    if candidates.kind == "all":
        # kernel applies the 1/(eps2*w) scaling, so shifting the standard
        # draws adds exactly offset/(eps2*w) to each candidate
        draw_row = (lambda k: src.standard_laplace(size=k) + offset) if eps2 > 0 else None
        choice, chosen_cost, _, evals = kernels.abs_full_partition(
            values, candidates.v, eps2, draw_row
        )
        if stats is not None:
            stats["evaluations"] = evals
        return _strategy_from_choice(n, choice, chosen_cost)

    los, his, vs = _materialize(candidates)
    costs = kernels.abs_costs_explicit(values, los - 1, his - 1) + vs
    if eps2 > 0:
        widths = his - los + 1
        costs = costs + (src.standard_laplace(size=costs.size) + offset) / (eps2 * widths)
    if stats is not None:
        stats["evaluations"] = int(costs.size)
    choice, best = kernels.partition_explicit(n, los - 1, his - 1, costs)
    if choice[0] < 0 or not np.isfinite(best[0]):
        raise ValueError("candidate set admits no cover of [1, n]")
    return _explicit_strategy(n, los, his, costs, choice)


def group_squared_optimal(
    values,
    eps2: float,
    candidates: PermissibleGroups,
    *,
    bias_correct: bool = True,
    stats: dict | None = None,
) -> GroupingStrategy:
    """Squared-metric grouping on values already noised at scale 1/eps2.

    Evaluates every candidate in O(1) from prefix sums; optionally subtracts
    the expected noise inflation 2(|g|-1)/eps2^2 from each cost before the
    DP.  Spends no budget itself (the perturbation of the input is the
    caller's spend).
    """
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    if bias_correct and not eps2 > 0:
        raise ValueError("bias correction needs the eps2 used to noise the input")
    bias_coeff = 2.0 / (eps2 * eps2) if bias_correct else 0.0

    if candidates.kind == "all":
        choice, chosen_cost, _, evals = kernels.squared_full_partition(
            values, candidates.v * candidates.v, bias_coeff
        )
        if stats is not None:
            stats["evaluations"] = evals
        return _strategy_from_choice(n, choice, chosen_cost)

    los, his, vs = _materialize(candidates)
    widths = his - los + 1
    p1 = np.concatenate(([0.0], np.cumsum(values)))
    p2 = np.concatenate(([0.0], np.cumsum(values * values)))
    s1 = p1[his] - p1[los - 1]
    s2 = p2[his] - p2[los - 1]
    costs = s2 - s1 * s1 / widths + vs * vs - bias_coeff * (widths - 1)
    if stats is not None:
        stats["evaluations"] = int(costs.size)
    choice, best = kernels.partition_explicit(n, los - 1, his - 1, costs)
    if choice[0] < 0 or not np.isfinite(best[0]):
        raise ValueError("candidate set admits no cover of [1, n]")
    return _explicit_strategy(n, los, his, costs, choice)


def squared_bias_term(size: int, eps2: float) -> float:
    """Expected cost inflation per extra member: 2(|g|-1)/eps2^2 at |g|=size."""
    if not eps2 > 0:
        raise ValueError("eps2 must be positive")
    return 2.0 * (size - 1) / (eps2 * eps2)
