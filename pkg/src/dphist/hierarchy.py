"""Aggregate trees, per-level perturbation and mean-consistency inference.

A fan-out-f tree is stored as one flat array per level, root level first;
the leaf level is the histogram padded with zeros to the next power of f.
Padding positions are exact zeros that never receive noise and never absorb
consistency corrections (their variance is zero), so they cannot leak error
into real bins.

The range-query estimator is the variance-weighted two-pass inference:

* upward, each node's estimate becomes the minimum-variance blend of its own
  noisy measurement and the sum of its children's blended estimates;
* downward, the residual between a parent and the sum of its children is
  distributed over the children proportionally to their (upward) variances.

On trees this two-pass is the exact generalized-least-squares solution, so
after it every parent equals the sum of its children and any range sum can
be read off prefix sums of the consistent leaves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import BudgetLedger, Histogram, RangeQuery
from .noise import NoiseSource

#: Per-level geometric budget ratio (leaves weighted heaviest).
GEOMETRIC_RATIO = 2.0 ** (1.0 / 3.0)


def tree_height(n: int, f: int) -> int:
    """Number of budgeted levels, root through leaves (1 for a single bin)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if f < 2:
        raise ValueError("fanout must be >= 2")
    t, width = 1, 1
    while width < n:
        width *= f
        t += 1
    return t


def level_width(t: int, f: int, level: int) -> int:
    """Nodes at 1-based level (root = 1, leaves = t)."""
    return f ** (level - 1)


def alphas(t: int, allocation: str = "geometric") -> np.ndarray:
    """Per-level budget scalars with sum(alpha) = t."""
    if allocation == "uniform":
        return np.ones(t)
    if allocation != "geometric":
        raise ValueError(f"unknown allocation {allocation!r}")
    r = GEOMETRIC_RATIO
    weights = r ** np.arange(t, dtype=np.float64)
    return t * weights / weights.sum()


def scale_budget(eps: float, t: int, ell: int, allocation: str = "geometric") -> float:
    """alpha_ell * eps for 1-based level ell."""
    if not (1 <= ell <= t):
        raise ValueError(f"level {ell} outside 1..{t}")
    return float(alphas(t, allocation)[ell - 1] * eps)


def level_budgets(eps: float, t: int, allocation: str = "geometric") -> np.ndarray:
    """The Hierarchical scheme's per-level spends: alpha_ell * eps / t."""
    return alphas(t, allocation) * (eps / t)


@dataclass
class AggregateTree:
    """Exact tree: every internal node is the sum of its children."""

    n: int
    f: int
    t: int
    values: list[np.ndarray]  # root level first

    def leaf_width(self) -> int:
        return level_width(self.t, self.f, self.t)

    def padding_mask(self, level: int) -> np.ndarray:
        """True where a node's leaf span lies wholly beyond the real bins."""
        span = self.f ** (self.t - level)
        idx = np.arange(level_width(self.t, self.f, level))
        return idx * span >= self.n

    def node_span(self, level: int, idx: int) -> tuple[int, int]:
        """1-based leaf/bin span covered by node idx (0-based) at a level."""
        span = self.f ** (self.t - level)
        return idx * span + 1, (idx + 1) * span


def build_tree(h: Histogram, f: int) -> AggregateTree:
    t = tree_height(h.n, f)
    leaves = np.zeros(level_width(t, f, t))
    leaves[: h.n] = h.values
    levels = [leaves]
    for _ in range(t - 1):
        levels.append(levels[-1].reshape(-1, f).sum(axis=1))
    levels.reverse()
    return AggregateTree(h.n, f, t, levels)


def hierarchy_level(
    values: np.ndarray,
    mask: np.ndarray,
    eps_level: float,
    src: NoiseSource,
    ledger: BudgetLedger,
    *,
    module_id: str = "hierarchy_level",
) -> np.ndarray:
    """Perturb one tree level; mask-0 nodes are pruned (no sample drawn).

    The whole level is charged eps_level once; pruned nodes come out as NaN
    and it is the owning scheme's job to either re-fill or ignore them.
    """
    values = np.asarray(values, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if values.shape != mask.shape:
        raise ValueError("values/mask length mismatch")
    if not eps_level > 0:
        raise ValueError("eps_level must be positive")
    ledger.spend(module_id, eps_level)
    out = np.full(values.shape, np.nan)
    idx = np.nonzero(mask)[0]
    out[idx] = values[idx] + src.laplace(1.0 / eps_level, size=idx.size)
    return out


@dataclass
class NoisyTree:
    """Measured tree plus per-node variances; NaN-free after assembly.

    Unmeasured-but-known nodes (padding, re-filled subtrees) carry their
    derived value with the variance of the estimate that produced it
    (exactly 0 for padding).
    """

    n: int
    f: int
    t: int
    values: list[np.ndarray]
    variances: list[np.ndarray]
    _consistent: list[np.ndarray] | None = field(default=None, repr=False)
    _leaf_prefix: np.ndarray | None = field(default=None, repr=False)

    def consistent_levels(self) -> list[np.ndarray]:
        if self._consistent is None:
            self._consistent = infer_consistent(self)
        return self._consistent

    def consistent_leaves(self) -> np.ndarray:
        return self.consistent_levels()[-1][: self.n]

    def leaf_prefix(self) -> np.ndarray:
        if self._leaf_prefix is None:
            self._leaf_prefix = np.concatenate(([0.0], np.cumsum(self.consistent_leaves())))
        return self._leaf_prefix


def _blend(y, vy, s, vs):
    """Minimum-variance combination of two unbiased estimates (vectorized)."""
    y = np.asarray(y, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    vy = np.asarray(vy, dtype=np.float64)
    vs = np.asarray(vs, dtype=np.float64)
    z = np.empty_like(y)
    v = np.empty_like(y)
    y_exact = vy == 0
    s_exact = vs == 0
    y_off = np.isinf(vy)
    s_off = np.isinf(vs)
    regular = ~(y_exact | s_exact | y_off | s_off)
    denom = np.where(regular, vy + vs, 1.0)
    z[regular] = ((y * vs + s * vy) / denom)[regular]
    v[regular] = ((vy * vs) / denom)[regular]
    z[y_exact] = y[y_exact]
    v[y_exact] = 0.0
    take_s = s_exact & ~y_exact
    z[take_s] = s[take_s]
    v[take_s] = 0.0
    take_s = y_off & ~s_exact & ~y_exact
    z[take_s] = s[take_s]
    v[take_s] = vs[take_s]
    take_y = s_off & ~y_off & ~y_exact & ~s_exact
    z[take_y] = y[take_y]
    v[take_y] = vy[take_y]
    return z, v


def infer_consistent(tree: NoisyTree) -> list[np.ndarray]:
    """Two-pass weighted mean-consistency over the measured tree."""
    f, t = tree.f, tree.t
    z = [None] * t
    vz = [None] * t
    z[t - 1] = tree.values[t - 1].astype(np.float64).copy()
    vz[t - 1] = tree.variances[t - 1].astype(np.float64).copy()
    for li in range(t - 2, -1, -1):
        cs = z[li + 1].reshape(-1, f).sum(axis=1)
        cv = vz[li + 1].reshape(-1, f).sum(axis=1)
        z[li], vz[li] = _blend(tree.values[li], tree.variances[li], cs, cv)

    consistent = [None] * t
    consistent[0] = z[0].copy()
    for li in range(t - 1):
        kid_z = z[li + 1].reshape(-1, f)
        kid_v = vz[li + 1].reshape(-1, f)
        vsum = kid_v.sum(axis=1)
        residual = consistent[li] - kid_z.sum(axis=1)
        safe = np.where(vsum > 0, vsum, 1.0)
        share = np.where(vsum[:, None] > 0, kid_v / safe[:, None], 0.0)
        consistent[li + 1] = (kid_z + share * residual[:, None]).reshape(-1)
    return consistent


def hay_estimate(tree: NoisyTree, q: RangeQuery) -> float:
    """Consistent range-sum estimate (padding never contributes)."""
    q.validate(tree.n)
    p = tree.leaf_prefix()
    return float(p[q.hi] - p[q.lo - 1])


def canonical_cover(n: int, f: int, t: int, q: RangeQuery) -> list[tuple[int, int]]:
    """Maximal nodes (level, 0-based idx) whose spans exactly tile q's bins.

    Conservative near the padded right edge: a node is used only when its
    full span (padding included) lies inside the query, so covers of clipped
    queries fall back to finer nodes there.
    """
    q.validate(n)
    cover: list[tuple[int, int]] = []
    a, b = q.lo, q.hi  # 1-based node indices at the current level
    level = t
    while a <= b and level >= 1:
        if level == 1:
            cover.extend((1, i - 1) for i in range(a, b + 1))
            break
        pa, pb = (a - 1) // f, (b - 1) // f
        if pa == pb:
            if (a - 1) % f == 0 and b % f == 0:
                a, b = pa + 1, pa + 1
                level -= 1
                continue
            cover.extend((level, i - 1) for i in range(a, b + 1))
            break
        left = 0 if (a - 1) % f == 0 else f - (a - 1) % f
        right = 0 if b % f == 0 else b % f
        cover.extend((level, i - 1) for i in range(a, a + left))
        cover.extend((level, i - 1) for i in range(b - right + 1, b + 1))
        a = pa + 1 + (1 if left > 0 else 0)
        b = pb + 1 - (1 if right > 0 else 0)
        level -= 1
    return cover
