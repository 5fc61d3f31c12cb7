"""The nine publication schemes and their query processors.

Budget wirings are fixed constants:

==========  =====================================================
LPA         eps on per-bin Laplace noise
H           alpha_l * eps / t per tree level
S1          smoothing (0, eps/4, 3eps/4), absolute, all spans
S_APPROX    as S1 on the power-of-two candidate subset
S2          smoothing (eps/2, 0, eps/2), squared, perturb w/o sort
SO          as S2 with the descending sort
DAWA_LIKE   smoothing (0, eps/4, 0) + fixed queries 3eps/4,
            workload = all O(n^2) ranges (size-guarded)
SUB         subtree grouping eps/4 + alpha_l * (3eps/4)/t per level
SPS         smoothing (0, eps/4, 0) + fixed queries 3eps/4,
            workload = the n prefix sums; publishes prefix vector
==========  =====================================================

The smoothing-stage noise-error terms v follow the sources: 1/eps3 for the
standalone smoothing schemes, 4/(3 eps) ahead of a fixed-queries stage and
4t/(3 eps) ahead of the hierarchy levels in SUB.

Every scheme finalizes its ledger, so construction aborts loudly if a wiring
ever stops spending exactly eps.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    BinLabel,
    BudgetLedger,
    ConfigurationError,
    Histogram,
    NoisyHistogram,
    RangeQuery,
)
from .fixed_queries import Workload, fixed_queries, transform_workload
from .grouping import (
    ErrorMetric,
    GroupingStrategy,
    PermissibleGroups,
    all_candidates,
    dyadic_candidates,
    subtree_span_candidates,
)
from .hierarchy import (
    NoisyTree,
    build_tree,
    hierarchy_level,
    level_budgets,
    tree_height,
)
from .noise import NoiseSource, lpa
from .smoothing import SmoothingParams, smoothing_pipeline

#: DAWA_LIKE refuses larger inputs unless forced (cubic-time workload stage).
DAWA_SIZE_GUARD = 1 << 10


class SizeGuardError(RuntimeError):
    """Refusal to run a scheme whose cost is impractical at this input size."""


class SchemeKind(enum.Enum):
    LPA = "lpa"
    H = "h"
    S1 = "s1"
    S_APPROX = "s_approx"
    S2 = "s2"
    SO = "so"
    DAWA_LIKE = "dawa"
    SUB = "sub"
    SPS = "sps"

    @staticmethod
    def parse(name: str) -> "SchemeKind":
        key = name.strip().lower().replace("-", "_")
        for kind in SchemeKind:
            if key in (kind.value, kind.name.lower()):
                return kind
        raise ConfigurationError(f"unknown scheme {name!r}")


ALL_SCHEMES = tuple(SchemeKind)


@dataclass(frozen=True)
class SchemeConfig:
    kind: SchemeKind
    eps: float
    seed: int = 0
    fanout: int = 16
    allocation: str = "geometric"
    metric: ErrorMetric | None = None  # SUB/DAWA_LIKE/SPS only; others are fixed
    fq_strategy: str = "hierarchical"
    force: bool = False

    def __post_init__(self):
        if not (self.eps > 0 and math.isfinite(self.eps)):
            raise ConfigurationError("eps must be positive and finite")
        if self.fanout < 2:
            raise ConfigurationError("fanout must be >= 2")


@dataclass
class NoisyStructure:
    """Scheme output plus the ledger snapshot proving budget exhaustion."""

    variant: str  # "histogram" | "tree" | "prefix"
    scheme: str
    eps: float
    seed: int
    n: int
    histogram: NoisyHistogram | None = None
    tree: NoisyTree | None = None
    prefix: np.ndarray | None = None
    ledger: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    _range_prefix: np.ndarray | None = field(default=None, repr=False)

    def _prefix_view(self) -> np.ndarray:
        if self._range_prefix is None:
            if self.variant == "histogram":
                self._range_prefix = np.concatenate(
                    ([0.0], np.cumsum(self.histogram.require_values()))
                )
            elif self.variant == "tree":
                self._range_prefix = self.tree.leaf_prefix()
            else:
                self._range_prefix = np.concatenate(([0.0], self.prefix))
        return self._range_prefix

    def answer(self, q: RangeQuery) -> float:
        q.validate(self.n)
        if self.variant == "prefix":
            low = self.prefix[q.lo - 2] if q.lo > 1 else 0.0
            return float(self.prefix[q.hi - 1] - low)
        p = self._prefix_view()
        return float(p[q.hi] - p[q.lo - 1])

    def range_sums(self, los: np.ndarray, his: np.ndarray) -> np.ndarray:
        if np.any(los < 1) or np.any(his > self.n) or np.any(los > his):
            raise IndexError("query batch outside [1, n]")
        p = self._prefix_view()
        return p[his] - p[los - 1]

    def published_values(self) -> np.ndarray:
        if self.variant == "histogram":
            return self.histogram.require_values()
        if self.variant == "prefix":
            return self.prefix
        return self.tree.consistent_leaves()

    def to_dict(self) -> dict:
        out = {
            "variant": self.variant,
            "scheme": self.scheme,
            "eps": self.eps,
            "seed": self.seed,
            "n": self.n,
            "ledger_total": self.ledger.get("total"),
            "ledger": self.ledger,
            "meta": self.meta,
        }
        if self.variant == "histogram":
            out["labels"] = [str(lab) for lab in self.histogram.labels]
            out["values"] = self.histogram.require_values().tolist()
        elif self.variant == "prefix":
            out["values"] = self.prefix.tolist()
        else:
            out["fanout"] = self.tree.f
            out["height"] = self.tree.t
            out["levels"] = [lv.tolist() for lv in self.tree.values]
            out["values"] = self.tree.consistent_leaves().tolist()
        return out


def answer(structure: NoisyStructure, q: RangeQuery) -> float:
    """Query-processor entry point; dispatches on the structure variant."""
    return structure.answer(q)


def run_scheme(h: Histogram, cfg: SchemeConfig) -> NoisyStructure:
    """Build cfg.kind's private structure over h, spending exactly cfg.eps."""
    src = NoiseSource(cfg.seed)
    ledger = BudgetLedger(cfg.eps)
    builder = _BUILDERS[cfg.kind]
    structure = builder(h, cfg, src, ledger)
    ledger.finalize()
    structure.ledger = ledger.snapshot()
    return structure


def _structure(variant: str, h: Histogram, cfg: SchemeConfig, **payload) -> NoisyStructure:
    return NoisyStructure(
        variant=variant,
        scheme=cfg.kind.value,
        eps=cfg.eps,
        seed=cfg.seed,
        n=h.n,
        **payload,
    )


def _build_lpa(h, cfg, src, ledger):
    noisy = lpa(h, cfg.eps, src.substream("lpa"), ledger)
    return _structure("histogram", h, cfg, histogram=noisy)


def _build_hierarchical(h, cfg, src, ledger):
    tree = build_tree(h, cfg.fanout)
    budgets = level_budgets(cfg.eps, tree.t, cfg.allocation)
    values, variances = [], []
    for li in range(tree.t):
        level = li + 1
        measured = ~tree.padding_mask(level)
        noisy = hierarchy_level(
            tree.values[li], measured, float(budgets[li]),
            src.substream("level", level), ledger,
            module_id=f"hierarchy_level.{level}",
        )
        lam = 1.0 / budgets[li]
        values.append(np.where(measured, noisy, 0.0))
        variances.append(np.where(measured, 2.0 * lam * lam, 0.0))
    noisy_tree = NoisyTree(h.n, cfg.fanout, tree.t, values, variances)
    return _structure("tree", h, cfg, tree=noisy_tree)


_SMOOTHING_TABLE = {
    # kind: (eps1 share, eps2 share, eps3 share, metric, sort)
    SchemeKind.S1: (0.0, 0.25, 0.75, ErrorMetric.ABSOLUTE, True),
    SchemeKind.S_APPROX: (0.0, 0.25, 0.75, ErrorMetric.ABSOLUTE, True),
    SchemeKind.S2: (0.5, 0.0, 0.5, ErrorMetric.SQUARED, False),
    SchemeKind.SO: (0.5, 0.0, 0.5, ErrorMetric.SQUARED, True),
}


def _build_smoothing(h, cfg, src, ledger):
    f1, f2, f3, metric, sort = _SMOOTHING_TABLE[cfg.kind]
    eps1, eps2, eps3 = f1 * cfg.eps, f2 * cfg.eps, f3 * cfg.eps
    v = 1.0 / eps3
    if cfg.kind is SchemeKind.S_APPROX:
        cands = dyadic_candidates(h.n, v)
    else:
        cands = all_candidates(h.n, v)
    params = SmoothingParams(cands, metric, eps1, eps2, eps3, sort_noisy=sort)
    noisy, strategy = smoothing_pipeline(h, params, src.substream("smoothing"), ledger)
    meta = {"groups": len(strategy)}
    return _structure("histogram", h, cfg, histogram=noisy, meta=meta)


def _fq_grouping(h, cfg, src, ledger) -> GroupingStrategy:
    """Grouping-only smoothing stage shared by DAWA_LIKE and SPS."""
    v = 4.0 / (3.0 * cfg.eps)
    metric = cfg.metric if cfg.metric is not None else ErrorMetric.ABSOLUTE
    params = SmoothingParams(
        all_candidates(h.n, v), metric, 0.0, cfg.eps / 4.0, 0.0
    )
    _, strategy = smoothing_pipeline(h, params, src.substream("smoothing"), ledger)
    return strategy


def _smoothed_bins(h, cfg, src, ledger, workload_for):
    """Common DAWA_LIKE/SPS tail: group, measure the cell totals, expand."""
    strategy = _fq_grouping(h, cfg, src, ledger)
    cells = np.add.reduceat(h.values, strategy.los - 1)
    cell_workload = transform_workload(workload_for(h.n), strategy)
    noisy_cells = fixed_queries(
        cells, cell_workload, 0.75 * cfg.eps,
        src.substream("fixed_queries"), ledger,
        f=cfg.fanout, strategy_kind=cfg.fq_strategy,
    )
    gid = strategy.bin_groups()
    sizes = strategy.sizes().astype(np.float64)
    bins = noisy_cells.require_values()[gid - 1] / sizes[gid - 1]
    labels = [BinLabel(tok, group=int(g)) for tok, g in zip(h.labels, gid)]
    meta = {"groups": len(strategy)}
    return NoisyHistogram(bins, labels), meta


def _build_dawa(h, cfg, src, ledger):
    if h.n > DAWA_SIZE_GUARD and not cfg.force:
        raise SizeGuardError(
            f"DAWA_LIKE feeds all O(n^2) ranges to the measurement stage; "
            f"n={h.n} exceeds the {DAWA_SIZE_GUARD}-bin guard (pass force to override)"
        )
    noisy, meta = _smoothed_bins(h, cfg, src, ledger, Workload.all_ranges)
    return _structure("histogram", h, cfg, histogram=noisy, meta=meta)


def _build_sps(h, cfg, src, ledger):
    noisy, meta = _smoothed_bins(h, cfg, src, ledger, Workload.prefixes)
    prefix = np.cumsum(noisy.require_values())
    return _structure("prefix", h, cfg, prefix=prefix, meta=meta)


def _build_sub(h, cfg, src, ledger):
    metric = cfg.metric if cfg.metric is not None else ErrorMetric.SQUARED
    noisy_tree, strategy = subtree_smooth(
        h, cfg.eps, cfg.fanout, metric, src, ledger, allocation=cfg.allocation
    )
    meta = {"groups": len(strategy)}
    return _structure("tree", h, cfg, tree=noisy_tree, meta=meta)


_BUILDERS = {
    SchemeKind.LPA: _build_lpa,
    SchemeKind.H: _build_hierarchical,
    SchemeKind.S1: _build_smoothing,
    SchemeKind.S_APPROX: _build_smoothing,
    SchemeKind.S2: _build_smoothing,
    SchemeKind.SO: _build_smoothing,
    SchemeKind.DAWA_LIKE: _build_dawa,
    SchemeKind.SPS: _build_sps,
    SchemeKind.SUB: _build_sub,
}


def _group_depth(size: int, f: int) -> int:
    k, width = 0, 1
    while width < size:
        width *= f
        k += 1
    if width != size:
        raise ConfigurationError(
            f"group of {size} bins is not a full fan-out-{f} subtree span"
        )
    return k


def subtree_smooth(
    h: Histogram,
    eps: float,
    f: int,
    metric: ErrorMetric,
    src: NoiseSource,
    ledger: BudgetLedger,
    *,
    allocation: str = "geometric",
    forced_grouping: GroupingStrategy | None = None,
) -> tuple[NoisyTree, GroupingStrategy]:
    """Subtree smoothing: group full subtrees, prune them, re-fill from roots.

    Permissible groups are the leaf spans of full subtrees; ordering stays
    off so spans keep their tree alignment.  Nodes strictly below a chosen
    group root are pruned (never measured); instead each level of a pruned
    subtree contributes one noisy sum whose average becomes the root's value
    (t' estimates cut the root's squared error by t').  The root value is
    then spread evenly across each pruned level, and the re-filled nodes
    inherit the root estimate's variance for the consistency passes.

    ``forced_grouping`` bypasses the private grouping stage (charging the
    same eps/4) so experiments can pin a cover; spans must still be subtree
    spans.
    """
    n = h.n
    t = tree_height(n, f)
    v = 4.0 * t / (3.0 * eps)
    if forced_grouping is not None:
        strategy = forced_grouping
        ledger.spend("smoothing.grouping", eps / 4.0)
    else:
        params = SmoothingParams(
            subtree_span_candidates(n, f, v), metric, 0.0, eps / 4.0, 0.0
        )
        _, strategy = smoothing_pipeline(h, params, src.substream("smoothing"), ledger)

    tree = build_tree(h, f)
    prune = [np.zeros(lv.size, dtype=bool) for lv in tree.values]
    groups = []  # (root_li, root_idx, lo, hi) for spans wider than one bin
    for lo, hi in zip(strategy.los, strategy.his):
        size = int(hi - lo + 1)
        if size == 1:
            continue
        k = _group_depth(size, f)
        if (lo - 1) % size != 0:
            raise ConfigurationError(
                f"group [{lo}, {hi}] is not aligned to the fan-out-{f} tree grid"
            )
        root_li = t - 1 - k
        root_idx = (lo - 1) // size
        for li in range(root_li + 1, t):
            span = f ** (t - 1 - li)
            prune[li][(lo - 1) // span : hi // span] = True
        groups.append((root_li, int(root_idx), int(lo), int(hi)))

    budgets = level_budgets(0.75 * eps, t, allocation)
    values, variances = [], []
    level_ests: dict[tuple[int, int], list[tuple[float, float]]] = {g[:2]: [] for g in groups}
    for li in range(t):
        level = li + 1
        pad = tree.padding_mask(level)
        measured = ~pad & ~prune[li]
        src_level = src.substream("level", level)
        noisy = hierarchy_level(
            tree.values[li], measured, float(budgets[li]), src_level, ledger,
            module_id=f"hierarchy_level.{level}",
        )
        lam = 1.0 / budgets[li]
        var_measured = 2.0 * lam * lam
        values.append(np.where(measured, noisy, 0.0))
        variances.append(np.where(measured, var_measured, 0.0))
        for root_li, root_idx, lo, hi in groups:
            if li == root_li:
                level_ests[(root_li, root_idx)].append(
                    (float(noisy[root_idx]), var_measured)
                )
            elif li > root_li:
                total = float(tree.values[root_li][root_idx])
                est = total + src_level.laplace(lam)
                level_ests[(root_li, root_idx)].append((est, var_measured))

    for root_li, root_idx, lo, hi in groups:
        ests = level_ests[(root_li, root_idx)]
        root_value = sum(e for e, _ in ests) / len(ests)
        root_var = sum(vv for _, vv in ests) / len(ests) ** 2
        values[root_li][root_idx] = root_value
        variances[root_li][root_idx] = root_var
        for li in range(root_li + 1, t):
            span = f ** (t - 1 - li)
            sl = slice((lo - 1) // span, hi // span)
            count = (hi // span) - (lo - 1) // span
            values[li][sl] = root_value / count
            variances[li][sl] = root_var

    noisy_tree = NoisyTree(n, f, t, values, variances)
    return noisy_tree, strategy
