"""The smoothing module: ordering, grouping and noise-addition submodules.

Parameterized by a candidate set L, an error metric, and three budgets
(eps1, eps2, eps3).  Ordering optionally perturbs and descending-sorts the
bins (eps1), grouping picks a cover minimizing the metric (eps2), and noise
addition publishes each group's average of the ORIGINAL bin values with
scale 1/(eps3*|g|), so every member bin of a group carries the same noisy
average and a group id in its label.

Setting eps1 = 0 or eps2 = 0 turns the respective submodule into a
pass-through connector; setting both to zero is forbidden because a
connector fed sensitive data must hand it to a noise-spending module, not
to another connector.  With eps3 = 0 the published values are undefined and
only the grouping labels carry information.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BinLabel, BudgetLedger, ConfigurationError, Histogram, NoisyHistogram
from .grouping import (
    ErrorMetric,
    GroupingStrategy,
    PermissibleGroups,
    group_absolute_dp,
    group_squared_optimal,
)
from .noise import NoiseSource


@dataclass(frozen=True)
class SmoothingParams:
    candidates: PermissibleGroups
    metric: ErrorMetric
    eps1: float
    eps2: float
    eps3: float
    #: apply the descending sort after the eps1 perturbation (the S2 wiring
    #: perturbs without sorting)
    sort_noisy: bool = True
    #: subtract the expected noise inflation from squared costs
    bias_correct: bool = True

    def __post_init__(self):
        for name in ("eps1", "eps2", "eps3"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative")
        if self.eps1 == 0 and self.eps2 == 0:
            raise ConfigurationError(
                "eps1 and eps2 cannot both be zero: ordering would forward "
                "sensitive data to another connector"
            )

    @property
    def total(self) -> float:
        return self.eps1 + self.eps2 + self.eps3


def ordering(
    h: Histogram,
    eps1: float,
    src: NoiseSource,
    ledger: BudgetLedger,
    *,
    sort: bool = True,
    module_id: str = "smoothing.ordering",
) -> NoisyHistogram:
    """Perturb with Lap(1/eps1) and stable-sort descending, keeping labels.

    eps1 = 0 is the connector case: the input passes through untouched and
    nothing is charged.
    """
    if eps1 < 0:
        raise ConfigurationError("eps1 must be non-negative")
    if eps1 == 0:
        return NoisyHistogram(h.values, h.labels)
    ledger.spend(module_id, eps1)
    noisy = h.values + src.laplace(1.0 / eps1, size=h.n)
    if not sort:
        return NoisyHistogram(noisy, h.labels)
    order = np.argsort(-noisy, kind="stable")
    return NoisyHistogram(noisy[order], [h.labels[i] for i in order])


def smoothing_module(
    h: Histogram, params: SmoothingParams, src: NoiseSource, ledger: BudgetLedger
) -> NoisyHistogram:
    """Run the full ordering -> grouping -> noise-addition pipeline."""
    noisy, _ = smoothing_pipeline(h, params, src, ledger)
    return noisy


def smoothing_pipeline(
    h: Histogram, params: SmoothingParams, src: NoiseSource, ledger: BudgetLedger
) -> tuple[NoisyHistogram, GroupingStrategy]:
    """As smoothing_module, but also hands back the grouping strategy.

    The strategy's spans index the (possibly sorted) working order; schemes
    that consume the strategy directly always run with ordering disabled, so
    for them the spans are spans of original bins.
    """
    n = h.n
    if params.candidates.n != n:
        raise ConfigurationError("candidate set built for a different bin count")

    # Ordering submodule.
    if params.eps1 > 0:
        ledger.spend("smoothing.ordering", params.eps1)
        noisy_vals = h.values + src.substream("ordering").laplace(1.0 / params.eps1, size=n)
        if params.sort_noisy:
            perm = np.argsort(-noisy_vals, kind="stable")
        else:
            perm = np.arange(n)
        working = noisy_vals[perm]
    else:
        perm = np.arange(n)
        working = h.values

    # Grouping submodule (spans refer to working order).
    if params.metric is ErrorMetric.ABSOLUTE:
        strategy = group_absolute_dp(
            working, params.eps2, params.candidates, src.substream("grouping"), ledger
        )
    else:
        if params.eps2 > 0:
            # AHP-style private costs: evaluate on a copy noised at 1/eps2.
            ledger.spend("smoothing.grouping", params.eps2)
            noisy_copy = working + src.substream("grouping").laplace(1.0 / params.eps2, size=n)
            strategy = group_squared_optimal(
                noisy_copy, params.eps2, params.candidates, bias_correct=params.bias_correct
            )
        else:
            # Connector: input already carries eps1-scale noise.
            strategy = group_squared_optimal(
                working, params.eps1, params.candidates, bias_correct=params.bias_correct
            )

    # Noise-addition submodule: average ORIGINAL values per group (group
    # membership flows through the bin labels, i.e. via perm).
    sizes = strategy.sizes()
    values_by_pos = h.values[perm]
    gid_by_pos = strategy.bin_groups()
    out_labels: list = [None] * n
    for pos, orig in enumerate(perm):
        out_labels[orig] = BinLabel(h.labels[orig], group=int(gid_by_pos[pos]))

    if params.eps3 > 0:
        ledger.spend("smoothing.noise_addition", params.eps3)
        means = np.add.reduceat(values_by_pos, strategy.los - 1) / sizes
        draws = src.substream("noise_addition").standard_laplace(size=len(strategy))
        noisy_means = means + draws / (params.eps3 * sizes)
        out_values = np.empty(n)
        out_values[perm] = np.repeat(noisy_means, sizes)
        return NoisyHistogram(out_values, out_labels), strategy

    return NoisyHistogram(None, out_labels), strategy
