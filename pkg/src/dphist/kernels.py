"""Hot inner loops of the grouping optimizers, JIT-compiled when possible.

Two backends implement the same contracts:

* numba ``@njit`` kernels (default when numba imports cleanly), and
* pure-numpy fallbacks, selected by setting ``DPH_NUMBA=0`` in the
  environment or when numba is unavailable.

The dynamic program runs right-to-left (``best[lo]`` = cheapest cover of
bins lo..n) so that ties can be broken deterministically: equal-cost covers
prefer fewer groups, then the longest leftmost group.  Both backends apply
identical tie rules; the squared-metric paths are arithmetic-identical,
while the absolute-metric paths may differ in the last ulp because the
fallback sums deviations in a different association order.

``benchmarks/bench_kernels.py`` times the two backends side by side.
"""

from __future__ import annotations

import os

import numpy as np


def _resolve_backend() -> bool:
    flag = os.environ.get("DPH_NUMBA", "").strip().lower()
    if flag in ("0", "false", "off", "no", "numpy"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


USE_NUMBA = _resolve_backend()


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


_TAKE_DOC = "replace on (cost <) or (cost ==, groups <=); later hi wins group ties"


# ---------------------------------------------------------------------------
# numpy fallbacks
# ---------------------------------------------------------------------------


def _squared_full_partition_np(values, vsq, bias_coeff):
    n = values.shape[0]
    p1 = np.concatenate(([0.0], np.cumsum(values)))
    p2 = np.concatenate(([0.0], np.cumsum(values * values)))
    best = np.zeros(n + 1)
    bestg = np.zeros(n + 1, dtype=np.int64)
    choice = np.full(n, -1, dtype=np.int64)
    chosen_cost = np.zeros(n)
    for lo in range(n - 1, -1, -1):
        hi = np.arange(lo, n)
        w = hi - lo + 1
        s1 = p1[hi + 1] - p1[lo]
        s2 = p2[hi + 1] - p2[lo]
        c = s2 - s1 * s1 / w + vsq - bias_coeff * (w - 1)
        t = c + best[hi + 1]
        tie = np.nonzero(t == t.min())[0]
        g = bestg[lo + tie + 1] + 1
        pick = tie[g == g.min()][-1]
        best[lo] = t[pick]
        bestg[lo] = bestg[lo + pick + 1] + 1
        choice[lo] = lo + pick
        chosen_cost[lo] = c[pick]
    return choice, chosen_cost, best[0], n * (n + 1) // 2


def _abs_row_sweep_np(values, p1, lo, vterm, noise_row, inv_eps2, best, bestg, choice, chosen_cost):
    # Exact but O(s^2) per row; the fallback is meant for modest n.
    n = values.shape[0]
    suffix = values[lo:]
    s = suffix.shape[0]
    w = np.arange(1, s + 1)
    means = (p1[lo + 1 :] - p1[lo]) / w
    costs = np.empty(s)
    chunk = 512
    for a in range(0, s, chunk):
        b = min(a + chunk, s)
        dev = np.abs(suffix[None, :b] - means[a:b, None])
        acc = np.cumsum(dev, axis=1)
        costs[a:b] = acc[np.arange(b - a), np.arange(a, b)]
    costs += vterm
    if inv_eps2 > 0.0:
        costs += noise_row * (inv_eps2 / w)
    t = costs + best[lo + 1 :]
    m = t.min()
    tie = np.nonzero(t == m)[0]
    g = bestg[lo + tie + 1] + 1
    pick = tie[g == g.min()][-1]
    best[lo] = t[pick]
    bestg[lo] = bestg[lo + pick + 1] + 1
    choice[lo] = lo + pick
    chosen_cost[lo] = costs[pick]


def _abs_costs_explicit_np(values, p1, los0, his0):
    widths = his0 - los0 + 1
    costs = np.empty(los0.shape[0])
    for w in np.unique(widths):
        sel = np.nonzero(widths == w)[0]
        idx = los0[sel][:, None] + np.arange(w)[None, :]
        window = values[idx]
        means = (p1[los0[sel] + w] - p1[los0[sel]]) / w
        costs[sel] = np.abs(window - means[:, None]).sum(axis=1)
    return costs


def _partition_explicit_np(n, los0, his0, costs, row_start):
    best = np.full(n + 1, np.inf)
    best[n] = 0.0
    bestg = np.zeros(n + 1, dtype=np.int64)
    choice = np.full(n, -1, dtype=np.int64)
    for lo in range(n - 1, -1, -1):
        b = np.inf
        bg = np.iinfo(np.int64).max
        ch = -1
        for idx in range(row_start[lo], row_start[lo + 1]):
            hi = his0[idx]
            if not np.isfinite(best[hi + 1]):
                continue
            t = costs[idx] + best[hi + 1]
            g = bestg[hi + 1] + 1
            if t < b or (t == b and g <= bg):
                b, bg, ch = t, g, idx
        best[lo] = b
        bestg[lo] = bg if ch >= 0 else 0
        choice[lo] = ch
    return choice, best, bestg


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

if USE_NUMBA:
    from numba import njit

    @njit(cache=True, inline="always")
    def _fw_add(tree, i, delta):
        # 1-based Fenwick index
        n = tree.shape[0] - 1
        while i <= n:
            tree[i] += delta
            i += i & (-i)

    @njit(cache=True, inline="always")
    def _fw_prefix(tree, i):
        s = 0.0
        while i > 0:
            s += tree[i]
            i -= i & (-i)
        return s

    @njit(cache=True)
    def _squared_full_partition_nb(values, vsq, bias_coeff):
        n = values.shape[0]
        p1 = np.zeros(n + 1)
        p2 = np.zeros(n + 1)
        for i in range(n):
            p1[i + 1] = p1[i] + values[i]
            p2[i + 1] = p2[i] + values[i] * values[i]
        best = np.zeros(n + 1)
        bestg = np.zeros(n + 1, dtype=np.int64)
        choice = np.full(n, -1, dtype=np.int64)
        chosen_cost = np.zeros(n)
        for lo in range(n - 1, -1, -1):
            b = np.inf
            bg = np.int64(2**62)
            ch = -1
            ch_c = 0.0
            for hi in range(lo, n):
                w = hi - lo + 1
                s1 = p1[hi + 1] - p1[lo]
                s2 = p2[hi + 1] - p2[lo]
                c = s2 - s1 * s1 / w + vsq - bias_coeff * (w - 1)
                t = c + best[hi + 1]
                g = bestg[hi + 1] + 1
                if t < b or (t == b and g <= bg):
                    b, bg, ch, ch_c = t, g, hi, c
            best[lo] = b
            bestg[lo] = bg
            choice[lo] = ch
            chosen_cost[lo] = ch_c
        return choice, chosen_cost, best[0], n * (n + 1) // 2

    @njit(cache=True)
    def _abs_row_sweep_nb(
        values, p1, sorted_vals, slot, lo, vterm, noise_row, inv_eps2,
        best, bestg, choice, chosen_cost, fw_cnt, fw_sum,
    ):
        n = values.shape[0]
        fw_cnt[:] = 0.0
        fw_sum[:] = 0.0
        b = np.inf
        bg = np.int64(2**62)
        ch = -1
        ch_c = 0.0
        run = 0.0
        for hi in range(lo, n):
            x = values[hi]
            run += x
            _fw_add(fw_cnt, slot[hi] + 1, 1.0)
            _fw_add(fw_sum, slot[hi] + 1, x)
            w = hi - lo + 1
            mean = run / w
            k = np.searchsorted(sorted_vals, mean, side="right")
            cnt_le = _fw_prefix(fw_cnt, k)
            sum_le = _fw_prefix(fw_sum, k)
            c = (mean * cnt_le - sum_le) + ((run - sum_le) - mean * (w - cnt_le)) + vterm
            if inv_eps2 > 0.0:
                c += noise_row[hi - lo] * (inv_eps2 / w)
            t = c + best[hi + 1]
            g = bestg[hi + 1] + 1
            if t < b or (t == b and g <= bg):
                b, bg, ch, ch_c = t, g, hi, c
        best[lo] = b
        bestg[lo] = bg
        choice[lo] = ch
        chosen_cost[lo] = ch_c

    @njit(cache=True)
    def _abs_full_partition_nb(values, p1, sorted_vals, slot, vterm, noise_flat, inv_eps2):
        # noise_flat is indexed by candidate (lo ascending, hi ascending)
        n = values.shape[0]
        best = np.zeros(n + 1)
        bestg = np.zeros(n + 1, dtype=np.int64)
        choice = np.full(n, -1, dtype=np.int64)
        chosen_cost = np.zeros(n)
        fw_cnt = np.zeros(n + 1)
        fw_sum = np.zeros(n + 1)
        for lo in range(n - 1, -1, -1):
            off = lo * n - (lo * (lo - 1)) // 2
            fw_cnt[:] = 0.0
            fw_sum[:] = 0.0
            b = np.inf
            bg = np.int64(2**62)
            ch = -1
            ch_c = 0.0
            run = 0.0
            for hi in range(lo, n):
                x = values[hi]
                run += x
                _fw_add(fw_cnt, slot[hi] + 1, 1.0)
                _fw_add(fw_sum, slot[hi] + 1, x)
                w = hi - lo + 1
                mean = run / w
                k = np.searchsorted(sorted_vals, mean, side="right")
                cnt_le = _fw_prefix(fw_cnt, k)
                sum_le = _fw_prefix(fw_sum, k)
                c = (mean * cnt_le - sum_le) + ((run - sum_le) - mean * (w - cnt_le)) + vterm
                if inv_eps2 > 0.0:
                    c += noise_flat[off + hi - lo] * (inv_eps2 / w)
                t = c + best[hi + 1]
                g = bestg[hi + 1] + 1
                if t < b or (t == b and g <= bg):
                    b, bg, ch, ch_c = t, g, hi, c
            best[lo] = b
            bestg[lo] = bg
            choice[lo] = ch
            chosen_cost[lo] = ch_c
        return choice, chosen_cost, best[0]

    @njit(cache=True)
    def _abs_costs_explicit_nb(values, p1, sorted_vals, slot, los0, his0):
        # candidates pre-sorted by (width, lo); one sliding window per width
        n = values.shape[0]
        m = los0.shape[0]
        costs = np.empty(m)
        fw_cnt = np.zeros(n + 1)
        fw_sum = np.zeros(n + 1)
        p = 0
        while p < m:
            w = his0[p] - los0[p] + 1
            q = p
            while q < m and his0[q] - los0[q] + 1 == w:
                q += 1
            fw_cnt[:] = 0.0
            fw_sum[:] = 0.0
            for j in range(w):
                _fw_add(fw_cnt, slot[j] + 1, 1.0)
                _fw_add(fw_sum, slot[j] + 1, values[j])
            i = p
            for s in range(0, n - w + 1):
                if s > 0:
                    _fw_add(fw_cnt, slot[s - 1] + 1, -1.0)
                    _fw_add(fw_sum, slot[s - 1] + 1, -values[s - 1])
                    _fw_add(fw_cnt, slot[s + w - 1] + 1, 1.0)
                    _fw_add(fw_sum, slot[s + w - 1] + 1, values[s + w - 1])
                while i < q and los0[i] == s:
                    total = p1[s + w] - p1[s]
                    mean = total / w
                    k = np.searchsorted(sorted_vals, mean, side="right")
                    cnt_le = _fw_prefix(fw_cnt, k)
                    sum_le = _fw_prefix(fw_sum, k)
                    costs[i] = (mean * cnt_le - sum_le) + (
                        (total - sum_le) - mean * (w - cnt_le)
                    )
                    i += 1
                if i >= q:
                    break
            p = q
        return costs

    @njit(cache=True)
    def _partition_explicit_nb(n, los0, his0, costs, row_start):
        best = np.full(n + 1, np.inf)
        best[n] = 0.0
        bestg = np.zeros(n + 1, dtype=np.int64)
        choice = np.full(n, -1, dtype=np.int64)
        for lo in range(n - 1, -1, -1):
            b = np.inf
            bg = np.int64(2**62)
            ch = -1
            for idx in range(row_start[lo], row_start[lo + 1]):
                hi = his0[idx]
                if not np.isfinite(best[hi + 1]):
                    continue
                t = costs[idx] + best[hi + 1]
                g = bestg[hi + 1] + 1
                if t < b or (t == b and g <= bg):
                    b, bg, ch = t, g, idx
            best[lo] = b
            bestg[lo] = bg if ch >= 0 else 0
            choice[lo] = ch
        return choice, best, bestg


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def squared_full_partition(values, vsq, bias_coeff):
    """Fused cost evaluation + DP over every contiguous span (squared metric).

    Returns (choice, chosen_cost, total, evaluations): choice[lo] = hi of the
    optimal group starting at 0-based lo.
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    if USE_NUMBA:
        return _squared_full_partition_nb(values, float(vsq), float(bias_coeff))
    return _squared_full_partition_np(values, float(vsq), float(bias_coeff))


#: Above this n, per-candidate cost noise is drawn row by row instead of as
#: one flat vector (n(n+1)/2 doubles), trading call overhead for memory.
FLAT_NOISE_MAX = 4096


def abs_full_partition(values, vterm, eps2, draw):
    """Fused sweep + DP over every span (absolute metric).

    ``draw(k)`` must return k standard-Laplace variates (plus any caller-side
    offset) and is only called when eps2 > 0.  For n <= FLAT_NOISE_MAX the
    draws are taken in one call, indexed by candidate (left endpoint
    ascending, right ascending); above that, one call per left endpoint in
    processing order (left endpoint descending).
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    n = values.shape[0]
    p1 = np.concatenate(([0.0], np.cumsum(values)))
    order = np.argsort(values, kind="stable")
    sorted_vals = values[order]
    slot = np.empty(n, dtype=np.int64)
    slot[order] = np.arange(n)
    inv_eps2 = 1.0 / eps2 if eps2 > 0 else 0.0
    empty = np.empty(0)
    flat = inv_eps2 > 0.0 and n <= FLAT_NOISE_MAX
    noise_flat = draw(n * (n + 1) // 2) if flat else empty

    if USE_NUMBA and (flat or inv_eps2 == 0.0):
        choice, chosen_cost, total = _abs_full_partition_nb(
            values, p1, sorted_vals, slot, float(vterm), noise_flat, inv_eps2
        )
        return choice, chosen_cost, total, n * (n + 1) // 2

    best = np.zeros(n + 1)
    bestg = np.zeros(n + 1, dtype=np.int64)
    choice = np.full(n, -1, dtype=np.int64)
    chosen_cost = np.zeros(n)

    def row_noise(lo):
        if inv_eps2 == 0.0:
            return empty
        if flat:
            off = lo * n - (lo * (lo - 1)) // 2
            return noise_flat[off : off + n - lo]
        return draw(n - lo)

    if USE_NUMBA:
        fw_cnt = np.zeros(n + 1)
        fw_sum = np.zeros(n + 1)
        for lo in range(n - 1, -1, -1):
            _abs_row_sweep_nb(
                values, p1, sorted_vals, slot, lo, float(vterm), row_noise(lo), inv_eps2,
                best, bestg, choice, chosen_cost, fw_cnt, fw_sum,
            )
    else:
        for lo in range(n - 1, -1, -1):
            _abs_row_sweep_np(
                values, p1, lo, float(vterm), row_noise(lo), inv_eps2,
                best, bestg, choice, chosen_cost,
            )
    return choice, chosen_cost, best[0], n * (n + 1) // 2


def abs_costs_explicit(values, los0, his0):
    """Smoothing-deviation part of the absolute cost for explicit candidates.

    Candidates are processed per distinct width with a sliding order-statistics
    index, so each window extension costs O(log n).
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    n = values.shape[0]
    p1 = np.concatenate(([0.0], np.cumsum(values)))
    widths = his0 - los0 + 1
    order = np.lexsort((los0, widths))
    inv = np.empty(order.shape[0], dtype=np.int64)
    inv[order] = np.arange(order.shape[0])
    los_s = np.ascontiguousarray(los0[order])
    his_s = np.ascontiguousarray(his0[order])
    if USE_NUMBA:
        vorder = np.argsort(values, kind="stable")
        sorted_vals = values[vorder]
        slot = np.empty(n, dtype=np.int64)
        slot[vorder] = np.arange(n)
        costs_s = _abs_costs_explicit_nb(values, p1, sorted_vals, slot, los_s, his_s)
    else:
        costs_s = _abs_costs_explicit_np(values, p1, los_s, his_s)
    return costs_s[inv]


def partition_explicit(n, los0, his0, costs):
    """DP over an explicit candidate set; returns chosen candidate indices.

    Infeasible covers leave choice[0] == -1 (callers raise).
    """
    order = np.lexsort((his0, los0))
    los_s = np.ascontiguousarray(los0[order])
    his_s = np.ascontiguousarray(his0[order])
    costs_s = np.ascontiguousarray(costs[order])
    row_start = np.searchsorted(los_s, np.arange(n + 1))
    if USE_NUMBA:
        choice_s, best, bestg = _partition_explicit_nb(n, los_s, his_s, costs_s, row_start)
    else:
        choice_s, best, bestg = _partition_explicit_np(n, los_s, his_s, costs_s, row_start)
    choice = np.where(choice_s >= 0, order[np.clip(choice_s, 0, None)], -1)
    return choice, best


def reconstruct_cover(n, choice_hi):
    """Walk choice[lo] = hi arrays into an ordered list of (lo, hi), 0-based."""
    spans = []
    lo = 0
    while lo < n:
        hi = int(choice_hi[lo])
        if hi < lo:
            raise ValueError("no feasible cover from the given candidates")
        spans.append((lo, hi))
        lo = hi + 1
    return spans
