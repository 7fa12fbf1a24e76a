"""Pure-numpy implementations of the hot kernels.

The numba twins in ``numba_impl`` mirror the arithmetic order used here
(sequential cumulative sums, level-order accumulation), so the two backends
return bit-identical results for integer-valued case weights.
"""

import numpy as np


def risk_counts(stops, events, entries, weights, grid):
    """Tally weighted events, censorings and risk sets on a time grid.

    A spell is at risk at grid time t iff entry < t <= stop.  Events are
    counted at their exact grid point (the caller builds the grid from the
    distinct event stops); censorings are bucketed into [t_k, t_{k+1}),
    with censorings before the first grid point dropped.

    Returns (f, c, n) float64 arrays of ``len(grid)``.
    """
    m = grid.shape[0]
    f = np.zeros(m, dtype=np.float64)
    c = np.zeros(m, dtype=np.float64)

    lo = np.searchsorted(grid, entries, side="right")
    hi = np.searchsorted(grid, stops, side="right")

    diff = np.zeros(m + 1, dtype=np.float64)
    np.add.at(diff, lo, weights)
    np.add.at(diff, hi, -weights)
    n = np.cumsum(diff[:m])

    ev = events != 0
    k_ev = np.searchsorted(grid, stops[ev])
    w_ev = weights[ev]
    on_grid = k_ev < m
    on_grid[on_grid] &= grid[k_ev[on_grid]] == stops[ev][on_grid]
    np.add.at(f, k_ev[on_grid], w_ev[on_grid])

    k_c = hi[~ev] - 1
    w_c = weights[~ev]
    in_range = k_c >= 0
    np.add.at(c, k_c[in_range], w_c[in_range])
    return f, c, n


def split_scan_numeric(x_sorted, h_sorted, w_sorted, total_w, h_mean, h_var,
                       minbucket):
    """Scan threshold splits of a sorted numeric covariate.

    Evaluates the standardised two-sample statistic Z(A) for every cut
    between distinct x values, under the permutation moments implied by
    (total_w, h_mean, h_var).  Candidates whose child weights fall below
    ``minbucket`` are inadmissible.  Ties in |Z| resolve to the smaller cut.

    Returns (cut, z, t_stat, n_admissible); cut is NaN when nothing is
    admissible.
    """
    n = x_sorted.shape[0]
    best_cut = np.nan
    best_z = 0.0
    best_t = 0.0
    n_adm = 0
    if n < 2 or h_var <= 0.0 or total_w <= 1.0:
        return best_cut, best_z, best_t, n_adm

    cum_w = np.cumsum(w_sorted)
    cum_wh = np.cumsum(w_sorted * h_sorted)

    boundary = np.flatnonzero(x_sorted[:-1] < x_sorted[1:])
    w_a = cum_w[boundary]
    t_a = cum_wh[boundary]
    adm = (w_a >= minbucket) & (total_w - w_a >= minbucket)
    n_adm = int(np.count_nonzero(adm))
    if n_adm == 0:
        return best_cut, best_z, best_t, 0

    w_a = w_a[adm]
    t_a = t_a[adm]
    cuts = x_sorted[boundary[adm]]
    var_a = h_var * w_a * (total_w - w_a) / (total_w - 1.0)
    z = (t_a - w_a * h_mean) / np.sqrt(var_a)

    # first maximum wins: ties in |Z| resolve to the smaller cut
    best = int(np.argmax(np.abs(z)))
    return float(cuts[best]), float(z[best]), float(t_a[best]), n_adm


def subset_scan(level_t, level_w, total_w, h_mean, h_var, minbucket):
    """Scan binary subset splits of a categorical covariate.

    Enumerates all 2^(K-1) - 1 nonempty proper subsets up to complement
    symmetry (level 0 is always assigned to the complement).  Returns
    (mask, z, t_stat, n_admissible) where bit j-1 of ``mask`` flags level j
    as a member of the left subset; mask is 0 when nothing is admissible.
    """
    k = level_t.shape[0]
    if k < 2 or h_var <= 0.0 or total_w <= 1.0:
        return 0, 0.0, 0.0, 0

    n_masks = (1 << (k - 1)) - 1
    masks = np.arange(1, n_masks + 1, dtype=np.int64)
    w_a = np.zeros(n_masks, dtype=np.float64)
    t_a = np.zeros(n_masks, dtype=np.float64)
    for lvl in range(1, k):
        has = (masks >> (lvl - 1)) & 1 == 1
        w_a[has] += level_w[lvl]
        t_a[has] += level_t[lvl]

    adm = (w_a >= minbucket) & (total_w - w_a >= minbucket) & (w_a > 0) \
        & (total_w - w_a > 0)
    n_adm = int(np.count_nonzero(adm))
    if n_adm == 0:
        return 0, 0.0, 0.0, 0

    idx = np.flatnonzero(adm)
    var_a = h_var * w_a[idx] * (total_w - w_a[idx]) / (total_w - 1.0)
    z = (t_a[idx] - w_a[idx] * h_mean) / np.sqrt(var_a)

    # first maximum wins: ties in |Z| resolve to the first enumerated mask
    best = int(np.argmax(np.abs(z)))
    j = idx[best]
    return int(masks[j]), float(z[best]), float(t_a[j]), n_adm
