"""Numba-compiled twins of the kernels in ``numpy_impl``.

Loop bodies replicate the numpy versions' accumulation order (difference
array + sequential cumsum, level-order subset sums), so results are
bit-identical between backends for integer-valued case weights.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def risk_counts(stops, events, entries, weights, grid):
    m = grid.shape[0]
    n_obs = stops.shape[0]
    f = np.zeros(m, dtype=np.float64)
    c = np.zeros(m, dtype=np.float64)
    diff = np.zeros(m + 1, dtype=np.float64)

    for i in range(n_obs):
        lo = np.searchsorted(grid, entries[i], side="right")
        diff[lo] += weights[i]
    for i in range(n_obs):
        hi = np.searchsorted(grid, stops[i], side="right")
        diff[hi] -= weights[i]

    n = np.empty(m, dtype=np.float64)
    acc = 0.0
    for k in range(m):
        acc += diff[k]
        n[k] = acc

    for i in range(n_obs):
        if events[i] != 0:
            k = np.searchsorted(grid, stops[i])
            if k < m and grid[k] == stops[i]:
                f[k] += weights[i]
    for i in range(n_obs):
        if events[i] == 0:
            k = np.searchsorted(grid, stops[i], side="right") - 1
            if k >= 0:
                c[k] += weights[i]
    return f, c, n


@njit(cache=True)
def split_scan_numeric(x_sorted, h_sorted, w_sorted, total_w, h_mean, h_var,
                       minbucket):
    n = x_sorted.shape[0]
    best_cut = np.nan
    best_z = 0.0
    best_t = 0.0
    best_abs = -1.0
    n_adm = 0
    if n < 2 or h_var <= 0.0 or total_w <= 1.0:
        return best_cut, best_z, best_t, n_adm

    cum_w = 0.0
    cum_wh = 0.0
    for i in range(n - 1):
        cum_w += w_sorted[i]
        cum_wh += w_sorted[i] * h_sorted[i]
        if x_sorted[i] >= x_sorted[i + 1]:
            continue
        w_a = cum_w
        if w_a < minbucket or total_w - w_a < minbucket:
            continue
        n_adm += 1
        var_a = h_var * w_a * (total_w - w_a) / (total_w - 1.0)
        z = (cum_wh - w_a * h_mean) / np.sqrt(var_a)
        if abs(z) > best_abs:
            best_abs = abs(z)
            best_cut = x_sorted[i]
            best_z = z
            best_t = cum_wh
    return best_cut, best_z, best_t, n_adm


@njit(cache=True)
def subset_scan(level_t, level_w, total_w, h_mean, h_var, minbucket):
    k = level_t.shape[0]
    best_mask = 0
    best_z = 0.0
    best_t = 0.0
    best_abs = -1.0
    n_adm = 0
    if k < 2 or h_var <= 0.0 or total_w <= 1.0:
        return best_mask, best_z, best_t, n_adm

    n_masks = (1 << (k - 1)) - 1
    for mask in range(1, n_masks + 1):
        w_a = 0.0
        t_a = 0.0
        for lvl in range(1, k):
            if (mask >> (lvl - 1)) & 1 == 1:
                w_a += level_w[lvl]
                t_a += level_t[lvl]
        if w_a < minbucket or total_w - w_a < minbucket:
            continue
        if w_a <= 0.0 or total_w - w_a <= 0.0:
            continue
        n_adm += 1
        var_a = h_var * w_a * (total_w - w_a) / (total_w - 1.0)
        z = (t_a - w_a * h_mean) / np.sqrt(var_a)
        if abs(z) > best_abs:
            best_abs = abs(z)
            best_mask = mask
            best_z = z
            best_t = t_a
    return best_mask, best_z, best_t, n_adm
