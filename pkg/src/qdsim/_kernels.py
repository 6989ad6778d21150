"""Numba kernels for the hot loops: OU sampling, dead time, correlation, pair counting.

Everything here works on plain int64 picosecond timestamps and float64 arrays so
the jitted signatures stay simple. All kernels are deterministic given their
inputs; random numbers are drawn outside and passed in.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def ou_from_normals(times_s, normals, stationary_std, correlation_time):
    """Exact-discretization Ornstein-Uhlenbeck path sampled at arbitrary times.

    times_s must be non-decreasing. normals is one standard-normal draw per
    sample; the first sample is taken from the stationary distribution
    N(0, stationary_std^2), each following one from the exact conditional
    x_{k+1} | x_k ~ N(x_k * a, std^2 * (1 - a^2)) with a = exp(-dt / tau).
    """
    n = times_s.shape[0]
    out = np.empty(n, dtype=np.float64)
    if n == 0:
        return out
    out[0] = stationary_std * normals[0]
    for k in range(1, n):
        dt = times_s[k] - times_s[k - 1]
        a = np.exp(-dt / correlation_time)
        out[k] = out[k - 1] * a + stationary_std * np.sqrt(1.0 - a * a) * normals[k]
    return out


@njit(cache=True)
def dead_time_keep(timestamps_ps, dead_ps):
    """Mask of tags that survive a non-paralyzable dead time (one channel).

    A tag is kept if it arrives at least dead_ps after the previous *kept* tag.
    """
    n = timestamps_ps.shape[0]
    keep = np.ones(n, dtype=np.bool_)
    if n == 0 or dead_ps <= 0:
        return keep
    last = -(1 << 62)
    for i in range(n):
        if timestamps_ps[i] - last >= dead_ps:
            last = timestamps_ps[i]
        else:
            keep[i] = False
    return keep


@njit(cache=True)
def correlate_windowed(ta_ps, tb_ps, min_ps, bw_ps, nbins):
    """Histogram of delays t_b - t_a falling in [min_ps, min_ps + nbins*bw_ps).

    Sliding-window over two sorted timestamp arrays: for each start tag the
    stop-tag window is advanced monotonically, so the cost is O(Na + Nb + P)
    with P the number of in-window pairs, never O(Na * Nb).
    """
    counts = np.zeros(nbins, dtype=np.int64)
    na = ta_ps.shape[0]
    nb = tb_ps.shape[0]
    if na == 0 or nb == 0:
        return counts
    max_ps = min_ps + bw_ps * nbins
    lo = 0
    hi = 0
    for i in range(na):
        t = ta_ps[i]
        while lo < nb and tb_ps[lo] - t < min_ps:
            lo += 1
        if hi < lo:
            hi = lo
        while hi < nb and tb_ps[hi] - t < max_ps:
            hi += 1
        for j in range(lo, hi):
            counts[(tb_ps[j] - t - min_ps) // bw_ps] += 1
    return counts


@njit(cache=True)
def pair_counts_by_lag(t_ps, port_a, edges_ps):
    """Count photon pairs per lag bin, total and cross-port.

    t_ps is the sorted merged timestamp array, port_a marks photons that left
    through port A. For every ordered pair (i, j) with
    edges_ps[b] <= t_j - t_i < edges_ps[b+1] the pair lands in bin b. Returns
    (n_pairs, n_cross) per bin. Windows are tracked with one pointer pair per
    bin edge plus a prefix sum of port_a, so the cost is O(N * nbins) and does
    not enumerate pairs.
    """
    n = t_ps.shape[0]
    nedges = edges_ps.shape[0]
    nbins = nedges - 1
    npairs = np.zeros(nbins, dtype=np.int64)
    ncross = np.zeros(nbins, dtype=np.int64)
    if n == 0:
        return npairs, ncross
    prefix = np.zeros(n + 1, dtype=np.int64)
    for i in range(n):
        prefix[i + 1] = prefix[i] + (1 if port_a[i] else 0)
    ptr = np.zeros(nedges, dtype=np.int64)
    for i in range(n):
        t = t_ps[i]
        for e in range(nedges):
            p = ptr[e]
            lim = t + edges_ps[e]
            while p < n and t_ps[p] < lim:
                p += 1
            ptr[e] = p
        ai = port_a[i]
        for b in range(nbins):
            lo = ptr[b]
            hi = ptr[b + 1]
            if hi > lo:
                total = hi - lo
                in_a = prefix[hi] - prefix[lo]
                npairs[b] += total
                if ai:
                    ncross[b] += total - in_a
                else:
                    ncross[b] += in_a
    return npairs, ncross
