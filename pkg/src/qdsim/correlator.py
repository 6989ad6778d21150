"""Coincidence analysis of tag streams: cross-correlation histograms, pulsed g2
peak integration, long-delay (blinking) profiles.

Delay convention: delay = t_stop - t_start, signed. For a zero-centered bin
use `centered_range`, which places one bin symmetrically around delay 0.
Uncertainties are Poisson (sqrt N) throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._kernels import correlate_windowed


class ResolutionError(ValueError):
    """Histogram binning too coarse for the requested analysis."""


@dataclass
class CorrelationHistogram:
    """Binned coincidence counts versus signed delay.

    `counts[k]` is the number of ordered tag pairs (i in start channel, j in
    stop channel) whose delay t_j - t_i falls in
    [delay_min + k*bin_width, delay_min + (k+1)*bin_width).
    """

    bin_width: float  # s
    delay_min: float  # s
    delay_max: float  # s
    counts: np.ndarray
    n_start: int
    n_stop: int
    duration: float  # s
    normalization: str = "poisson_level"
    warnings: list = field(default_factory=list)

    @property
    def centers(self):
        k = np.arange(len(self.counts))
        return self.delay_min + (k + 0.5) * self.bin_width

    @property
    def poisson_level(self):
        """Expected counts per bin for two independent Poisson streams."""
        if self.duration <= 0:
            return math.nan
        return self.n_start * self.n_stop * self.bin_width / self.duration

    @property
    def normalized(self):
        level = self.poisson_level
        if not level > 0:
            return np.full(len(self.counts), math.nan)
        return self.counts / level

    @property
    def normalized_uncertainty(self):
        level = self.poisson_level
        if not level > 0:
            return np.full(len(self.counts), math.nan)
        return np.sqrt(np.maximum(self.counts, 1)) / level

    def to_csv(self, destination):
        """Write delay_s, counts, normalized, uncertainty with header metadata."""
        header = (f"# correlation histogram\n"
                  f"# bin_width_s={self.bin_width!r}\n"
                  f"# delay_range_s=({self.delay_min!r},{self.delay_max!r})\n"
                  f"# normalization={self.normalization}\n"
                  f"# n_start={self.n_start} n_stop={self.n_stop} duration_s={self.duration!r}\n"
                  f"delay_s,counts,normalized,uncertainty\n")
        body = "\n".join(
            f"{float(d)!r},{int(c)},{float(n)!r},{float(u)!r}" for d, c, n, u in
            zip(self.centers, self.counts, self.normalized, self.normalized_uncertainty))
        text = header + body + "\n"
        if hasattr(destination, "write"):
            destination.write(text)
        else:
            with open(destination, "w") as fh:
                fh.write(text)


@dataclass
class G2Result:
    """Pulsed second-order correlation summary."""

    g2_zero: float
    g2_zero_err: float
    peak_areas: dict  # pulse number -> integrated counts
    rep_period: float


def centered_range(half_range, bin_width):
    """(min, max) covering +-half_range with one bin centered on delay zero."""
    n_side = int(math.ceil((half_range - bin_width / 2) / bin_width))
    lo = -(n_side + 0.5) * bin_width
    return lo, -lo


def _resolve_channels(stream, selector):
    if isinstance(selector, str):
        try:
            return [stream.channel_labels.index(selector)]
        except ValueError:
            raise ValueError(f"no channel labeled {selector!r}") from None
    if np.isscalar(selector):
        return [int(selector)]
    return [int(c) for c in selector]


def correlate(a, b, stream, bin_width, delay_range):
    """Cross-correlation histogram of channels `a` (start) vs `b` (stop).

    Sliding-window algorithm over the sorted tag arrays, O(N + P) with P the
    number of in-window pairs; exactly equivalent to the brute-force double
    loop over all pairs.
    """
    if bin_width <= 0:
        raise ValueError("bin_width must be > 0")
    dmin, dmax = delay_range
    if not dmax > dmin:
        raise ValueError("delay_range must satisfy max > min")
    bw_ps = int(round(bin_width * 1e12))
    if bw_ps < 1:
        raise ValueError("bin_width below 1 ps resolution")
    nbins = int(round((dmax - dmin) / bin_width))
    if nbins < 1:
        raise ValueError("delay_range shorter than one bin")
    min_ps = int(round(dmin * 1e12))

    cha = _resolve_channels(stream, a)
    chb = _resolve_channels(stream, b)
    ta = np.sort(np.concatenate([stream.channel_times(c) for c in cha]))
    tb = np.sort(np.concatenate([stream.channel_times(c) for c in chb]))

    warnings = []
    if len(ta) == 0 or len(tb) == 0:
        warnings.append("empty_channel")
        counts = np.zeros(nbins, dtype=np.int64)
    else:
        counts = correlate_windowed(ta, tb, min_ps, bw_ps, nbins)
    return CorrelationHistogram(
        bin_width=bw_ps * 1e-12,
        delay_min=min_ps * 1e-12,
        delay_max=(min_ps + bw_ps * nbins) * 1e-12,
        counts=counts,
        n_start=len(ta),
        n_stop=len(tb),
        duration=stream.duration * 1e-12,
        warnings=warnings,
    )


def g2_pulsed(histogram, rep_period, n_side_peaks=10):
    """Integrate pulse peaks and normalize the zero-delay one.

    Counts are assigned to the nearest multiple of `rep_period` (integration
    window = one full repetition period per peak). g2(0) is the zero-peak area
    over the mean of the `n_side_peaks` nearest side peaks on each side, with
    Poisson uncertainty propagation.
    """
    if rep_period < 2 * histogram.bin_width:
        raise ResolutionError(
            f"rep_period {rep_period} below two bins ({histogram.bin_width} each)")
    span = min(-histogram.delay_min, histogram.delay_max)
    if span < 5 * rep_period:
        raise ValueError("histogram must span at least +-5 repetition periods")

    centers = histogram.centers
    k = np.rint(centers / rep_period).astype(np.int64)
    # only peaks fully contained in the histogram range
    kmax_pos = int(math.floor((histogram.delay_max - rep_period / 2) / rep_period))
    kmax_neg = int(math.floor((-histogram.delay_min - rep_period / 2) / rep_period))
    valid = (k >= -kmax_neg) & (k <= kmax_pos)
    areas = {}
    for kk in range(-kmax_neg, kmax_pos + 1):
        areas[kk] = int(histogram.counts[valid & (k == kk)].sum())

    side = [areas[kk] for kk in areas
            if kk != 0 and abs(kk) <= n_side_peaks]
    if not side:
        raise ValueError("no side peaks available for normalization")
    side = np.asarray(side, dtype=float)
    mean_side = side.mean()
    a0 = float(areas[0])
    if mean_side <= 0:
        raise ValueError("side peaks empty, cannot normalize")
    g2 = float(a0 / mean_side)
    # Poisson on the zero peak, standard error of the side-peak mean
    var = (max(a0, 1.0) / mean_side**2
           + (a0 / mean_side**2)**2 * side.sum() / len(side)**2)
    return G2Result(g2_zero=g2, g2_zero_err=math.sqrt(var),
                    peak_areas=areas, rep_period=rep_period)


@dataclass
class LongDelayProfile:
    """Poisson-normalized correlation versus |delay| on a coarse grid."""

    delay: np.ndarray  # bin centers, s
    value: np.ndarray
    uncertainty: np.ndarray
    flatness: float  # max |value - 1| inside the assessed range
    flat_range: tuple


def long_delay_profile(histogram, coarse_bin=13e-9, flat_range=(50e-9, 1e-6),
                       rep_period=None):
    """Rebin a correlation histogram by |delay| and assess its flatness.

    Bunching from blinking shows up as value > 1 at short delays; an emitter
    with i.i.d. pulse outcomes stays at 1 for all delays. For a pulsed stream
    pass `rep_period`: the coarse bin then snaps to the nearest whole number
    of periods so every bin holds the same number of pulse peaks and the
    profile is free of binning moire.
    """
    if min(-histogram.delay_min, histogram.delay_max) < flat_range[1]:
        raise ValueError("histogram range must reach the requested flat_range")
    level = histogram.poisson_level
    centers = np.abs(histogram.centers)
    if rep_period is not None:
        # windows centered on the pulse comb, one whole number of periods each,
        # normalized by ideal coverage: exactly one peak per period regardless
        # of how the fine bins quantize the window edges
        coarse_bin = max(1, round(coarse_bin / rep_period)) * rep_period
        idx = np.floor(centers / coarse_bin + 0.5).astype(np.int64)
        span = min(-histogram.delay_min, histogram.delay_max)
        nbins = int(math.floor(span / coarse_bin - 0.5)) + 1
        keep = idx < nbins
        counts = np.bincount(idx[keep], weights=histogram.counts[keep],
                             minlength=nbins)
        expected = level * coarse_bin / histogram.bin_width \
            * np.where(np.arange(nbins) == 0, 1.0, 2.0)
        value = counts / expected
        err = np.sqrt(np.maximum(counts, 1)) / expected
        delay = np.arange(nbins) * coarse_bin
    else:
        idx = np.floor(centers / coarse_bin).astype(np.int64)
        nbins = int(idx.max()) + 1
        counts = np.bincount(idx, weights=histogram.counts, minlength=nbins)
        nb = np.bincount(idx, minlength=nbins)
        ok = nb > 0
        value = np.full(nbins, math.nan)
        err = np.full(nbins, math.nan)
        value[ok] = counts[ok] / (nb[ok] * level)
        err[ok] = np.sqrt(np.maximum(counts[ok], 1)) / (nb[ok] * level)
        delay = (np.arange(nbins) + 0.5) * coarse_bin
    window = np.isfinite(value) & (delay >= flat_range[0]) & (delay <= flat_range[1])
    flatness = float(np.max(np.abs(value[window] - 1.0))) if window.any() else math.nan
    return LongDelayProfile(delay=delay, value=value, uncertainty=err,
                            flatness=flatness, flat_range=tuple(flat_range))


def merge_histograms(parts):
    """Sum partial histograms from a partitioned correlation run.

    Parts must share binning and acquisition metadata; start-tag counts add.
    """
    first = parts[0]
    counts = np.zeros_like(first.counts)
    n_start = 0
    for p in parts:
        if (p.bin_width, p.delay_min, p.delay_max) != \
                (first.bin_width, first.delay_min, first.delay_max):
            raise ValueError("histogram binning mismatch in merge")
        counts = counts + p.counts
        n_start += p.n_start
    return CorrelationHistogram(
        bin_width=first.bin_width, delay_min=first.delay_min,
        delay_max=first.delay_max, counts=counts, n_start=n_start,
        n_stop=first.n_stop, duration=first.duration,
        warnings=sorted({w for p in parts for w in p.warnings}))
