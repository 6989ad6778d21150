"""Two-photon interference through an unbalanced Mach-Zehnder interferometer.

The photon-pair coincidence suppression is computed semi-analytically: two
exponential wavepackets with decay rate Gamma, Markovian dephasing rates
gamma_a, gamma_b and center-frequency detuning Delta interfere on the output
beamsplitter with time-integrated visibility

    V = Gamma (Gamma + gamma_a + gamma_b)
        / ((Gamma + gamma_a + gamma_b)^2 + (2 pi Delta)^2)

which is applied per overlapping pair using the truth frequencies and
dephasing rates carried by the input stream. Pairs that do not meet at the
output splitter (and re-excitation photons from the same pulse, whose
truncated wavepackets are effectively orthogonal) route independently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from .correlator import CorrelationHistogram, centered_range, correlate
from .stream import TagStream, sort_stream_arrays


class ConfigurationError(ValueError):
    """Measurement configuration inconsistent with the input stream."""


class UndefinedVisibilityError(ZeroDivisionError):
    """The reference (orthogonal) central area vanished."""


@dataclass(frozen=True)
class PairKernelParams:
    """Inputs of the pairwise interference kernel."""

    decay_rate: float  # 1/s, Gamma = 1/lifetime
    dephasing_a: float  # 1/s
    dephasing_b: float  # 1/s
    detuning: float  # Hz

    def __post_init__(self):
        if self.decay_rate <= 0:
            raise ValueError("decay_rate must be > 0")
        if self.dephasing_a < 0 or self.dephasing_b < 0:
            raise ValueError("dephasing rates must be >= 0")


def pair_visibility(params):
    """Time-integrated two-photon coincidence suppression for one pair."""
    r = params.decay_rate + params.dephasing_a + params.dephasing_b
    return params.decay_rate * r / (r * r + (2.0 * math.pi * params.detuning) ** 2)


def _kernel_array(decay_rate, gamma_sum, detuning):
    r = decay_rate + gamma_sum
    return decay_rate * r / (r * r + (2.0 * math.pi * detuning) ** 2)


def remote_visibility_estimate(spectrum_a, spectrum_b, decay_rate,
                               residual_dephasing=0.0):
    """Expected interference visibility of two spectrally diffusing emitters.

    The input spectra are the inhomogeneous center-frequency distributions
    (homogeneous width removed); the estimate averages the pair kernel over
    all frequency-difference combinations:

        V = integral P_a(nu) P_b(nu') K(nu - nu') dnu dnu'

    This is also the expected visibility of photons from two statistically
    independent sources with these frequency distributions.
    """
    step = min(spectrum_a.step, spectrum_b.step)
    lo = min(spectrum_a.detuning[0], spectrum_b.detuning[0])
    hi = max(spectrum_a.detuning[-1], spectrum_b.detuning[-1])
    n = int(math.ceil((hi - lo) / step)) + 1
    grid = lo + np.arange(n) * step

    pa = np.interp(grid, spectrum_a.detuning, spectrum_a.intensity, left=0.0, right=0.0)
    pb = np.interp(grid, spectrum_b.detuning, spectrum_b.intensity, left=0.0, right=0.0)
    for name, p in (("spectrum_a", pa), ("spectrum_b", pb)):
        norm = p.sum() * step
        if not np.isfinite(norm) or norm <= 0:
            raise ValueError(f"{name} is not normalizable")
    pa = pa / (pa.sum() * step)
    pb = pb / (pb.sum() * step)

    # distribution of nu_a - nu_b on the difference grid
    q = np.correlate(pa, pb, mode="full") * step
    zeta = np.arange(-(n - 1), n) * step
    kern = _kernel_array(decay_rate, 2.0 * residual_dephasing, zeta)
    return float(np.sum(q * kern) * step)


# ---------------------------------------------------------------------------
# Monte Carlo Hong-Ou-Mandel experiment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RepStructure:
    """Pulse structure needed to locate and unmix coincidence peaks.

    With a `lifetime` the central-peak areas are obtained by unmixing the
    overlapping two-sided-exponential peaks; without it, by plain window
    integration (adequate when the peaks are well separated).
    """

    rep_period: float  # s
    mzi_delay: float  # s
    lifetime: float | None = None
    jitter_fwhm: float = 0.0


@dataclass
class TPIResult:
    """Two-photon interference outcome with its raw histograms."""

    visibility: float
    uncertainty: float
    parallel_histogram: CorrelationHistogram
    orthogonal_histogram: CorrelationHistogram
    mzi_delay: float
    peak_areas_parallel: dict = field(default_factory=dict)
    peak_areas_orthogonal: dict = field(default_factory=dict)

    def report(self):
        lines = ["# two-photon interference result",
                 f"mzi_delay_s={self.mzi_delay!r}",
                 f"visibility={self.visibility!r}",
                 f"uncertainty={self.uncertainty!r}"]
        return "\n".join(lines) + "\n"

    def export(self, directory, prefix="tpi"):
        import os
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, f"{prefix}_report.txt"), "w") as fh:
            fh.write(self.report())
        self.parallel_histogram.to_csv(os.path.join(directory, f"{prefix}_parallel.csv"))
        self.orthogonal_histogram.to_csv(os.path.join(directory, f"{prefix}_orthogonal.csv"))


def _route_through_mzi(stream, delta_ps, rng, suppress, decay_rate):
    """One polarization configuration of the MZI: returns the port stream.

    Every photon picks the short or long arm with equal probability; pairs
    whose wavepackets start simultaneously at the output splitter (long-arm
    photon of one pulse meeting the short-arm photon of the pulse one MZI
    delay later) get correlated output ports with coincidence probability
    (1 - V)/2. All other photons choose ports independently.
    """
    ts = stream.timestamp
    n = len(ts)
    rep_rate = float(stream.metadata["rep_rate"])
    duration_s = stream.duration * 1e-12
    n_periods = int(math.floor(duration_s * rep_rate)) + 1
    period_ps = 1e12 / rep_rate
    base = np.arange(n_periods, dtype=np.float64) * period_ps
    pulse_times = np.empty(2 * n_periods, dtype=np.float64)
    pulse_times[0::2] = base
    pulse_times[1::2] = base + delta_ps

    # emission delays are strictly positive, +0.5 absorbs the ps rounding
    pulse_idx = np.searchsorted(pulse_times, ts + 0.5, side="right") - 1
    arm = rng.integers(0, 2, n).astype(np.int8)  # 0 short, 1 long
    start = pulse_times[pulse_idx] + arm * float(delta_ps)

    order = np.argsort(start, kind="stable")
    s_sorted = start[order]
    ports = rng.integers(0, 2, n).astype(np.uint8)  # defaults, overwritten for pairs

    freq = stream.truth_frequency
    deph = stream.truth_dephasing_rate

    # walk runs of identical wavepacket start times
    boundaries = np.nonzero(np.diff(s_sorted) != 0)[0] + 1
    run_starts = np.concatenate([[0], boundaries])
    run_ends = np.concatenate([boundaries, [n]])
    for a, b in zip(run_starts, run_ends):
        if b - a < 2:
            continue
        members = order[a:b]
        used = np.zeros(len(members), dtype=bool)
        for i in range(len(members)):
            if used[i]:
                continue
            for j in range(i + 1, len(members)):
                if used[j] or pulse_idx[members[i]] == pulse_idx[members[j]]:
                    continue
                used[i] = used[j] = True
                mi, mj = members[i], members[j]
                if suppress:
                    v = _kernel_array(decay_rate, deph[mi] + deph[mj],
                                      freq[mi] - freq[mj])
                else:
                    v = 0.0
                if rng.random() < (1.0 - v) / 2.0:
                    p = rng.integers(0, 2)
                    ports[mi], ports[mj] = p, 1 - p
                else:
                    p = rng.integers(0, 2)
                    ports[mi] = ports[mj] = p
                break

    clicks = ts + arm.astype(np.int64) * int(delta_ps)
    ch, tsort = sort_stream_arrays(ports, clicks)[:2]
    return TagStream(ch, tsort, stream.duration + int(delta_ps),
                     ["port_a", "port_b"], dict(stream.metadata), validate=False)


def hom_simulate(stream, mzi_delay, polarization="parallel", seed=0,
                 bin_width=50e-12, detector=None):
    """Run the unbalanced-MZI two-photon interference experiment.

    `stream` must be a truth stream from double-pulse excitation whose pulse
    separation equals `mzi_delay`; the long interferometer arm then overlaps
    consecutive photons at the output splitter. The requested polarization
    configures the signal arm (parallel: interference on; orthogonal:
    distinguishable photons, no suppression); a reference run without
    suppression is always simulated for normalization, and the visibility is
    extracted from the central-peak areas of the two histograms.
    """
    if polarization not in ("parallel", "orthogonal"):
        raise ValueError(f"polarization must be parallel|orthogonal, got {polarization!r}")
    if not stream.has_truth:
        raise ConfigurationError("hom_simulate requires a truth stream")
    pair_delay = stream.metadata.get("pulse_pair_delay")
    if pair_delay is None:
        raise ConfigurationError("stream was not produced by double-pulse excitation")
    if abs(float(pair_delay) - mzi_delay) > 1e-12:
        raise ConfigurationError(
            f"mzi_delay {mzi_delay} does not match the pulse separation {pair_delay}")
    lifetime = float(stream.metadata["lifetime"])
    rep_period = 1.0 / float(stream.metadata["rep_rate"])
    delta_ps = int(round(mzi_delay * 1e12))

    ss = np.random.SeedSequence(seed)
    rng_signal, rng_ref, rng_det = (np.random.default_rng(s) for s in ss.spawn(3))

    signal = _route_through_mzi(stream, delta_ps, rng_signal,
                                suppress=(polarization == "parallel"),
                                decay_rate=1.0 / lifetime)
    reference = _route_through_mzi(stream, delta_ps, rng_ref,
                                   suppress=False, decay_rate=1.0 / lifetime)
    if detector is not None:
        from .stream import apply_detector
        det_ss = rng_det.integers(0, 2**63, 2)
        signal = apply_detector(signal, detector, int(det_ss[0]))
        reference = apply_detector(reference, detector, int(det_ss[1]))

    half_range = 1.5 * rep_period
    drange = centered_range(half_range, bin_width)
    h_par = correlate(0, 1, signal, bin_width, drange)
    h_ort = correlate(0, 1, reference, bin_width, drange)

    rep = RepStructure(rep_period=rep_period, mzi_delay=mzi_delay,
                       lifetime=lifetime,
                       jitter_fwhm=detector.jitter_fwhm if detector else 0.0)
    v, err, areas_p, areas_o = _visibility(h_par, h_ort, rep)
    return TPIResult(visibility=v, uncertainty=err,
                     parallel_histogram=h_par, orthogonal_histogram=h_ort,
                     mzi_delay=mzi_delay,
                     peak_areas_parallel=areas_p, peak_areas_orthogonal=areas_o)


# ---------------------------------------------------------------------------
# visibility extraction
# ---------------------------------------------------------------------------

def _peak_positions(rep, lo, hi):
    """Coincidence-peak delay comb m*T + j*Delta inside [lo, hi]."""
    positions = set()
    t, d = rep.rep_period, rep.mzi_delay
    m_lo = int(math.floor(lo / t)) - 2
    m_hi = int(math.ceil(hi / t)) + 2
    for m in range(m_lo, m_hi + 1):
        for j in (-2, -1, 0, 1, 2):
            pos = m * t + j * d
            if lo - 2 * d <= pos <= hi + 2 * d:
                positions.add(round(pos * 1e12))
    return sorted(p * 1e-12 for p in positions)


def _peak_shape_matrix(hist, positions, rep):
    """Binned peak profiles for the unmixing, one unit-area column per component.

    Photon pairs from different pulses give two-sided exponential (Laplace)
    peaks on the m*T + j*Delta comb. Re-excitation pairs within one pulse are
    time ordered, so their (short, long) arm combinations put one-sided
    exponential satellites decaying outward from +-Delta; without dedicated
    columns that mass leaks into the zero peak and biases the visibility.
    """
    gamma = 1.0 / rep.lifetime
    edges = hist.delay_min + np.arange(len(hist.counts) + 1) * hist.bin_width

    def laplace_cdf(x):
        x = np.asarray(x)
        return np.where(x < 0, 0.5 * np.exp(gamma * np.minimum(x, 0.0)),
                        1.0 - 0.5 * np.exp(-gamma * np.maximum(x, 0.0)))

    def onesided_cdf(x, sign):
        x = sign * np.asarray(x)
        return np.where(x < 0, 0.0, 1.0 - np.exp(-gamma * np.maximum(x, 0.0)))

    keys = []
    cols = []
    for pos in positions:
        keys.append(("peak", pos))
        cols.append(np.diff(laplace_cdf(edges - pos)))
    for sign in (1.0, -1.0):
        pos = sign * rep.mzi_delay
        keys.append(("satellite", pos))
        shifted = onesided_cdf(edges - pos, sign)
        cols.append(np.diff(shifted) if sign > 0 else -np.diff(shifted))
    a = np.column_stack(cols)
    if rep.jitter_fwhm > 0:
        # both detectors jitter; convolve with the combined Gaussian
        sigma = rep.jitter_fwhm / (2.0 * math.sqrt(2.0 * math.log(2.0))) * math.sqrt(2.0)
        nk = int(math.ceil(4.0 * sigma / hist.bin_width))
        kx = np.arange(-nk, nk + 1) * hist.bin_width
        kern = np.exp(-0.5 * (kx / sigma) ** 2)
        kern /= kern.sum()
        for i in range(a.shape[1]):
            a[:, i] = np.convolve(a[:, i], kern, mode="same")
    return keys, a


def _unmix_peak_areas(hist, rep):
    """Weighted non-negative unmixing of overlapping coincidence peaks.

    Returns ({position: area}, {position: sigma}). Weighting is Poisson; the
    covariance comes from the weighted normal equations and is approximate
    where non-negativity constraints are active.
    """
    lo, hi = hist.delay_min, hist.delay_max
    positions = _peak_positions(rep, lo, hi)
    keys, a = _peak_shape_matrix(hist, positions, rep)
    y = hist.counts.astype(float)
    w = 1.0 / np.sqrt(np.maximum(y, 1.0))
    coeff, _ = nnls(a * w[:, None], y * w)
    try:
        cov = np.linalg.inv((a * w[:, None] ** 2).T @ a)
        sig = np.sqrt(np.maximum(np.diag(cov), 0.0))
    except np.linalg.LinAlgError:
        sig = np.sqrt(np.maximum(coeff, 1.0))
    areas = {k: float(c) for k, c in zip(keys, coeff)}
    sigmas = {k: float(s) for k, s in zip(keys, sig)}
    return areas, sigmas


def _window_area(hist, center, half_width):
    sel = np.abs(hist.centers - center) <= half_width
    return float(hist.counts[sel].sum())


def _visibility(parallel, orthogonal, rep):
    if rep.lifetime is not None:
        areas_p, sig_p = _unmix_peak_areas(parallel, rep)
        areas_o, sig_o = _unmix_peak_areas(orthogonal, rep)
        zero = ("peak", 0.0)
        a_par, s_par = areas_p[zero], sig_p[zero]
        a_ort, s_ort = areas_o[zero], sig_o[zero]
    else:
        # window integration over one MZI delay around zero, clipped to the
        # nearest neighboring peak so windows never overlap
        gaps = [abs(p) for p in _peak_positions(rep, -2 * rep.rep_period, 2 * rep.rep_period)
                if abs(p) > rep.mzi_delay / 100]
        half = min(rep.mzi_delay, min(gaps)) / 2.0 if gaps else rep.mzi_delay / 2.0
        a_par = _window_area(parallel, 0.0, half)
        a_ort = _window_area(orthogonal, 0.0, half)
        s_par, s_ort = math.sqrt(max(a_par, 1.0)), math.sqrt(max(a_ort, 1.0))
        areas_p = {("peak", 0.0): a_par}
        areas_o = {("peak", 0.0): a_ort}
    if a_ort <= 0:
        raise UndefinedVisibilityError("orthogonal central peak area is zero")
    v = 1.0 - a_par / a_ort
    err = math.hypot(s_par / a_ort, a_par * s_ort / a_ort**2)
    return v, err, areas_p, areas_o


def visibility_from_histograms(parallel, orthogonal, rep):
    """Two-photon interference visibility V = 1 - A_par(0) / A_orth(0).

    Central-peak areas are unmixed from the known peak comb when
    `rep.lifetime` is given, otherwise integrated over one MZI delay window.
    Returns (visibility, uncertainty) with Poisson error propagation.
    """
    return _visibility(parallel, orthogonal, rep)[:2]
