"""Photon-correlation Fourier spectroscopy on simulated photon streams.

A scanned Mach-Zehnder interferometer routes each photon to one of two output
ports with probability 1/2 [1 +- kappa c_h cos(2 pi nu delta / c + phi(t))],
where delta is the optical path difference, c_h the homogeneous coherence at
that path difference and phi a slow linear dither phase. Photon pairs within a
lag bin tau then show a cross-port anticorrelation

    g_x(tau) = 1 - 1/2 c^2(delta; tau),

whose depth measures the interferogram envelope c^2, the Fourier transform of
the spectral correlation p(zeta; tau) (the distribution of frequency
differences between photons separated by tau). The envelope is cosine
transformed over the finite scan with a Hann apodization, whose point-source
response matches the quoted resolution 1/(max_opd / c); a static line of
Lorentzian FWHM w therefore appears in p(zeta) with FWHM 2 w.

Linewidth extraction fits a Lorentzian to p(zeta; tau) per lag bin and reports
FWHM / 2. Two fit modes exist: "measured" fits the apodized transform as-is
(the instrument-limited number an experiment reports), "deconvolved" fits a
Lorentzian envelope model through the known scan window, which recovers the
underlying spectral-correlation FWHM exactly for Lorentzian lines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import curve_fit

from ._kernels import pair_counts_by_lag
from .emitter import simulate_emission

C_LIGHT = 299792458.0


def default_tau_bins(lo=10e-9, hi=10e-3, per_decade=5):
    """Log-spaced lag bin edges, `per_decade` bins per decade."""
    n = int(round(per_decade * math.log10(hi / lo)))
    return np.geomspace(lo, hi, n + 1)


@dataclass(frozen=True)
class PCFSScanConfig:
    """Scan geometry and acquisition settings of the PCFS measurement."""

    max_opd: float = 0.372  # m
    opd_step: float = 0.004  # m
    dither_rate: float = 10.0  # fringes / s
    tau_bins: np.ndarray = field(default_factory=default_tau_bins)
    acquisition_time: float | None = None  # s per stage position; None = auto
    min_pairs: float = 1e4  # target pairs in the sparsest lag bin (auto mode)
    rep_rate: float = 304.8e6  # quadrupled excitation rate used for PCFS
    sampling_fraction: float = 0.01  # collection+detection efficiency folded in
    instrument_contrast: float = 1.0  # kappa

    def __post_init__(self):
        if not 0 < self.opd_step <= self.max_opd:
            raise ValueError("require 0 < opd_step <= max_opd")
        edges = np.asarray(self.tau_bins, dtype=float)
        if len(edges) < 2 or not np.all(np.diff(edges) > 0):
            raise ValueError("tau_bins must be strictly increasing edges")
        object.__setattr__(self, "tau_bins", edges)

    @property
    def tau_centers(self):
        return np.sqrt(self.tau_bins[:-1] * self.tau_bins[1:])

    def opd_positions(self):
        return np.arange(pcfs_grid(self).positions) * self.opd_step


@dataclass(frozen=True)
class PCFSGrid:
    """Frequency resolution and coverage implied by the scan geometry."""

    resolution: float  # Hz, in the spectral correlation
    spectral_range: float  # Hz
    positions: int

    @property
    def lorentzian_resolution(self):
        """Effective single-spectrum resolution under the Lorentzian model."""
        return self.resolution / 2.0


def pcfs_grid(config):
    """Resolution 1/(max_opd/c), range 1/(2 opd_step / c), stage position count."""
    return PCFSGrid(
        resolution=C_LIGHT / config.max_opd,
        spectral_range=C_LIGHT / (2.0 * config.opd_step),
        positions=int(math.floor(config.max_opd / config.opd_step)) + 1,
    )


# ---------------------------------------------------------------------------
# per-position measurement
# ---------------------------------------------------------------------------

@dataclass
class PositionContrast:
    """Fringe contrast extracted at one stage position, per lag bin."""

    opd: float
    contrast: np.ndarray  # c(opd) per tau bin
    contrast_sq: np.ndarray  # c^2, the transform input
    sigma_c2: np.ndarray
    n_pairs: np.ndarray
    insufficient: np.ndarray  # bool per tau bin


def mzi_dither_correlate(stream, opd, config, seed, lifetime=None):
    """Measure the fringe contrast at one path difference, per lag bin.

    Routes every photon of the truth stream through the dithered
    interferometer, cross-correlates the two output ports in the configured
    lag bins and converts the anticorrelation depth into the squared fringe
    contrast: c^2 = 2 - 4 N_cross / N_pairs. Bins with too few pairs for a
    meaningful depth are flagged.
    """
    if not stream.has_truth:
        raise ValueError("mzi_dither_correlate requires a truth stream")
    if lifetime is None:
        if "lifetime" not in stream.metadata:
            raise ValueError("lifetime not in stream metadata; pass it explicitly")
        lifetime = float(stream.metadata["lifetime"])
    rng = np.random.default_rng(seed)
    ts = stream.timestamp
    t_s = ts * 1e-12
    duration_s = stream.duration * 1e-12
    if duration_s * config.dither_rate < 2.0 - 1e-9:
        raise ValueError("stream must span at least two dither fringes")

    tau_interf = opd / C_LIGHT
    homog = (1.0 / lifetime + 2.0 * stream.truth_dephasing_rate) / (2.0 * math.pi)
    coherence = np.exp(-math.pi * homog * tau_interf)
    phase = 2.0 * math.pi * (stream.truth_frequency * tau_interf
                             + config.dither_rate * t_s)
    p_a = 0.5 * (1.0 + config.instrument_contrast * coherence * np.cos(phase))
    port_a = rng.random(len(ts)) < p_a

    edges_ps = np.round(config.tau_bins * 1e12).astype(np.int64)
    n_pairs, n_cross = pair_counts_by_lag(ts, port_a, edges_ps)

    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = n_cross / n_pairs
        c2 = 2.0 - 4.0 * ratio
        sigma = 4.0 * np.sqrt(ratio * (1.0 - ratio) / n_pairs)
    insufficient = n_pairs < 100
    c2 = np.where(insufficient, np.nan, c2)
    contrast = np.sqrt(np.clip(c2, 0.0, None))
    return PositionContrast(opd=float(opd), contrast=contrast, contrast_sq=c2,
                            sigma_c2=sigma, n_pairs=n_pairs,
                            insufficient=insufficient)


# ---------------------------------------------------------------------------
# spectral correlation
# ---------------------------------------------------------------------------

@dataclass
class SpectralCorrelation:
    """p(zeta; tau): symmetric, unit-area distribution of frequency lags."""

    zeta: np.ndarray  # Hz
    p: np.ndarray  # (n_tau, n_zeta), >= 0, unit area per bin
    resolution: float
    spectral_range: float
    tau_edges: np.ndarray
    opd: np.ndarray
    max_opd: float
    apodization: str
    envelope: np.ndarray  # measured c^2 per (position, tau)
    sigma_envelope: np.ndarray
    n_pairs: np.ndarray
    flagged: np.ndarray  # bool per tau bin: insufficient statistics

    @property
    def tau_centers(self):
        return np.sqrt(self.tau_edges[:-1] * self.tau_edges[1:])

    def to_csv(self, destination):
        header = ("# spectral correlation p(zeta; tau)\n"
                  f"# resolution_hz={self.resolution!r}\n"
                  f"# spectral_range_hz={self.spectral_range!r}\n"
                  "# columns: zeta_hz then one column per tau bin center (s)\n"
                  "zeta_hz," + ",".join(repr(float(t)) for t in self.tau_centers) + "\n")
        rows = [",".join([repr(float(z))] + [repr(float(v)) for v in self.p[:, i]])
                for i, z in enumerate(self.zeta)]
        text = header + "\n".join(rows) + "\n"
        if hasattr(destination, "write"):
            destination.write(text)
        else:
            with open(destination, "w") as fh:
                fh.write(text)


def _apodization(delta, max_opd, kind):
    if kind == "hann":
        return 0.5 * (1.0 + np.cos(math.pi * delta / max_opd))
    if kind == "rect":
        return np.ones(len(delta))
    raise ValueError(f"unknown apodization {kind!r}")


def _transform_weights(delta, max_opd, kind):
    w = _apodization(delta, max_opd, kind)
    w[0] *= 0.5  # one-sided cosine series counts the zero-lag term once
    return w


def _cosine_transform(env, delta, zeta, weights):
    """Symmetric cosine transform of one interferogram envelope."""
    cosm = np.cos(2.0 * math.pi * np.outer(zeta, delta) / C_LIGHT)
    return cosm @ (weights * env)


def spectral_correlation(contrasts, config, zeta=None, apodization="hann"):
    """Transform measured fringe contrasts into the spectral correlation.

    `contrasts` is a list of PositionContrast (one per stage position, in
    ascending opd order) or an array of c values with shape
    (positions, n_tau). The squared envelope is cosine transformed with the
    selected apodization, clipped at zero and normalized to unit area per lag
    bin.
    """
    grid = pcfs_grid(config)
    delta = config.opd_positions()
    if isinstance(contrasts, (list, tuple)) and isinstance(contrasts[0], PositionContrast):
        env = np.vstack([pc.contrast_sq for pc in contrasts])
        sigma = np.vstack([pc.sigma_c2 for pc in contrasts])
        n_pairs = np.vstack([pc.n_pairs for pc in contrasts])
        insufficient = np.vstack([pc.insufficient for pc in contrasts])
        opds = np.array([pc.opd for pc in contrasts])
        if not np.allclose(opds, delta):
            raise ValueError("contrasts not sampled on the configured opd grid")
    else:
        c = np.asarray(contrasts, dtype=float)
        env = c * c
        sigma = np.zeros_like(env)
        n_pairs = np.full(env.shape, -1, dtype=np.int64)
        insufficient = np.zeros(env.shape, dtype=bool)
    if env.shape[0] != grid.positions:
        raise ValueError(f"expected {grid.positions} positions, got {env.shape[0]}")
    n_tau = env.shape[1]

    if zeta is None:
        step = grid.resolution / 8.0
        half = grid.spectral_range / 2.0
        m = int(math.floor(half / step))
        zeta = np.arange(-m, m + 1) * step
    weights = _transform_weights(delta, config.max_opd, apodization)

    p = np.empty((n_tau, len(zeta)))
    flagged = np.zeros(n_tau, dtype=bool)
    for b in range(n_tau):
        e = env[:, b]
        bad = ~np.isfinite(e)
        if bad.any():
            flagged[b] = True
            e = np.where(bad, 0.0, e)
        raw = _cosine_transform(e, delta, zeta, weights)
        raw = np.clip(raw, 0.0, None)
        area = np.trapezoid(raw, zeta)
        p[b] = raw / area if area > 0 else raw
    return SpectralCorrelation(
        zeta=zeta, p=p, resolution=grid.resolution,
        spectral_range=grid.spectral_range, tau_edges=config.tau_bins,
        opd=delta, max_opd=config.max_opd, apodization=apodization,
        envelope=env, sigma_envelope=sigma, n_pairs=n_pairs,
        flagged=flagged | insufficient.any(axis=0))


# ---------------------------------------------------------------------------
# linewidth extraction
# ---------------------------------------------------------------------------

@dataclass
class PCFSResult:
    """Emission linewidth versus photon-pair time separation."""

    tau: np.ndarray  # bin centers, s
    linewidth: np.ndarray  # Hz
    uncertainty: np.ndarray  # Hz, stat (+) systematic per bin
    flags: list  # list of tuples of str per bin
    w_measured: np.ndarray  # fitted p(zeta) FWHM, instrument included
    w_deconvolved: np.ndarray  # fitted FWHM with the scan window removed
    stat_uncertainty: np.ndarray  # Hz, fit error alone
    systematic: np.ndarray  # Hz, instrument systematic (common across bins)
    mode: str
    model: str = "lorentzian"

    def long_tau_level(self, min_tau=1e-6,
                       skip_flags=("insufficient_pairs", "fit_failed", "misfit")):
        """Weighted linewidth over the long-lag plateau.

        The statistical errors average down across bins; the instrument
        systematic is common to all bins and is carried through unshrunk.
        Resolution-limited bins still carry their floor value and its
        systematic, so they count unless listed in `skip_flags`.
        """
        ok = [i for i in range(len(self.tau))
              if self.tau[i] >= min_tau
              and not any(f in skip_flags for f in self.flags[i])
              and np.isfinite(self.linewidth[i])]
        if not ok:
            raise ValueError("no usable long-tau bins")
        w = 1.0 / np.maximum(self.stat_uncertainty[ok], 1e-9) ** 2
        level = float(np.sum(w * self.linewidth[ok]) / np.sum(w))
        stat = 1.0 / math.sqrt(np.sum(w))
        sys = float(np.mean(self.systematic[ok]))
        return level, math.hypot(stat, sys)

    def to_csv(self, destination):
        header = ("# linewidth versus photon-pair separation\n"
                  f"# mode={self.mode} model={self.model}\n"
                  "tau_s,linewidth_hz,uncertainty_hz,flags\n")
        rows = []
        for i in range(len(self.tau)):
            fl = ";".join(self.flags[i]) if self.flags[i] else "ok"
            rows.append(f"{float(self.tau[i])!r},{float(self.linewidth[i])!r},"
                        f"{float(self.uncertainty[i])!r},{fl}")
        text = header + "\n".join(rows) + "\n"
        if hasattr(destination, "write"):
            destination.write(text)
        else:
            with open(destination, "w") as fh:
                fh.write(text)


def _direct_fwhm(x, y):
    half = y.max() / 2.0
    above = y >= half
    if not above.any():
        return 0.0
    i0, i1 = np.nonzero(above)[0][[0, -1]]
    lo = x[i0] if i0 == 0 else np.interp(half, [y[i0 - 1], y[i0]], [x[i0 - 1], x[i0]])
    hi = x[i1] if i1 == len(y) - 1 else np.interp(half, [y[i1 + 1], y[i1]], [x[i1 + 1], x[i1]])
    return float(hi - lo)


def _fit_lorentzian_plain(zeta, p):
    scale = float(p.max())  # fit at unit peak so the optimizer tolerances bite
    y = p / scale

    def model(z, a, w, b):
        hw = w / 2.0
        return a * hw * hw / (z * z + hw * hw) + b

    w0 = max(_direct_fwhm(zeta, p), (zeta[1] - zeta[0]) * 2)
    popt, pcov = curve_fit(model, zeta, y, p0=[1.0, w0, 0.0],
                           bounds=([0.0, 0.0, -np.inf], [np.inf, np.inf, np.inf]),
                           x_scale=[1.0, w0, 0.1], maxfev=4000)
    resid = y - model(zeta, *popt)
    return popt[1], math.sqrt(max(pcov[1, 1], 0.0)), float(np.sqrt(np.mean(resid**2)))


def _fit_lorentzian_deconvolved(sc, b):
    """Fit a Lorentzian-line envelope exp(-pi W delta / c) through the window."""
    delta = sc.opd
    weights = _transform_weights(delta, sc.max_opd, sc.apodization)
    zeta = sc.zeta
    cosm = np.cos(2.0 * math.pi * np.outer(zeta, delta) / C_LIGHT)
    scale = float(sc.p[b].max())
    y = sc.p[b] / scale

    def model(z, a, w, off):
        env = np.exp(-math.pi * w * delta / C_LIGHT)
        t = cosm @ (weights * env)
        return a * t / t.max() + off

    w0 = max(_direct_fwhm(zeta, y), sc.resolution / 4)
    popt, pcov = curve_fit(model, zeta, y, p0=[1.0, w0, 0.0],
                           bounds=([0.0, 0.0, -np.inf],
                                   [np.inf, sc.spectral_range, np.inf]),
                           x_scale=[1.0, w0, 0.1], maxfev=4000)
    resid = y - model(zeta, *popt)
    return popt[1], math.sqrt(max(pcov[1, 1], 0.0)), float(np.sqrt(np.mean(resid**2)))


def linewidth_vs_tau(sc, mode="measured"):
    """Fit a Lorentzian per lag bin; emission linewidth = fitted FWHM / 2.

    In "measured" mode the fit runs directly on the apodized transform, so the
    scan-window response is part of the number, as in the real measurement;
    bins whose fitted width is not above the scan resolution are flagged
    `resolution_limited` and fall back to the model-free half-maximum width
    of p(zeta) (the resolution floor, resolution/2 for a point source). In
    "deconvolved" mode the Lorentzian envelope is fitted through the known
    window, recovering the true spectral-correlation FWHM for Lorentzian
    lines. The uncertainty combines the fit error with half the spread
    between the two estimates as the instrument systematic.
    """
    if mode not in ("measured", "deconvolved"):
        raise ValueError("mode must be 'measured' or 'deconvolved'")
    n_tau = sc.p.shape[0]
    tau = sc.tau_centers
    lw = np.full(n_tau, np.nan)
    unc = np.full(n_tau, np.nan)
    stat = np.full(n_tau, np.nan)
    sysu = np.full(n_tau, np.nan)
    wm = np.full(n_tau, np.nan)
    wd = np.full(n_tau, np.nan)
    flags = []
    for b in range(n_tau):
        fl = []
        if sc.flagged[b]:
            flags.append(("insufficient_pairs",))
            continue
        p = sc.p[b]
        try:
            w_meas, sig_m, resid_m = _fit_lorentzian_plain(sc.zeta, p)
            w_dec, sig_d, _ = _fit_lorentzian_deconvolved(sc, b)
        except RuntimeError:
            flags.append(("fit_failed",))
            continue
        wm[b] = w_meas
        wd[b] = w_dec
        if resid_m > 0.08:  # relative to unit peak
            fl.append("misfit")
        systematic = abs(w_meas - w_dec) / 4.0
        if mode == "measured":
            if w_meas < sc.resolution:
                fl.append("resolution_limited")
                lw[b] = _direct_fwhm(sc.zeta, p) / 2.0
                stat[b] = sig_m / 2.0
                sysu[b] = sc.resolution / 4.0
            else:
                lw[b] = w_meas / 2.0
                stat[b] = sig_m / 2.0
                sysu[b] = systematic
        else:
            if w_dec < 0.05 * sc.resolution:
                fl.append("resolution_limited")
            lw[b] = w_dec / 2.0
            stat[b] = sig_d / 2.0
            sysu[b] = systematic
        unc[b] = math.hypot(stat[b], sysu[b])
        flags.append(tuple(fl))
    return PCFSResult(tau=tau, linewidth=lw, uncertainty=unc, flags=flags,
                      w_measured=wm, w_deconvolved=wd, stat_uncertainty=stat,
                      systematic=sysu, mode=mode)


# ---------------------------------------------------------------------------
# full pipeline
# ---------------------------------------------------------------------------

def auto_acquisition_time(scan, emitter_config, voltage, pulse_area=math.pi):
    """Acquisition time per stage position.

    Long enough for `min_pairs` pairs in the sparsest (narrowest) lag bin,
    at least 25 times the longest lag, and a whole number of dither fringes
    so the fringe phase averages out exactly.
    """
    rate = (emitter_config.emission_probability(voltage, pulse_area)
            * scan.sampling_fraction * emitter_config.rep_rate)
    widths = np.diff(scan.tau_bins)
    t_pairs = scan.min_pairs / (2.0 * rate * rate * widths.min())
    t = max(t_pairs, 3.0 / scan.dither_rate, 25.0 * scan.tau_bins[-1])
    fringes = math.ceil(t * scan.dither_rate)
    return fringes / scan.dither_rate


@dataclass
class PCFSVoltageResult:
    """Outcome of one PCFS run at a fixed gate voltage."""

    voltage: float
    acquisition_time: float
    spectral_corr: SpectralCorrelation
    result: PCFSResult


def _measure_position(args):
    (emitter_config, voltage, pulse_area, duration, scan, opd,
     seed_sim, seed_mzi, sampling) = args
    stream = simulate_emission(emitter_config, voltage, pulse_area, duration,
                               seed_sim, sampling_fraction=sampling)
    return mzi_dither_correlate(stream, opd, scan, seed_mzi)


def pcfs_run(scan, emitter_config, voltages, seed, pulse_area=math.pi,
             mode="measured", threads=1):
    """Full PCFS pipeline: simulate, correlate, transform and fit per voltage.

    Each stage position is an independent acquisition with its own photon
    stream (fresh seed per position, like moving the real stage). Returns a
    dict voltage -> PCFSVoltageResult. With threads > 1 the stage positions
    are measured in a process pool; the merge order is fixed by position, so
    results are independent of the worker count.
    """
    cfg = replace(emitter_config, rep_rate=scan.rep_rate)
    positions = scan.opd_positions()
    out = {}
    for voltage in voltages:
        duration = scan.acquisition_time
        if duration is None:
            duration = auto_acquisition_time(scan, cfg, voltage, pulse_area)
        vkey = int(round(voltage * 1e9)) & 0xFFFFFFFFFFFF  # non-negative entropy
        vs = np.random.SeedSequence((seed, vkey))
        child = vs.spawn(2 * len(positions))
        jobs = [(cfg, voltage, pulse_area, duration, scan, float(opd),
                 child[2 * k], child[2 * k + 1], scan.sampling_fraction)
                for k, opd in enumerate(positions)]
        if threads > 1:
            from concurrent.futures import ProcessPoolExecutor
            with ProcessPoolExecutor(max_workers=threads) as pool:
                contrasts = list(pool.map(_measure_position, jobs, chunksize=4))
        else:
            contrasts = [_measure_position(j) for j in jobs]
        sc = spectral_correlation(contrasts, scan)
        res = linewidth_vs_tau(sc, mode=mode)
        out[voltage] = PCFSVoltageResult(voltage=voltage,
                                         acquisition_time=duration,
                                         spectral_corr=sc, result=res)
    return out
