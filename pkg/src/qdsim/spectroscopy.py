"""Stationary spectra: Fourier-limit arithmetic, truth-stream spectra, scanning
Fabry-Perot simulation and Voigt (x) system-response lineshape fitting.

Conventions: detunings are in Hz relative to the stream's reference frequency;
all widths are FWHM in Hz. The system response (SR) of the scanning
interferometer is Lorentzian by default, so Voigt (x) SR stays a Voigt profile
with the Lorentzian widths added exactly; a tabulated SR is convolved
numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, curve_fit
from scipy.special import voigt_profile

_GAUSS_FWHM = 2.0 * math.sqrt(2.0 * math.log(2.0))


class FitError(RuntimeError):
    """Lineshape fit failed to converge; message carries the residual report."""


@dataclass
class Spectrum:
    """Intensity versus detuning on a uniform, strictly increasing grid."""

    detuning: np.ndarray  # Hz
    intensity: np.ndarray  # arbitrary units, >= 0
    sr_fwhm: float | None = None  # instrument response FWHM, Hz
    fsr: float | None = None  # free spectral range, Hz
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.detuning = np.asarray(self.detuning, dtype=float)
        self.intensity = np.asarray(self.intensity, dtype=float)
        if len(self.detuning) != len(self.intensity):
            raise ValueError("detuning and intensity must have equal length")
        if len(self.detuning) > 1 and not np.all(np.diff(self.detuning) > 0):
            raise ValueError("detuning grid must be strictly increasing")
        if np.any(self.intensity < 0):
            raise ValueError("intensity must be >= 0")

    @property
    def step(self):
        return float(self.detuning[1] - self.detuning[0])

    def normalized_peak(self):
        peak = self.intensity.max()
        return Spectrum(self.detuning, self.intensity / peak if peak > 0 else self.intensity,
                        self.sr_fwhm, self.fsr, dict(self.metadata))

    def fwhm(self):
        """Direct half-maximum width by linear interpolation of the crossings."""
        y = self.intensity
        half = y.max() / 2.0
        above = y >= half
        if not above.any():
            return 0.0
        i0, i1 = np.nonzero(above)[0][[0, -1]]
        x = self.detuning
        lo = x[i0] if i0 == 0 else np.interp(half, [y[i0 - 1], y[i0]], [x[i0 - 1], x[i0]])
        hi = x[i1] if i1 == len(y) - 1 else np.interp(half, [y[i1 + 1], y[i1]], [x[i1 + 1], x[i1]])
        return float(hi - lo)

    def to_csv(self, destination):
        header = "# spectrum\n"
        if self.sr_fwhm is not None:
            header += f"# sr_fwhm_hz={self.sr_fwhm!r}\n"
        if self.fsr is not None:
            header += f"# fsr_hz={self.fsr!r}\n"
        header += "detuning_hz,intensity\n"
        body = "\n".join(f"{float(d)!r},{float(v)!r}"
                          for d, v in zip(self.detuning, self.intensity))
        text = header + body + "\n"
        if hasattr(destination, "write"):
            destination.write(text)
        else:
            with open(destination, "w") as fh:
                fh.write(text)


def ft_limit(lifetime):
    """Fourier-transform-limited linewidth 1/(2 pi lifetime), Hz FWHM."""
    if lifetime <= 0:
        raise ValueError(f"lifetime must be > 0, got {lifetime}")
    return 1.0 / (2.0 * math.pi * lifetime)


def lorentzian(x, fwhm):
    """Unit-area Lorentzian."""
    g = fwhm / 2.0
    return (g / math.pi) / (np.asarray(x) ** 2 + g * g)


def gaussian(x, fwhm):
    """Unit-area Gaussian."""
    s = fwhm / _GAUSS_FWHM
    x = np.asarray(x)
    return np.exp(-0.5 * (x / s) ** 2) / (s * math.sqrt(2.0 * math.pi))


def voigt(x, lorentzian_fwhm, gaussian_fwhm):
    """Unit-area Voigt profile (Lorentzian convolved with Gaussian)."""
    sigma = gaussian_fwhm / _GAUSS_FWHM
    gamma = lorentzian_fwhm / 2.0
    if sigma == 0 and gamma == 0:
        raise ValueError("voigt undefined for two zero widths")
    if sigma == 0:
        return lorentzian(x, lorentzian_fwhm)
    return voigt_profile(np.asarray(x, dtype=float), sigma, gamma)


def voigt_fwhm(lorentzian_fwhm, gaussian_fwhm):
    """FWHM of the Voigt profile by root-finding on the convolved lineshape.

    Accurate to well below 0.1 %; the degenerate single-component cases are
    returned exactly.
    """
    fl = float(lorentzian_fwhm)
    fg = float(gaussian_fwhm)
    if fl < 0 or fg < 0:
        raise ValueError("widths must be >= 0")
    if fl == 0.0:
        return fg
    if fg == 0.0:
        return fl
    peak = float(voigt(0.0, fl, fg))
    hi = fl + fg  # always beyond the half-max point
    half = brentq(lambda x: float(voigt(x, fl, fg)) - peak / 2.0,
                  0.0, hi, xtol=1e-9 * hi, rtol=1e-12)
    return 2.0 * half


def voigt_fwhm_approx(lorentzian_fwhm, gaussian_fwhm):
    """Olivero-Longbothum closed-form approximation (0.02 % accurate)."""
    return (0.5346 * lorentzian_fwhm
            + math.sqrt(0.2166 * lorentzian_fwhm**2 + gaussian_fwhm**2))


# ---------------------------------------------------------------------------
# spectra from truth streams
# ---------------------------------------------------------------------------

def spectrum_from_truth(stream, grid=None, lifetime=None):
    """Stationary emission spectrum from a truth stream.

    Histogram of the per-photon center frequencies convolved with each
    photon's homogeneous Lorentzian of FWHM (1/lifetime + 2 gamma) / (2 pi).
    The result is normalized to unit peak. `lifetime` defaults to the value
    recorded in the stream metadata.
    """
    if not stream.has_truth:
        raise ValueError("spectrum_from_truth requires a truth stream")
    if lifetime is None:
        if "lifetime" not in stream.metadata:
            raise ValueError("lifetime not in stream metadata; pass it explicitly")
        lifetime = float(stream.metadata["lifetime"])
    freq = stream.truth_frequency
    deph = stream.truth_dephasing_rate
    widths = (1.0 / lifetime + 2.0 * deph) / (2.0 * math.pi)

    if grid is None:
        w0 = float(widths.max())
        lo = float(freq.min()) - 4.0 * w0
        hi = float(freq.max()) + 4.0 * w0
        step = min(w0, (hi - lo) / 50.0) / 12.0
        n = int(math.ceil((hi - lo) / step)) + 1
        grid = lo + np.arange(n) * step
    else:
        grid = np.asarray(grid, dtype=float)
    step = grid[1] - grid[0]
    edges = np.concatenate([grid - step / 2.0, [grid[-1] + step / 2.0]])

    total = np.zeros(len(grid))
    # photons share the homogeneous width within a run; group in case they don't
    for w in np.unique(widths):
        hist, _ = np.histogram(freq[widths == w], bins=edges)
        if hist.sum() == 0:
            continue
        half_n = len(grid) - 1
        x_edges = (np.arange(-half_n, half_n + 2) - 0.5) * step
        # bin-integrated Lorentzian kernel keeps the fat tails normalized
        cdf = np.arctan(2.0 * x_edges / w) / math.pi
        kernel = np.diff(cdf)
        total += np.convolve(hist, kernel, mode="full")[half_n:half_n + len(grid)]
    peak = total.max()
    if peak > 0:
        total /= peak
    total = np.maximum(total, 0.0)
    return Spectrum(grid, total, metadata={"source": "truth", "lifetime": repr(lifetime)})


# ---------------------------------------------------------------------------
# scanning Fabry-Perot interferometer
# ---------------------------------------------------------------------------

def fpi_scan(spectrum, fsr=15e9, sr_fwhm=100e6, scan_range=None, step=25e6):
    """Transmission of a scanning Fabry-Perot etalon across an input spectrum.

    The transmitted intensity at scan detuning nu is the input spectrum
    integrated against the Lorentzian system response repeated at every free
    spectral range: sum_m SR(nu - nu' - m * fsr). Lines further than one FSR
    apart alias on top of each other.
    """
    if step > sr_fwhm / 4.0:
        raise ValueError("scan step must be <= sr_fwhm / 4")
    if scan_range is None:
        scan_range = (float(spectrum.detuning[0]), float(spectrum.detuning[-1]))
    lo, hi = scan_range
    n = int(math.floor((hi - lo) / step)) + 1
    scan = lo + np.arange(n) * step

    src_x = spectrum.detuning
    src_y = spectrum.intensity
    dx = spectrum.step
    m_lo = int(math.floor((lo - src_x[-1]) / fsr)) - 1
    m_hi = int(math.ceil((hi - src_x[0]) / fsr)) + 1
    out = np.zeros(n)
    for m in range(m_lo, m_hi + 1):
        diff = scan[:, None] - src_x[None, :] - m * fsr
        out += lorentzian(diff, sr_fwhm) @ src_y * dx
    return Spectrum(scan, out, sr_fwhm=sr_fwhm, fsr=fsr,
                    metadata={"source": "fpi_scan"})


# ---------------------------------------------------------------------------
# lineshape fitting
# ---------------------------------------------------------------------------

@dataclass
class LineshapeFit:
    """Voigt (x) SR fit result; widths are FWHM in Hz with the SR removed."""

    lorentzian_fwhm: float
    gaussian_fwhm: float
    total_fwhm: float
    amplitude: float
    offset: float
    center: float
    residual_norm: float
    uncertainties: dict
    lorentzian_fixed: bool
    flags: list = field(default_factory=list)

    def report(self):
        lines = ["# voigt (x) system-response fit"]
        lines.append(f"lorentzian_fwhm_hz={self.lorentzian_fwhm!r}")
        lines.append(f"lorentzian_fixed={self.lorentzian_fixed}")
        lines.append(f"gaussian_fwhm_hz={self.gaussian_fwhm!r}")
        lines.append(f"total_fwhm_hz={self.total_fwhm!r}")
        lines.append(f"amplitude={self.amplitude!r}")
        lines.append(f"offset={self.offset!r}")
        lines.append(f"center_hz={self.center!r}")
        lines.append(f"residual_norm={self.residual_norm!r}")
        for k in sorted(self.uncertainties):
            lines.append(f"sigma_{k}={self.uncertainties[k]!r}")
        lines.append(f"flags={','.join(self.flags) if self.flags else 'none'}")
        return "\n".join(lines) + "\n"


def _sr_convolved_model(x_grid, sr_profile):
    """Model factory for a tabulated (non-Lorentzian) system response."""
    sr_x, sr_y = sr_profile
    step = x_grid[1] - x_grid[0]
    kx = np.arange(-(len(x_grid) - 1), len(x_grid)) * step
    kernel = np.interp(kx, sr_x, sr_y, left=0.0, right=0.0)
    kernel = kernel / (kernel.sum() * step)

    n = len(x_grid)

    def evaluate(center, fl, fg):
        line = voigt(x_grid - center, fl, fg) if (fl > 0 or fg > 0) else None
        if line is None:
            line = np.zeros(n)
            line[np.argmin(np.abs(x_grid - center))] = 1.0 / step
        return np.convolve(line, kernel, mode="full")[n - 1:2 * n - 1] * step

    return evaluate


def fit_voigt_sr(measured, sr_fwhm=None, fixed_lorentzian_fwhm=None,
                 sr_profile=None, max_iterations=4000):
    """Least-squares fit of amplitude * (Voigt (x) SR)(nu - center) + offset.

    With `fixed_lorentzian_fwhm` given only the Gaussian width, amplitude,
    center and offset are free, matching the usual practice of pinning the
    homogeneous width to the lifetime measurement. The reported widths have
    the system response removed; for the default Lorentzian SR the
    convolution is evaluated exactly as a Voigt with the Lorentzian widths
    added. A tabulated SR (grid, values) is convolved numerically.

    Raises FitError with a residual report when the optimizer does not
    converge. The result is flagged `below_resolution` when the recovered
    total width is not meaningfully above the SR width.
    """
    if sr_fwhm is None:
        sr_fwhm = measured.sr_fwhm
    if sr_fwhm is None and sr_profile is None:
        raise ValueError("system response unknown: pass sr_fwhm or sr_profile")
    x = measured.detuning
    y = measured.intensity

    observed = measured.fwhm()
    span = x[-1] - x[0]
    if observed > 0 and span < 4.0 * observed:
        raise ValueError("measured spectrum must cover >= 4x the expected FWHM")

    fixed = fixed_lorentzian_fwhm is not None
    sr_l = sr_fwhm if sr_profile is None else 0.0

    if sr_profile is not None:
        conv = _sr_convolved_model(x, sr_profile)

        def shape(center, fl, fg):
            prof = conv(center, fl, fg)
            peak = prof.max()
            return prof / peak if peak > 0 else prof
    else:
        def shape(center, fl, fg):
            prof = voigt(x - center, fl + sr_l, fg)
            return prof / voigt(0.0, fl + sr_l, fg)

    c0 = float(x[np.argmax(y)])
    b0 = float(np.percentile(y, 5))
    a0 = float(y.max() - b0)
    sub = max(observed - (fixed_lorentzian_fwhm or 0.0) - (sr_fwhm or 0.0), 0.0)
    g0 = max(sub, (sr_fwhm or span / 100.0) / 10.0)

    if fixed:
        def model(xx, amplitude, center, g, offset):
            return amplitude * shape(center, fixed_lorentzian_fwhm, g) + offset
        p0 = [a0, c0, g0, b0]
        lower = [0.0, x[0], 0.0, -np.inf]
        upper = [np.inf, x[-1], span, np.inf]
    else:
        def model(xx, amplitude, center, l, g, offset):
            return amplitude * shape(center, l, g) + offset
        p0 = [a0, c0, max(sub / 2, g0), g0, b0]
        lower = [0.0, x[0], 0.0, 0.0, -np.inf]
        upper = [np.inf, x[-1], span, span, np.inf]

    try:
        popt, pcov = curve_fit(model, x, y, p0=p0, bounds=(lower, upper),
                               maxfev=max_iterations)
    except RuntimeError as exc:
        resid = y - model(x, *p0)
        raise FitError(f"lineshape fit did not converge: {exc}; initial residual "
                       f"rms {float(np.sqrt(np.mean(resid**2))):.3g} "
                       f"on peak {float(y.max()):.3g}") from exc

    if fixed:
        amplitude, center, g_fit, offset = popt
        l_fit = float(fixed_lorentzian_fwhm)
        sig = np.sqrt(np.maximum(np.diag(pcov), 0.0))
        unc = {"amplitude": sig[0], "center": sig[1], "gaussian_fwhm": sig[2],
               "offset": sig[3], "lorentzian_fwhm": 0.0}
    else:
        amplitude, center, l_fit, g_fit, offset = popt
        sig = np.sqrt(np.maximum(np.diag(pcov), 0.0))
        unc = {"amplitude": sig[0], "center": sig[1], "lorentzian_fwhm": sig[2],
               "gaussian_fwhm": sig[3], "offset": sig[4]}

    total = voigt_fwhm(l_fit, g_fit) if (l_fit > 0 or g_fit > 0) else 0.0
    # propagate width uncertainties through the total-FWHM map numerically
    dl = unc["lorentzian_fwhm"]
    dg = unc["gaussian_fwhm"]
    eps_l = max(l_fit, 1.0) * 1e-4
    eps_g = max(g_fit, 1.0) * 1e-4
    jl = (voigt_fwhm(l_fit + eps_l, g_fit) - total) / eps_l if dl else 0.0
    jg = (voigt_fwhm(l_fit, g_fit + eps_g) - total) / eps_g if dg else 0.0
    unc["total_fwhm"] = math.hypot(jl * dl, jg * dg)

    resid = y - model(x, *popt)
    residual_norm = float(np.sqrt(np.mean(resid**2)) / max(y.max(), 1e-300))

    flags = []
    floor = 0.5 * (sr_fwhm if sr_fwhm else measured.step * 4)
    if total < floor:
        flags.append("below_resolution")

    return LineshapeFit(
        lorentzian_fwhm=float(l_fit), gaussian_fwhm=float(g_fit),
        total_fwhm=float(total), amplitude=float(amplitude),
        offset=float(offset), center=float(center),
        residual_norm=residual_norm,
        uncertainties={k: float(v) for k, v in unc.items()},
        lorentzian_fixed=fixed, flags=flags)
