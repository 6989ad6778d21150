"""Stochastic model of a voltage-gated quantum-dot single-photon emitter.

The emitter is pumped by a pulsed laser (optionally double pulses per period),
decays radiatively with an exponential lifetime, and carries three noise
channels on top of the radiative rate:

* Markovian pure dephasing (intrinsic + voltage-dependent cotunneling), which
  broadens the homogeneous Lorentzian linewidth,
* slow spectral diffusion of the center frequency, modeled as an
  Ornstein-Uhlenbeck process (Gaussian marginal, single correlation time),
* optional telegraph blinking between an emitting and a dark state.

The default configuration is calibrated so that, at the plateau center
(-570 mV): the homogeneous linewidth is 250 MHz, the stationary emission line
is a 420 MHz Voigt profile, pulsed g2(0) is 0.028 at the pi pulse, and the
cotunneling rate at the plateau edge (-450 mV) reproduces a 14.5 % spectral
two-photon overlap. See `presets` for the solvers that produce these numbers.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from ._kernels import ou_from_normals
from .stream import TagStream, sort_stream_arrays

# Calibrated device constants (derived in `presets`, frozen here).
LIFETIME = 652e-12
#: pure dephasing making the homogeneous linewidth exactly 250 MHz
GAMMA_INTRINSIC = 1.8526997753276587e7
#: OU stationary std giving a 420 MHz stationary Voigt width on top of 250 MHz
SIGMA_DIFFUSION = 1.1111359792458086e8
#: OU correlation time reproducing the measured two-photon visibility decay
TAU_DIFFUSION = 10e-9
#: re-excitation probability giving pulsed g2(0) = 0.028 at 85 % preparation
REEXCITATION_PROB = 0.012191936955119791
#: cotunneling dephasing rate at the plateau edge (spectral overlap 14.5 %)
COTUNNEL_EDGE_RATE = 4.4576770362e9


class ConfigError(ValueError):
    """Invalid emitter configuration; carries a line number for text configs."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class OUParams:
    """Ornstein-Uhlenbeck spectral diffusion: stationary std (Hz), correlation time (s)."""

    stationary_std: float
    correlation_time: float = 1e-9

    def __post_init__(self):
        if self.stationary_std < 0:
            raise ConfigError("diffusion stationary_std must be >= 0")
        if self.correlation_time <= 0:
            raise ConfigError("diffusion correlation_time must be > 0")


@dataclass(frozen=True)
class TelegraphParams:
    """Blinking: on_rate is the dark->emitting rate, off_rate the reverse (Hz)."""

    on_rate: float
    off_rate: float

    def __post_init__(self):
        if self.on_rate < 0 or self.off_rate < 0:
            raise ConfigError("telegraph rates must be >= 0")


@dataclass(frozen=True)
class PlateauParams:
    """Charge-plateau geometry and cotunneling coupling.

    The cotunneling dephasing rate is ~0 inside the plateau, reaches
    `cotunnel_rate_edge` exactly at |V - center| = half_width and saturates at
    twice that value far outside. `brightness_coupling` converts the rate into
    an emission-probability reduction so intensity and linewidth anticorrelate.
    """

    center_voltage: float = -0.570
    half_width: float = 0.120
    cotunnel_rate_edge: float = COTUNNEL_EDGE_RATE
    edge_softness: float = 0.015
    brightness_coupling: float = 0.15

    def __post_init__(self):
        if self.half_width <= 0:
            raise ConfigError("plateau half_width must be > 0")
        if self.cotunnel_rate_edge < 0:
            raise ConfigError("cotunnel_rate_edge must be >= 0")
        if self.edge_softness <= 0:
            raise ConfigError("edge_softness must be > 0")


@dataclass(frozen=True)
class EmitterConfig:
    """All physical parameters of the simulated emitter and gate-voltage model.

    Defaults are the calibrated plateau-center device; `rep_rate` is the
    fundamental pulse rate (the quadrupled 304.8 MHz rate is used for
    spectral-correlation scans).
    """

    lifetime: float = LIFETIME
    base_frequency: float = 0.0  # Hz offset at the reference voltage
    dephasing_rate_intrinsic: float = GAMMA_INTRINSIC
    diffusion: OUParams = field(
        default_factory=lambda: OUParams(SIGMA_DIFFUSION, TAU_DIFFUSION))
    blinking: TelegraphParams | None = None
    stark_slope: float = 72.7e9  # Hz/V, resonant excitation (71.1e9 above barrier)
    plateau: PlateauParams = field(default_factory=PlateauParams)
    prep_fidelity: float = 0.85
    reexcitation_prob: float = REEXCITATION_PROB
    rep_rate: float = 76.2e6
    reference_voltage: float = -0.570

    def __post_init__(self):
        if self.lifetime <= 0:
            raise ConfigError("lifetime must be > 0")
        if self.rep_rate <= 0:
            raise ConfigError("rep_rate must be > 0")
        for name in ("prep_fidelity", "reexcitation_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if self.dephasing_rate_intrinsic < 0:
            raise ConfigError("dephasing_rate_intrinsic must be >= 0")

    # -- voltage model -----------------------------------------------------

    def homogeneous_rate(self, voltage):
        """Total Lorentzian-broadening rate 1/lifetime + 2*gamma(V), in 1/s."""
        gamma = self.dephasing_rate_intrinsic + cotunnel_rate(self.plateau, voltage)
        return 1.0 / self.lifetime + 2.0 * gamma

    def homogeneous_fwhm(self, voltage):
        """Homogeneous linewidth (Hz FWHM) at a gate voltage."""
        return self.homogeneous_rate(voltage) / (2.0 * math.pi)

    def emission_probability(self, voltage, pulse_area):
        """Per-pulse emission probability including the plateau brightness factor."""
        return pulse_occupation(pulse_area, self.prep_fidelity) * \
            brightness_factor(self, voltage)

    # -- flat key=value text serialization ----------------------------------

    def to_text(self):
        """Flat key=value config text, one SI-unit parameter per line."""
        lines = ["# emitter configuration (SI units)"]
        items = {
            "lifetime": self.lifetime,
            "base_frequency": self.base_frequency,
            "dephasing_rate_intrinsic": self.dephasing_rate_intrinsic,
            "diffusion.stationary_std": self.diffusion.stationary_std,
            "diffusion.correlation_time": self.diffusion.correlation_time,
            "stark_slope": self.stark_slope,
            "plateau.center_voltage": self.plateau.center_voltage,
            "plateau.half_width": self.plateau.half_width,
            "plateau.cotunnel_rate_edge": self.plateau.cotunnel_rate_edge,
            "plateau.edge_softness": self.plateau.edge_softness,
            "plateau.brightness_coupling": self.plateau.brightness_coupling,
            "prep_fidelity": self.prep_fidelity,
            "reexcitation_prob": self.reexcitation_prob,
            "rep_rate": self.rep_rate,
            "reference_voltage": self.reference_voltage,
        }
        if self.blinking is not None:
            items["blinking.on_rate"] = self.blinking.on_rate
            items["blinking.off_rate"] = self.blinking.off_rate
        lines.extend(f"{k}={items[k]!r}" for k in sorted(items))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        values = {}
        lineno = {}
        for i, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"expected key=value, got {line!r}", line=i)
            k, _, v = line.partition("=")
            k = k.strip()
            try:
                values[k] = float(v.strip())
            except ValueError:
                raise ConfigError(f"value for {k!r} is not a number: {v.strip()!r}",
                                  line=i) from None
            lineno[k] = i
        kwargs = {}
        plateau = {}
        diffusion = {}
        blinking = {}
        known_scalar = {"lifetime", "base_frequency", "dephasing_rate_intrinsic",
                        "stark_slope", "prep_fidelity", "reexcitation_prob",
                        "rep_rate", "reference_voltage"}
        for k, v in values.items():
            if k in known_scalar:
                kwargs[k] = v
            elif k.startswith("plateau."):
                plateau[k.split(".", 1)[1]] = v
            elif k.startswith("diffusion."):
                diffusion[k.split(".", 1)[1]] = v
            elif k.startswith("blinking."):
                blinking[k.split(".", 1)[1]] = v
            else:
                raise ConfigError(f"unknown parameter {k!r}", line=lineno[k])
        first_line = min(lineno.values()) if lineno else None
        try:
            if diffusion:
                kwargs["diffusion"] = OUParams(**diffusion)
            if plateau:
                kwargs["plateau"] = PlateauParams(**plateau)
            if blinking:
                kwargs["blinking"] = TelegraphParams(**blinking)
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc), line=first_line) from None

    def config_hash(self):
        """Short stable hash of the canonical config text."""
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# deterministic voltage maps
# ---------------------------------------------------------------------------

def stark_frequency(config, voltage):
    """Transition frequency (Hz offset) under the linear dc Stark shift."""
    return config.base_frequency + config.stark_slope * (voltage - config.reference_voltage)


def cotunnel_rate(plateau, voltage):
    """Cotunneling dephasing rate (1/s) at a gate voltage.

    Sigmoid in |V - center|: ~0 inside the plateau, `cotunnel_rate_edge` at
    the edge, saturating at twice the edge value far outside.
    """
    x = (abs(voltage - plateau.center_voltage) - plateau.half_width) / plateau.edge_softness
    # logistic, numerically safe on both tails
    if x >= 0:
        s = 1.0 / (1.0 + math.exp(-x))
    else:
        e = math.exp(x)
        s = e / (1.0 + e)
    return 2.0 * plateau.cotunnel_rate_edge * s


def brightness_factor(config, voltage):
    """Emission-probability reduction outside the plateau (1 at the center)."""
    rate = cotunnel_rate(config.plateau, voltage)
    return 1.0 / (1.0 + config.plateau.brightness_coupling * rate * config.lifetime)


def pulse_occupation(pulse_area, prep_fidelity):
    """Excited-state occupation after a pulse: prep_fidelity * sin^2(area / 2)."""
    if pulse_area < 0:
        raise ValueError("pulse_area must be >= 0")
    return prep_fidelity * math.sin(pulse_area / 2.0) ** 2


#: default charge-state windows (V): label, lower edge, upper edge
DEFAULT_CHARGE_WINDOWS = (("trion", -0.72, -0.42), ("exciton", -0.42, -0.18))


def charge_state(voltage, windows=DEFAULT_CHARGE_WINDOWS):
    """Emitting species selected by the gate voltage: 'exciton', 'trion' or 'none'."""
    for label, lo, hi in windows:
        if lo <= voltage < hi:
            return label
    return "none"


# ---------------------------------------------------------------------------
# Monte Carlo emission
# ---------------------------------------------------------------------------

def _telegraph_on_mask(times_s, params, duration_s, rng):
    """Emitting/dark state of the telegraph process at each (sorted) time."""
    if params.on_rate == 0 and params.off_rate == 0:
        return np.ones(len(times_s), dtype=bool)
    p_on = params.on_rate / (params.on_rate + params.off_rate)
    state0 = rng.random() < p_on
    # alternating exponential dwells until the acquisition ends
    edges = []
    t = 0.0
    state = state0
    while t < duration_s:
        rate = params.off_rate if state else params.on_rate
        if rate == 0:
            break
        t += rng.exponential(1.0 / rate)
        edges.append(t)
        state = not state
    edges = np.asarray(edges)
    flips = np.searchsorted(edges, times_s, side="right")
    return (flips % 2 == 0) == state0


def simulate_emission(config, voltage, pulse_area, duration, seed,
                      pulse_pair_delay=None, sampling_fraction=1.0):
    """Generate the truth photon stream of the pulsed emitter.

    Every pulse excites the dot with probability
    `pulse_occupation * brightness_factor * blinking_state`; the photon is
    emitted after an exponential delay. With probability `reexcitation_prob`
    a second photon follows within the same pulse (independent delay after
    the first). Each photon carries its instantaneous center frequency
    (Stark shift + OU diffusion sampled at the emission time) and the
    Markovian dephasing rate `intrinsic + cotunneling(V)`.

    `pulse_pair_delay` (s) adds a second pulse per repetition period at the
    given separation, for two-photon interference runs. `sampling_fraction`
    thins the emitted photons at the source (collection efficiency folded in
    before detection) to keep long acquisitions tractable.

    Returns a truth TagStream on channel 0.
    """
    if duration <= 0:
        raise ValueError(f"duration must be > 0, got {duration}")
    if not 0.0 < sampling_fraction <= 1.0:
        raise ValueError("sampling_fraction must be in (0, 1]")
    rng = np.random.default_rng(seed)
    duration_ps = int(round(duration * 1e12))
    period_ps = 1e12 / config.rep_rate
    n_periods = int(math.floor(duration * config.rep_rate))

    if pulse_pair_delay is not None:
        if not 0.0 < pulse_pair_delay < 1.0 / config.rep_rate:
            raise ValueError("pulse_pair_delay must lie inside one repetition period")
        delta_ps = pulse_pair_delay * 1e12
        n_pulses = 2 * n_periods
    else:
        delta_ps = 0.0
        n_pulses = n_periods

    def pulse_time(idx):
        # pulse slot -> emission trigger time (ps, float); never materializes
        # the full grid, which for long acquisitions would dwarf the photons
        if pulse_pair_delay is None:
            return idx * period_ps
        return (idx // 2) * period_ps + (idx % 2) * delta_ps

    p_emit = config.emission_probability(voltage, pulse_area) * sampling_fraction

    if config.blinking is None:
        # geometric gaps: equivalent to per-pulse Bernoulli, O(n_photons)
        if p_emit > 0:
            expected = n_pulses * p_emit
            cap = int(expected + 8.0 * math.sqrt(expected + 1.0) + 16)
            gaps = rng.geometric(p_emit, cap)
            idx = np.cumsum(gaps) - 1
            while idx[-1] < n_pulses - 1:  # extend the tail if undershooting
                extra = rng.geometric(p_emit, cap // 4 + 16)
                idx = np.concatenate([idx, idx[-1] + np.cumsum(extra)])
            primary_idx = idx[idx < n_pulses]
        else:
            primary_idx = np.empty(0, dtype=np.int64)
    else:
        times = pulse_time(np.arange(n_pulses))
        on = _telegraph_on_mask(times * 1e-12, config.blinking, duration, rng)
        fire = rng.random(n_pulses) < p_emit
        primary_idx = np.nonzero(on & fire)[0]

    delays1 = rng.exponential(config.lifetime, len(primary_idx)) * 1e12
    t_primary = pulse_time(primary_idx) + delays1

    reex = rng.random(len(primary_idx)) < config.reexcitation_prob
    delays2 = rng.exponential(config.lifetime, int(reex.sum())) * 1e12
    t_secondary = t_primary[reex] + delays2

    t_all = np.concatenate([t_primary, t_secondary])
    order = np.argsort(t_all, kind="stable")
    t_all = t_all[order]

    # OU path sampled exactly at the (sorted) emission times
    normals = rng.standard_normal(len(t_all))
    ou = ou_from_normals(t_all * 1e-12, normals,
                         config.diffusion.stationary_std,
                         config.diffusion.correlation_time)
    freq = stark_frequency(config, voltage) + ou

    ts = np.rint(t_all).astype(np.int64)
    keep = ts <= duration_ps
    ts, freq = ts[keep], freq[keep]

    deph = np.full(len(ts), config.dephasing_rate_intrinsic + cotunnel_rate(config.plateau, voltage))
    ch = np.zeros(len(ts), dtype=np.uint8)
    ch, ts, freq, deph = sort_stream_arrays(ch, ts, freq, deph)

    meta = {
        "op": "simulate_emission",
        "config_hash": config.config_hash(),
        "seed": str(seed),
        "voltage": repr(float(voltage)),
        "pulse_area": repr(float(pulse_area)),
        "rep_rate": repr(config.rep_rate),
        "lifetime": repr(config.lifetime),
        "sampling_fraction": repr(float(sampling_fraction)),
    }
    if pulse_pair_delay is not None:
        meta["pulse_pair_delay"] = repr(float(pulse_pair_delay))
    return TagStream(ch, ts, duration_ps, ["emission"], meta,
                     truth_frequency=freq, truth_dephasing_rate=deph,
                     validate=False)


def rabi_curve(config, areas, pulses_per_point, seed, detection_efficiency=1.0):
    """Monte Carlo detected counts versus pulse area.

    Returns (sqrt_power_proxy, mean_counts_per_pulse); the proxy is the pulse
    area in units of pi so the curve reads directly as the usual
    intensity-vs-sqrt(power) plot with the first maximum at 1.
    """
    areas = np.atleast_1d(np.asarray(areas, dtype=float))
    if len(areas) == 0:
        raise ValueError("areas must be non-empty")
    rng = np.random.default_rng(seed)
    mean = np.empty(len(areas))
    for i, area in enumerate(areas):
        p = pulse_occupation(area, config.prep_fidelity) * detection_efficiency
        mean[i] = rng.binomial(pulses_per_point, p) / pulses_per_point
    return areas / math.pi, mean
