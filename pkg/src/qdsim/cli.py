"""Command-line interface: seeded, file-oriented experiment pipelines.

Exit codes: 0 success, 2 usage or configuration error, 3 scientifically
flagged result (resolution-limited fit, model misfit, insufficient
statistics). All outputs are deterministic functions of (inputs, seed) and
every report embeds the emitter config hash and the tool version.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from . import __version__
from .correlator import centered_range, correlate, g2_pulsed, long_delay_profile
from .emitter import ConfigError, EmitterConfig, simulate_emission
from .interference import hom_simulate
from .pcfs import PCFSScanConfig, pcfs_grid, pcfs_run
from .spectroscopy import FitError, fit_voigt_sr, fpi_scan, ft_limit, spectrum_from_truth
from .stream import (DETECTOR_LIFETIME, DETECTOR_STANDARD, apply_detector,
                     beamsplit, read_stream, write_stream)

USAGE_ERROR = 2
FLAGGED = 3


def _atomic_write(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _atomic_write_stream(path, stream):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        n = write_stream(stream, fh)
    os.replace(tmp, path)
    return n


def _load_config(args):
    if args.config:
        try:
            with open(args.config) as fh:
                return EmitterConfig.from_text(fh.read())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}")
    return EmitterConfig()


def _detector(name):
    return {"standard": DETECTOR_STANDARD, "lifetime": DETECTOR_LIFETIME,
            "none": None}[name]


def _report_header(config, seed):
    return (f"tool_version={__version__}\n"
            f"config_hash={config.config_hash()}\n"
            f"seed={seed}\n")


def _say(args, msg):
    if args.verbose:
        print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args, config):
    if args.duration <= 0:
        print("error: --duration must be > 0", file=sys.stderr)
        return USAGE_ERROR
    os.makedirs(args.out, exist_ok=True)
    truth = simulate_emission(config, args.voltage, args.pulse_area,
                              args.duration, args.seed,
                              pulse_pair_delay=args.double_pulse_delay,
                              sampling_fraction=args.sampling_fraction)
    truth_path = os.path.join(args.out, "truth.qtag")
    _atomic_write_stream(truth_path, truth)
    detector = _detector(args.detector)
    lines = [_report_header(config, args.seed)]
    lines.append(f"voltage={args.voltage!r}\n")
    lines.append(f"pulse_area={args.pulse_area!r}\n")
    lines.append(f"duration={args.duration!r}\n")
    lines.append(f"rep_rate={config.rep_rate!r}\n")
    lines.append(f"counts_truth={len(truth)}\n")
    lines.append("truth_file=truth.qtag\n")
    if detector is not None:
        detected = apply_detector(truth, detector, args.seed + 1)
        _atomic_write_stream(os.path.join(args.out, "detected.qtag"), detected)
        lines.append(f"counts_detected={len(detected)}\n")
        lines.append("detected_file=detected.qtag\n")
    _atomic_write(os.path.join(args.out, "manifest.txt"), "".join(lines))
    _say(args, f"simulate: {len(truth)} truth tags -> {args.out}")
    return 0


def _stream_for_analysis(args, config, split=False):
    """Input tag file, or an end-to-end simulation when requested."""
    if args.input:
        return read_stream(args.input)
    if not args.end_to_end:
        print("error: pass --input FILE or --end-to-end", file=sys.stderr)
        return None
    if args.duration <= 0:
        print("error: --duration must be > 0", file=sys.stderr)
        return None
    stream = simulate_emission(config, args.voltage, args.pulse_area,
                               args.duration, args.seed,
                               pulse_pair_delay=getattr(args, "mzi_delay", None)
                               if getattr(args, "double_pulse", False) else None)
    if split:
        stream = beamsplit(stream, args.seed + 1)
        detector = _detector(args.detector)
        if detector is not None:
            stream = apply_detector(stream, detector, args.seed + 2)
    return stream


def cmd_g2(args, config):
    args.double_pulse = False
    stream = _stream_for_analysis(args, config, split=True)
    if stream is None:
        return USAGE_ERROR
    if stream.n_channels < 2:
        # single-channel acquisition: split 50/50 in software
        stream = beamsplit(stream, args.seed + 3)
    rep_period = 1.0 / config.rep_rate
    drange = centered_range(args.window, args.bin_width)
    hist = correlate(0, 1, stream, args.bin_width, drange)
    res = g2_pulsed(hist, rep_period, n_side_peaks=args.side_peaks)
    profile = long_delay_profile(hist, coarse_bin=13e-9)
    os.makedirs(args.out, exist_ok=True)
    hist.to_csv(os.path.join(args.out, "g2_histogram.csv"))
    report = (_report_header(config, args.seed)
              + f"g2_zero={res.g2_zero!r}\n"
              + f"g2_zero_err={res.g2_zero_err!r}\n"
              + f"rep_period={rep_period!r}\n"
              + f"side_peaks={args.side_peaks}\n"
              + f"long_delay_flatness={profile.flatness!r}\n")
    _atomic_write(os.path.join(args.out, "g2_report.txt"), report)
    print(f"g2(0) = {res.g2_zero:.4f} +- {res.g2_zero_err:.4f}")
    return 0


def cmd_hom(args, config):
    if args.input:
        stream = read_stream(args.input)
    else:
        if not args.end_to_end:
            print("error: pass --input FILE or --end-to-end", file=sys.stderr)
            return USAGE_ERROR
        if args.duration <= 0:
            print("error: --duration must be > 0", file=sys.stderr)
            return USAGE_ERROR
        stream = simulate_emission(config, args.voltage, args.pulse_area,
                                   args.duration, args.seed,
                                   pulse_pair_delay=args.mzi_delay)
    result = hom_simulate(stream, args.mzi_delay, polarization=args.polarization,
                          seed=args.seed + 1)
    os.makedirs(args.out, exist_ok=True)
    _atomic_write(os.path.join(args.out, "tpi_report.txt"),
                  _report_header(config, args.seed)
                  + f"polarization={args.polarization}\n" + result.report())
    result.parallel_histogram.to_csv(os.path.join(args.out, "tpi_parallel.csv"))
    result.orthogonal_histogram.to_csv(os.path.join(args.out, "tpi_orthogonal.csv"))
    print(f"V({args.mzi_delay * 1e9:g} ns, {args.polarization}) = "
          f"{result.visibility:.4f} +- {result.uncertainty:.4f}")
    return 0


def cmd_fpi(args, config):
    args.double_pulse = False
    stream = _stream_for_analysis(args, config, split=False)
    if stream is None:
        return USAGE_ERROR
    spectrum = spectrum_from_truth(stream)
    scan_range = (spectrum.detuning[0] - 4 * args.sr_fwhm,
                  spectrum.detuning[-1] + 4 * args.sr_fwhm)
    measured = fpi_scan(spectrum, fsr=args.fsr, sr_fwhm=args.sr_fwhm,
                        step=args.scan_step, scan_range=scan_range)
    fixed = None if args.free_lorentzian else args.fixed_lorentzian
    fit = fit_voigt_sr(measured, fixed_lorentzian_fwhm=fixed)
    os.makedirs(args.out, exist_ok=True)
    spectrum.to_csv(os.path.join(args.out, "spectrum_truth.csv"))
    measured.to_csv(os.path.join(args.out, "fpi_measured.csv"))
    _atomic_write(os.path.join(args.out, "fpi_fit.txt"),
                  _report_header(config, args.seed) + fit.report())
    factor = fit.total_fwhm / ft_limit(config.lifetime)
    print(f"total FWHM = {fit.total_fwhm / 1e6:.1f} MHz "
          f"({factor:.2f} x FT limit)")
    return FLAGGED if fit.flags else 0


def cmd_pcfs(args, config):
    scan = PCFSScanConfig(max_opd=args.max_opd, opd_step=args.opd_step,
                          acquisition_time=args.acquisition_time,
                          sampling_fraction=args.sampling_fraction)
    voltages = [float(v) for v in args.voltages.split(",")]
    results = pcfs_run(scan, config, voltages, args.seed,
                       threads=args.threads)
    os.makedirs(args.out, exist_ok=True)
    flagged = False
    lines = [_report_header(config, args.seed)]
    for v, res in results.items():
        tag = f"{int(round(v * 1000)):+d}mV".replace("+", "p").replace("-", "m")
        res.result.to_csv(os.path.join(args.out, f"pcfs_linewidth_{tag}.csv"))
        res.spectral_corr.to_csv(
            os.path.join(args.out, f"pcfs_spectral_correlation_{tag}.csv"))
        level, err = res.result.long_tau_level()
        lines.append(f"voltage={v!r} acquisition_time={res.acquisition_time!r} "
                     f"long_tau_linewidth_hz={level!r} err_hz={err!r}\n")
        if any(f for f in res.result.flags):
            flagged = True
        print(f"V_g = {v * 1000:.0f} mV: linewidth (long tau) = "
              f"{level / 1e6:.0f} +- {err / 1e6:.0f} MHz")
    _atomic_write(os.path.join(args.out, "pcfs_report.txt"), "".join(lines))
    return FLAGGED if flagged else 0


def cmd_sweep(args, config):
    n = int(round((args.vmax - args.vmin) / args.vstep)) + 1
    voltages = args.vmin + np.arange(n) * args.vstep
    rows = []
    flagged = False
    for i, v in enumerate(voltages):
        stream = simulate_emission(config, float(v), args.pulse_area,
                                   args.duration, args.seed + i)
        intensity = len(stream) / args.duration
        spectrum = spectrum_from_truth(stream)
        measured = fpi_scan(spectrum)
        try:
            fit = fit_voigt_sr(measured)
            rows.append((float(v), fit.total_fwhm,
                         fit.uncertainties["total_fwhm"], intensity))
            if fit.flags:
                flagged = True
        except FitError:
            rows.append((float(v), math.nan, math.nan, intensity))
            flagged = True
        _say(args, f"sweep {v:.3f} V: {rows[-1][1] / 1e6:.0f} MHz, "
             f"{intensity:.3g} cps")
    os.makedirs(args.out, exist_ok=True)
    body = "voltage_v,linewidth_hz,linewidth_err_hz,intensity_cps\n"
    body += "\n".join(f"{v!r},{w!r},{e!r},{it!r}" for v, w, e, it in rows) + "\n"
    _atomic_write(os.path.join(args.out, "sweep.csv"), body)
    widths = np.array([r[1] for r in rows])
    intens = np.array([r[3] for r in rows])
    v_minw = float(voltages[np.nanargmin(widths)])
    v_maxi = float(voltages[np.nanargmax(intens)])
    report = (_report_header(config, args.seed)
              + f"linewidth_minimum_voltage={v_minw!r}\n"
              + f"intensity_maximum_voltage={v_maxi!r}\n")
    _atomic_write(os.path.join(args.out, "sweep_report.txt"), report)
    print(f"linewidth minimum at {v_minw * 1000:.0f} mV, "
          f"intensity maximum at {v_maxi * 1000:.0f} mV")
    return FLAGGED if flagged else 0


def cmd_grid(args, config):
    scan = PCFSScanConfig(max_opd=args.max_opd, opd_step=args.opd_step)
    g = pcfs_grid(scan)
    print(f"resolution = {g.resolution / 1e6:.1f} MHz")
    print(f"lorentzian-model spectrum resolution = "
          f"{g.lorentzian_resolution / 1e6:.1f} MHz")
    print(f"spectral range = {g.spectral_range / 1e9:.2f} GHz")
    print(f"stage positions = {g.positions}")
    return 0


# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(
        prog="qdsim",
        description="Gated quantum-dot single-photon source simulator and "
                    "measurement chain")
    p.add_argument("--config", help="emitter config file (flat key=value)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="qdsim_out", help="output directory")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="emit truth + detected tag files")
    sim.add_argument("--duration", type=float, required=True, help="seconds")
    sim.add_argument("--voltage", type=float, default=-0.570)
    sim.add_argument("--pulse-area", type=float, default=math.pi)
    sim.add_argument("--double-pulse-delay", type=float, default=None)
    sim.add_argument("--sampling-fraction", type=float, default=1.0)
    sim.add_argument("--detector", choices=["standard", "lifetime", "none"],
                     default="standard")

    def analysis_common(sp, end_to_end_duration=0.02):
        sp.add_argument("--input", help="tag file")
        sp.add_argument("--end-to-end", action="store_true")
        sp.add_argument("--duration", type=float, default=end_to_end_duration)
        sp.add_argument("--voltage", type=float, default=-0.570)
        sp.add_argument("--pulse-area", type=float, default=math.pi)
        sp.add_argument("--detector", choices=["standard", "lifetime", "none"],
                        default="none")

    g2p = sub.add_parser("g2", help="pulsed autocorrelation")
    analysis_common(g2p, end_to_end_duration=0.05)
    g2p.add_argument("--bin-width", type=float, default=256e-12)
    g2p.add_argument("--window", type=float, default=2e-6,
                     help="half range of the histogram, seconds")
    g2p.add_argument("--side-peaks", type=int, default=10)

    hom = sub.add_parser("hom", help="two-photon interference")
    analysis_common(hom)
    hom.add_argument("--mzi-delay", type=float, required=True, help="seconds")
    hom.add_argument("--polarization", choices=["parallel", "orthogonal"],
                     default="parallel")

    fpi = sub.add_parser("fpi", help="scanning Fabry-Perot spectrum and fit")
    analysis_common(fpi, end_to_end_duration=0.05)
    fpi.add_argument("--fsr", type=float, default=15e9)
    fpi.add_argument("--sr-fwhm", type=float, default=100e6)
    fpi.add_argument("--scan-step", type=float, default=25e6)
    fpi.add_argument("--fixed-lorentzian", type=float, default=250e6)
    fpi.add_argument("--free-lorentzian", action="store_true")

    pc = sub.add_parser("pcfs", help="photon-correlation Fourier spectroscopy")
    pc.add_argument("--voltages", default="-0.570")
    pc.add_argument("--max-opd", type=float, default=0.372)
    pc.add_argument("--opd-step", type=float, default=0.004)
    pc.add_argument("--acquisition-time", type=float, default=None)
    pc.add_argument("--sampling-fraction", type=float, default=0.01)

    sw = sub.add_parser("sweep", help="linewidth and intensity versus voltage")
    sw.add_argument("--vmin", type=float, default=-0.70)
    sw.add_argument("--vmax", type=float, default=-0.40)
    sw.add_argument("--vstep", type=float, default=0.01)
    sw.add_argument("--duration", type=float, default=0.02)
    sw.add_argument("--pulse-area", type=float, default=math.pi)

    gr = sub.add_parser("grid", help="print the PCFS frequency grid")
    gr.add_argument("--max-opd", type=float, default=0.372)
    gr.add_argument("--opd-step", type=float, default=0.004)
    return p


_COMMANDS = {
    "simulate": cmd_simulate,
    "g2": cmd_g2,
    "hom": cmd_hom,
    "fpi": cmd_fpi,
    "pcfs": cmd_pcfs,
    "sweep": cmd_sweep,
    "grid": cmd_grid,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    try:
        return _COMMANDS[args.command](args, config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
