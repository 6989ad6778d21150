"""Simulator and measurement chain for a gated quantum-dot single-photon source."""

__version__ = "0.1.0"

from .correlator import (CorrelationHistogram, G2Result, centered_range,
                         correlate, g2_pulsed, long_delay_profile,
                         merge_histograms)
from .emitter import (EmitterConfig, OUParams, PlateauParams, TelegraphParams,
                      charge_state, cotunnel_rate, pulse_occupation,
                      rabi_curve, simulate_emission, stark_frequency)
from .interference import (PairKernelParams, RepStructure, TPIResult,
                           hom_simulate, pair_visibility,
                           remote_visibility_estimate,
                           visibility_from_histograms)
from .pcfs import (PCFSScanConfig, SpectralCorrelation, PCFSResult,
                   default_tau_bins, linewidth_vs_tau, mzi_dither_correlate,
                   pcfs_grid, pcfs_run, spectral_correlation)
from .spectroscopy import (LineshapeFit, Spectrum, fit_voigt_sr, fpi_scan,
                           ft_limit, spectrum_from_truth, voigt, voigt_fwhm,
                           voigt_fwhm_approx)
from .stream import (DETECTOR_LIFETIME, DETECTOR_STANDARD, DetectorModel,
                     FormatError, PhotonTag, TagStream, apply_detector,
                     beamsplit, read_stream, write_stream)

__all__ = [name for name in dir() if not name.startswith("_")]
