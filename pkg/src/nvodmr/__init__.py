"""Simulation and analysis toolkit for NV-diamond ODMR under multiphoton excitation."""
from ._core import BACKEND
from .fitting import (DetectConfig, FitResult, ModelSelectionError, detect_dips,
                      fit_lorentzians, select_model)
from .magnetometry import (FieldEstimate, InconsistentResonanceError, canonical_field,
                           classify_pattern, forward_pairs, projection_from_pair, solve_b_vector)
from .scan import (CHANNELS, ChannelConfig, Phantom, PSFConfig, TileConfig, TileImage, composite,
                   odmr_at_point, power_series, scan_tile, stitch, tile_grid)
from .signal_chain import (DipSpec, LockinConfig, SpectrumTrace, SweepConfig, cascade_gain,
                           lockin_demodulate, lorentzian_spectrum, simulate_sweep, synth_trace)
from .spin import (DipPattern, HamiltonianParams, MagneticField, NVAxis, ResonancePair,
                   all_resonances, build_hamiltonian, nv_axes, resonances, zeeman_pattern)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "CHANNELS", "ChannelConfig", "DetectConfig", "DipPattern", "DipSpec",
    "FieldEstimate", "FitResult", "HamiltonianParams", "InconsistentResonanceError",
    "LockinConfig", "MagneticField", "ModelSelectionError", "NVAxis", "PSFConfig", "Phantom",
    "ResonancePair", "SpectrumTrace", "SweepConfig", "TileConfig", "TileImage",
    "all_resonances", "build_hamiltonian", "canonical_field", "cascade_gain",
    "classify_pattern", "composite", "detect_dips", "fit_lorentzians", "forward_pairs",
    "lockin_demodulate", "lorentzian_spectrum", "nv_axes", "odmr_at_point",
    "power_series", "projection_from_pair", "resonances", "scan_tile", "select_model",
    "simulate_sweep", "solve_b_vector", "stitch", "synth_trace", "tile_grid",
    "zeeman_pattern",
]
