"""ODMR spectrum synthesis and lock-in detection of a swept-MW measurement."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _core


@dataclass(frozen=True)
class DipSpec:
    """One Lorentzian dip: center ``f0`` and ``fwhm`` in MHz, fractional ``contrast``."""

    f0: float
    fwhm: float
    contrast: float

    def __post_init__(self):
        if not self.fwhm > 0:
            raise ValueError(f"fwhm must be positive, got {self.fwhm}")
        if not 0 <= self.contrast < 1:
            raise ValueError(f"contrast must lie in [0, 1), got {self.contrast}")


@dataclass(frozen=True)
class SweepConfig:
    f_start: float = 2750.0
    f_stop: float = 2960.0
    n_points: int = 512
    duration: float = 40.0

    def __post_init__(self):
        if not self.f_start < self.f_stop:
            raise ValueError("f_start must be below f_stop")
        if self.n_points < 2:
            raise ValueError("n_points must be at least 2")
        if not self.duration > 0:
            raise ValueError("duration must be positive")

    @property
    def frequencies(self) -> np.ndarray:
        return np.linspace(self.f_start, self.f_stop, self.n_points)

    @property
    def rate(self) -> float:
        """Sweep rate in MHz/s."""
        return (self.f_stop - self.f_start) / self.duration


@dataclass(frozen=True)
class LockinConfig:
    """Lock-in settings. ``sample_rate`` is the simulation rate, not the instrument's."""

    ref_freq: float = 7.01e6
    filter_order: int = 5
    time_constant: float = 30e-3
    sample_rate: float = 10e3

    def __post_init__(self):
        if self.filter_order < 1:
            raise ValueError("filter_order must be >= 1")
        if not self.time_constant > 0:
            raise ValueError("time_constant must be positive")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")

    @property
    def alpha(self) -> float:
        dt = 1.0 / self.sample_rate
        return dt / (self.time_constant + dt)


@dataclass
class SpectrumTrace:
    frequencies: np.ndarray
    signal: np.ndarray
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frequencies = np.asarray(self.frequencies, dtype=float)
        self.signal = np.asarray(self.signal, dtype=float)
        if self.frequencies.shape != self.signal.shape or self.frequencies.ndim != 1:
            raise ValueError("frequencies and signal must be 1-D arrays of equal length")
        if np.any(np.diff(self.frequencies) <= 0):
            raise ValueError("frequencies must be strictly increasing")

    def __len__(self):
        return len(self.frequencies)


def lorentzian_spectrum(dips: Sequence[DipSpec], baseline: float, f):
    """Baseline-scaled fluorescence with Lorentzian dips subtracted.

    ``S(f) = baseline * (1 - sum_i c_i * (G_i/2)^2 / ((f - f0_i)^2 + (G_i/2)^2))``
    """
    f = np.asarray(f, dtype=float)
    total = np.zeros_like(f)
    for d in dips:
        hw2 = (0.5 * d.fwhm) ** 2
        total = total + d.contrast * hw2 / ((f - d.f0) ** 2 + hw2)
    out = baseline * (1.0 - total)
    return out if out.ndim else float(out)


def synth_trace(sweep: SweepConfig, dips: Sequence[DipSpec], baseline: float = 1.0,
                noise_sigma: float = 0.0, seed: int | None = None) -> SpectrumTrace:
    """Sample the static spectrum on the sweep grid, plus seeded Gaussian noise."""
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    f = sweep.frequencies
    s = lorentzian_spectrum(dips, baseline, f)
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        s = s + rng.normal(0.0, noise_sigma * baseline, size=f.shape)
    return SpectrumTrace(f, s, seed)


def lowpass(x, cfg: LockinConfig, initial: float = 0.0) -> np.ndarray:
    """The lock-in output filter: ``filter_order`` backward-Euler RC stages."""
    return _core.lowpass_cascade(x, cfg.alpha, cfg.filter_order, initial)


def cascade_gain(delta_f: float, tau: float, order: int) -> float:
    """Analog magnitude response of ``order`` RC stages at offset ``delta_f`` (Hz)."""
    return (1.0 + (2.0 * math.pi * delta_f * tau) ** 2) ** (-order / 2.0)


def lockin_demodulate(samples, cfg: LockinConfig, ref_phase: float = 0.0, t0: float = 0.0):
    """Dual-phase demodulation of a uniformly sampled signal.

    Mixes against ``cos`` and ``-sin`` at ``cfg.ref_freq``, filters I and Q
    and returns ``(R, theta)`` with ``R = 2*sqrt(I^2 + Q^2)`` so that a tone
    ``A cos(2 pi f_ref t + phi)`` reads ``R = A``, ``theta = phi - ref_phase``.
    """
    if not cfg.sample_rate > 2.0 * cfg.ref_freq:
        raise ValueError(
            f"sample_rate {cfg.sample_rate:g} Hz must exceed twice ref_freq {cfg.ref_freq:g} Hz")
    x = np.asarray(samples, dtype=float)
    t = t0 + np.arange(x.size) / cfg.sample_rate
    arg = 2.0 * math.pi * cfg.ref_freq * t + ref_phase
    i = lowpass(x * np.cos(arg), cfg)
    q = lowpass(-x * np.sin(arg), cfg)
    return 2.0 * np.hypot(i, q), np.arctan2(q, i)


def simulate_sweep(sweep: SweepConfig, dips: Sequence[DipSpec], lockin: LockinConfig,
                   mode: str = "baseband", seed: int | None = None,
                   baseline: float = 1.0, noise_sigma: float = 0.0) -> SpectrumTrace:
    """Lock-in readout of a linear MW sweep, resampled onto ``sweep.n_points``.

    ``baseband`` filters the fluorescence envelope directly; ``carrier``
    puts the envelope on a tone at ``lockin.ref_freq`` and demodulates it.
    Frequencies in the returned trace are the nominal MW frequency at each
    readout time, so filter lag appears as a shift in the sweep direction.
    The filters start in steady state at the first sample.
    """
    if mode not in ("baseband", "carrier"):
        raise ValueError(f"unknown sweep mode {mode!r}")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    n_samples = int(round(sweep.duration * lockin.sample_rate)) + 1
    if mode == "carrier" and not lockin.sample_rate > 2.0 * lockin.ref_freq:
        raise ValueError("carrier mode needs sample_rate > 2 * ref_freq")
    t = np.arange(n_samples) / lockin.sample_rate
    f_mw = sweep.f_start + sweep.rate * t
    envelope = lorentzian_spectrum(dips, baseline, f_mw)

    if mode == "baseband":
        out = lowpass(envelope, lockin, initial=envelope[0])
    else:
        carrier = envelope * np.cos(2.0 * math.pi * lockin.ref_freq * t)
        out, _ = _demodulate_from_steady(carrier, envelope[0], lockin)

    t_read = np.linspace(0.0, sweep.duration, sweep.n_points)
    readout = np.interp(t_read, t, out)
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        readout = readout + rng.normal(0.0, noise_sigma * baseline, size=readout.shape)
    return SpectrumTrace(sweep.frequencies, readout, seed,
                         meta={"mode": mode, "sweep_rate_mhz_per_s": sweep.rate})


def _demodulate_from_steady(x, amp0, cfg: LockinConfig):
    t = np.arange(x.size) / cfg.sample_rate
    arg = 2.0 * math.pi * cfg.ref_freq * t
    # a settled lock-in reading amp0 has I = amp0/2, Q = 0
    i = lowpass(x * np.cos(arg), cfg, initial=0.5 * amp0)
    q = lowpass(-x * np.sin(arg), cfg, initial=0.0)
    return 2.0 * np.hypot(i, q), np.arctan2(q, i)
