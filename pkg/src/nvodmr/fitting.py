"""Dip detection, multi-Lorentzian least squares and dip-count selection."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._parallel import map_ordered
from .signal_chain import DipSpec, SpectrumTrace, lorentzian_spectrum

log = logging.getLogger(__name__)

MAX_ITER = 200
COST_RTOL = 1e-10
GRAD_TOL = 1e-8


class ModelSelectionError(RuntimeError):
    """No candidate dip count produced a converged fit."""

    def __init__(self, message, diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class DetectConfig:
    smooth_window: int = 5
    min_prominence: float = 0.005
    max_dips: int = 8

    def __post_init__(self):
        if self.smooth_window < 1 or self.smooth_window % 2 == 0:
            raise ValueError("smooth_window must be odd and >= 1")
        if not 0 < self.min_prominence < 1:
            raise ValueError("min_prominence must lie in (0, 1)")
        if self.max_dips < 1:
            raise ValueError("max_dips must be >= 1")


@dataclass
class FitResult:
    baseline: float
    dips: list
    covariance: np.ndarray
    rms_residual: float
    converged: bool
    iterations: int
    gradient_norm: float = 0.0
    n_points: int = 0
    rss: float = 0.0
    message: str = ""
    history: list = field(default_factory=list, repr=False)

    @property
    def n_params(self) -> int:
        return 3 * len(self.dips) + 1

    @property
    def bic(self) -> float:
        n = self.n_points
        rss = max(self.rss, n * np.finfo(float).tiny)
        return n * math.log(rss / n) + self.n_params * math.log(n)

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def model(self, f):
        return lorentzian_spectrum(self.dips, self.baseline, f)


def estimate_baseline(signal) -> float:
    return float(np.percentile(np.asarray(signal, dtype=float), 90))


def _smooth(y, window):
    if window == 1:
        return np.array(y, dtype=float)
    h = window // 2
    padded = np.pad(y, h, mode="edge")
    return np.convolve(padded, np.ones(window) / window, mode="valid")


def detect_dips(trace: SpectrumTrace, cfg: DetectConfig = DetectConfig()) -> list[DipSpec]:
    """Initial dip guesses from prominent minima of the smoothed trace."""
    from scipy.signal import find_peaks, peak_widths  # deferred: slow import

    if len(trace) <= cfg.smooth_window:
        raise ValueError("trace is shorter than the smoothing window")
    base = estimate_baseline(trace.signal)
    s = _smooth(trace.signal, cfg.smooth_window)
    peaks, props = find_peaks(-s, prominence=cfg.min_prominence * abs(base))
    if peaks.size == 0:
        return []
    keep = np.argsort(props["prominences"])[::-1][: cfg.max_dips]
    peaks = np.sort(peaks[keep])
    widths = peak_widths(-s, peaks, rel_height=0.5)[0]
    f = trace.frequencies
    step = (f[-1] - f[0]) / (len(f) - 1)
    out = []
    for p, w in zip(peaks, widths):
        depth = min(max((base - s[p]) / base, 1e-4), 0.99)
        out.append(DipSpec(float(f[p]), float(max(w * step, step)), float(depth)))
    return out


# -- parameter transforms keeping fwhm > 0 and contrast in (0, 1) ----------

def _softplus(x):
    return np.where(x > 30, x, np.log1p(np.exp(np.minimum(x, 30))))


def _softplus_inv(y):
    y = np.asarray(y, dtype=float)
    return np.where(y > 30, y, np.log(np.expm1(np.minimum(y, 30))))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _logit(p):
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


def _to_internal(baseline, dips, fwhm_min):
    u = [baseline]
    for d in dips:
        g = max(d.fwhm - fwhm_min, 1e-6 * fwhm_min)
        c = min(max(d.contrast, 1e-9), 1.0 - 1e-9)
        u += [d.f0, float(_softplus_inv(g)), float(_logit(c))]
    return np.array(u, dtype=float)


def _to_natural(u, fwhm_min):
    nat = np.array(u, dtype=float)
    nat[2::3] = fwhm_min + _softplus(u[2::3])
    nat[3::3] = _sigmoid(u[3::3])
    return nat


def _model_and_jacobian(nat, f):
    """Model values and d(model)/d(natural params), columns [b, f0, G, c, ...]."""
    b = nat[0]
    n_dips = (len(nat) - 1) // 3
    jac = np.empty((f.size, len(nat)))
    shape = np.zeros_like(f)
    for k in range(n_dips):
        f0, g, c = nat[1 + 3 * k: 4 + 3 * k]
        h = 0.5 * g
        x = f - f0
        den = x * x + h * h
        lor = h * h / den
        shape += c * lor
        jac[:, 1 + 3 * k] = -b * c * (2.0 * h * h * x / den ** 2)
        jac[:, 2 + 3 * k] = -b * c * (h * x * x / den ** 2)
        jac[:, 3 + 3 * k] = -b * lor
    jac[:, 0] = 1.0 - shape
    return b * (1.0 - shape), jac


def _chain(u, jac_nat):
    jac = jac_nat.copy()
    jac[:, 2::3] *= _sigmoid(u[2::3])  # d softplus
    s = _sigmoid(u[3::3])
    jac[:, 3::3] *= s * (1.0 - s)
    return jac


def _unpack(nat):
    dips = [DipSpec(float(nat[1 + 3 * k]), float(nat[2 + 3 * k]), float(nat[3 + 3 * k]))
            for k in range((len(nat) - 1) // 3)]
    return float(nat[0]), dips


def fit_lorentzians(trace: SpectrumTrace, init: Sequence[DipSpec],
                    baseline_init: float | None = None, max_iter: int = MAX_ITER) -> FitResult:
    """Damped Gauss-Newton (Levenberg-Marquardt) fit of ``len(init)`` dips plus a baseline.

    Widths are kept above twice the sample spacing and contrasts inside (0, 1)
    by smooth transforms; the damping starts at 1e-3 and moves by factors
    of ten. Stops when the gradient norm of the baseline-normalized problem
    drops below 1e-8, the relative cost decrease of an accepted step drops
    below 1e-10, or no damping level yields a decrease. ``converged`` is False only when
    ``max_iter`` is exhausted.
    """
    if len(init) < 1:
        raise ValueError("at least one initial dip is required")
    n_par = 3 * len(init) + 1
    if len(trace) < 3 * n_par:
        raise ValueError(f"trace needs at least {3 * n_par} points for {len(init)} dips")
    f = trace.frequencies
    if baseline_init is None:
        baseline_init = estimate_baseline(trace.signal)
    # work on the baseline-normalized signal so the stopping rules do not
    # depend on the signal's overall scale
    y_scale = abs(float(baseline_init)) or 1.0
    y = trace.signal / y_scale
    baseline_init = baseline_init / y_scale

    # a dip needs two samples across its FWHM to be resolved
    fwhm_min = 2.0 * float(np.min(np.diff(f)))
    u = _to_internal(baseline_init, init, fwhm_min)
    nat = _to_natural(u, fwhm_min)
    model, jn = _model_and_jacobian(nat, f)
    r = model - y
    cost = 0.5 * float(r @ r)
    jac = _chain(u, jn)
    grad = jac.T @ r
    lam = 1e-3
    converged = False
    message = "max iterations reached"
    history = [cost]
    it = 0
    while it < max_iter:
        gnorm = float(np.linalg.norm(grad))
        if gnorm < GRAD_TOL:
            converged, message = True, "gradient norm below tolerance"
            break
        jtj = jac.T @ jac
        scale = np.maximum(np.diag(jtj), 1e-12 * max(1.0, float(np.max(np.diag(jtj)))))
        accepted = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(jtj + lam * np.diag(scale), -grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            u_try = u + step
            nat_try = _to_natural(u_try, fwhm_min)
            m_try, jn_try = _model_and_jacobian(nat_try, f)
            r_try = m_try - y
            cost_try = 0.5 * float(r_try @ r_try)
            if np.isfinite(cost_try) and cost_try < cost:
                accepted = True
                break
            lam *= 10.0
        it += 1
        if not accepted:
            # no descent direction left at any damping: numerically stationary
            converged, message = True, "no further decrease possible"
            break
        rel = (cost - cost_try) / max(cost, np.finfo(float).tiny)
        u, nat, r, cost, jn = u_try, nat_try, r_try, cost_try, jn_try
        jac = _chain(u, jn)
        grad = jac.T @ r
        history.append(cost)
        lam = max(lam / 10.0, 1e-15)
        if rel < COST_RTOL:
            converged, message = True, "relative cost change below tolerance"
            break

    gnorm = float(np.linalg.norm(grad))
    if not converged and gnorm < GRAD_TOL:
        converged, message = True, "gradient norm below tolerance"
    rss = 2.0 * cost
    dof = max(len(f) - n_par, 1)
    jtj_nat = jn.T @ jn
    cov = np.linalg.pinv(jtj_nat) * (rss / dof)

    baseline, dips = _unpack(nat)
    baseline *= y_scale
    rss *= y_scale * y_scale
    cov[0, :] *= y_scale
    cov[:, 0] *= y_scale
    history = [h * y_scale * y_scale for h in history]
    order = np.argsort([d.f0 for d in dips], kind="stable")
    dips = [dips[i] for i in order]
    perm = [0] + [1 + 3 * i + j for i in order for j in range(3)]
    cov = cov[np.ix_(perm, perm)]
    if not converged:
        log.warning("Lorentzian fit did not converge after %d iterations", it)
    return FitResult(baseline, dips, cov, math.sqrt(rss / len(f)), converged, it,
                     gnorm, len(f), rss, message, history)


def seed_dips(detected: Sequence[DipSpec], n_dips: int, trace: SpectrumTrace) -> list[DipSpec]:
    """Initial guesses for exactly ``n_dips`` dips.

    Keeps the deepest detections, or splits the deepest one into two halves
    at ``f0 -/+ fwhm/8`` until enough dips exist.
    """
    seeds = sorted(detected, key=lambda d: -d.contrast)[:n_dips]
    if not seeds:
        base = estimate_baseline(trace.signal)
        s = _smooth(trace.signal, 5 if len(trace) > 5 else 1)
        i = int(np.argmin(s))
        span = trace.frequencies[-1] - trace.frequencies[0]
        depth = min(max((base - s[i]) / base, 1e-3), 0.5)
        seeds = [DipSpec(float(trace.frequencies[i]), span / 10.0, depth)]
    while len(seeds) < n_dips:
        k = max(range(len(seeds)), key=lambda j: seeds[j].contrast)
        d = seeds.pop(k)
        half = d.contrast / 2.0
        seeds += [DipSpec(d.f0 - d.fwhm / 8.0, d.fwhm, half),
                  DipSpec(d.f0 + d.fwhm / 8.0, d.fwhm, half)]
    return sorted(seeds, key=lambda d: d.f0)


def select_model(trace: SpectrumTrace, candidate_counts: Sequence[int],
                 detect_cfg: DetectConfig = DetectConfig()) -> FitResult:
    """Fit each candidate dip count and keep the lowest-BIC converged fit."""
    counts = list(candidate_counts)
    if not counts or any(int(n) < 1 for n in counts):
        raise ValueError("candidate_counts must be non-empty and each >= 1")
    detected = detect_dips(trace, detect_cfg)
    base = estimate_baseline(trace.signal)

    def run(n):
        try:
            return fit_lorentzians(trace, seed_dips(detected, n, trace), base)
        except (ValueError, np.linalg.LinAlgError) as exc:
            return exc

    results = map_ordered(run, counts)
    diagnostics = {}
    ranked = []
    for n, res in zip(counts, results):
        if isinstance(res, Exception):
            diagnostics[n] = {"error": str(res)}
            continue
        diagnostics[n] = {"converged": res.converged, "iterations": res.iterations,
                          "rms_residual": res.rms_residual, "bic": res.bic,
                          "message": res.message}
        if res.converged:
            ranked.append((res.bic, n, res))
    if not ranked:
        raise ModelSelectionError("no candidate dip count converged", diagnostics)
    ranked.sort(key=lambda t: (t[0], t[1]))
    best = ranked[0][2]
    log.info("selected %d dips (BIC %.3f)", len(best.dips), ranked[0][0])
    return best
