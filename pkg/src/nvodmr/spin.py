"""Ground-state spin-1 Hamiltonian of the NV center.

Units: frequencies in MHz, fields in mT. Matrices are written in the
``m_s = (+1, 0, -1)`` basis of the axis-local frame.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import _core

GAMMA_NV = 28.024  # MHz/mT, electron g * mu_B / h
D_ZFS = 2870.0  # MHz

_SQ2 = 1.0 / math.sqrt(2.0)
SX = _SQ2 * np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=np.complex128)
SY = _SQ2 * np.array([[0, -1j, 0], [1j, 0, -1j], [0, 1j, 0]], dtype=np.complex128)
SZ = np.diag([1.0, 0.0, -1.0]).astype(np.complex128)
SZ2 = SZ @ SZ
SX2_SY2 = SX @ SX - SY @ SY

MS0 = 1  # index of |m_s = 0> in the basis
_TIE_TOL = 1e-9


@dataclass(frozen=True)
class HamiltonianParams:
    """Zero-field splitting ``D``, strain ``E`` (MHz) and ``gamma`` (MHz/mT)."""

    D: float = D_ZFS
    E: float = 0.0
    gamma: float = GAMMA_NV

    def __post_init__(self):
        if not (self.D > 0 and math.isfinite(self.D)):
            raise ValueError(f"D must be positive, got {self.D}")
        if not (self.E >= 0 and math.isfinite(self.E)):
            raise ValueError(f"E must be non-negative, got {self.E}")
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise ValueError(f"gamma must be positive, got {self.gamma}")


@dataclass(frozen=True)
class MagneticField:
    """Static field in the cubic crystal frame, mT."""

    bx: float = 0.0
    by: float = 0.0
    bz: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(c) for c in (self.bx, self.by, self.bz)):
            raise ValueError("field components must be finite")

    @classmethod
    def from_vector(cls, v) -> "MagneticField":
        x, y, z = (float(c) for c in v)
        return cls(x, y, z)

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.bx, self.by, self.bz], dtype=float)

    @property
    def magnitude(self) -> float:
        return float(np.linalg.norm(self.vector))

    def __neg__(self):
        return MagneticField(-self.bx, -self.by, -self.bz)

    def scaled(self, k: float) -> "MagneticField":
        return MagneticField(k * self.bx, k * self.by, k * self.bz)


@dataclass(frozen=True)
class NVAxis:
    index: int
    direction: tuple

    @property
    def vector(self) -> np.ndarray:
        return np.asarray(self.direction, dtype=float)

    def frame(self) -> np.ndarray:
        """Rows are the local x, y, z unit vectors in crystal coordinates."""
        return _local_frame(self.vector)


class ResonancePair(NamedTuple):
    f_minus: float
    f_plus: float
    axis: NVAxis | None = None

    @property
    def splitting(self) -> float:
        return self.f_plus - self.f_minus


@dataclass(frozen=True)
class DipPattern:
    """Merged Zeeman dips: ``dips`` is a list of ``(frequency, multiplicity)``."""

    dips: tuple

    @property
    def count(self) -> int:
        return len(self.dips)

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([f for f, _ in self.dips])

    @property
    def multiplicities(self) -> tuple:
        return tuple(m for _, m in self.dips)

    @property
    def spread(self) -> float:
        f = self.frequencies
        return float(f[-1] - f[0])


_AXIS_DIRS = ((1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1))


def _local_frame(z: np.ndarray) -> np.ndarray:
    z = z / np.linalg.norm(z)
    x = np.array([1.0, 0.0, 0.0]) - z[0] * z
    if np.linalg.norm(x) < 1e-6:
        x = np.array([0.0, 1.0, 0.0]) - z[1] * z
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.vstack([x, y, z])


def nv_axes() -> list[NVAxis]:
    """The four <111> NV orientations, unit length, indexed 1..4."""
    s = 1.0 / math.sqrt(3.0)
    return [NVAxis(i + 1, tuple(s * c for c in d)) for i, d in enumerate(_AXIS_DIRS)]


_AXES = nv_axes()
_FRAMES = np.stack([a.frame() for a in _AXES])  # (4, 3, 3)


def _as_vector(b) -> np.ndarray:
    if isinstance(b, MagneticField):
        return b.vector
    return np.asarray(b, dtype=float)


def axis_projections(b, axes: Sequence[NVAxis] | None = None) -> np.ndarray:
    """Signed projections of ``b`` onto each NV axis (mT)."""
    axes = _AXES if axes is None else axes
    v = _as_vector(b)
    return np.array([float(np.dot(v, a.vector)) for a in axes])


def _hamiltonians(params: HamiltonianParams, b_local: np.ndarray) -> np.ndarray:
    """Stack of Hamiltonians for local-frame fields ``b_local`` of shape (..., 3)."""
    b_local = np.asarray(b_local, dtype=float)
    g = params.gamma
    h = (params.D * SZ2 + params.E * SX2_SY2
         + g * (b_local[..., 0, None, None] * SX
                + b_local[..., 1, None, None] * SY
                + b_local[..., 2, None, None] * SZ))
    return h


def build_hamiltonian(params: HamiltonianParams, b, axis: NVAxis) -> np.ndarray:
    """3x3 Hermitian Hamiltonian (MHz) for one NV orientation.

    The crystal-frame field is rotated into the axis-local frame before use.
    """
    b_local = axis.frame() @ _as_vector(b)
    return _hamiltonians(params, b_local)


def _pick_transitions(w: np.ndarray, v: np.ndarray):
    """Ground-reference gaps from batched eigen-decompositions.

    The reference is the eigenstate with the largest |<m_s=0|psi>|^2; ties
    within 1e-9 go to the lower eigenvalue.
    """
    overlap = np.abs(v[:, MS0, :]) ** 2  # (n, 3)
    best = overlap.max(axis=1, keepdims=True)
    candidates = overlap >= best - _TIE_TOL
    # eigenvalues are ascending, so the first candidate is the lowest
    ref = np.argmax(candidates, axis=1)
    n = w.shape[0]
    others = np.array([[j for j in range(3) if j != r] for r in range(3)])[ref]
    rows = np.arange(n)[:, None]
    gaps = w[rows, others] - w[np.arange(n), ref][:, None]
    gaps.sort(axis=1)
    return gaps, ref, others


def resonances_local(params: HamiltonianParams, b_local: np.ndarray) -> np.ndarray:
    """Transition frequencies for a stack of local-frame fields, shape (n, 2)."""
    b_local = np.atleast_2d(np.asarray(b_local, dtype=float))
    w, v = _core.eigh3_batch(_hamiltonians(params, b_local))
    gaps, _, _ = _pick_transitions(w, v)
    return gaps


def resonances(params: HamiltonianParams, b, axis: NVAxis) -> ResonancePair:
    """The two ODMR transition frequencies of one NV orientation."""
    b_local = axis.frame() @ _as_vector(b)
    fm, fp = resonances_local(params, b_local)[0]
    return ResonancePair(float(fm), float(fp), axis)


def all_resonances(params: HamiltonianParams, b) -> np.ndarray:
    """Transition frequencies for all four axes, shape (4, 2), in axis order."""
    b_local = _FRAMES @ _as_vector(b)
    return resonances_local(params, b_local)


def resonances_and_gradients(params: HamiltonianParams, fields: np.ndarray):
    """Frequencies and their field derivatives for crystal-frame fields.

    ``fields`` has shape (m, 3). Returns ``f`` of shape (m, 4, 2) and
    ``df`` of shape (m, 4, 2, 3) where ``df[..., k]`` is the derivative
    with respect to the k-th crystal field component (MHz/mT), obtained
    from first-order perturbation theory on the eigenvectors.
    """
    fields = np.atleast_2d(np.asarray(fields, dtype=float))
    m = fields.shape[0]
    b_local = np.einsum("aij,mj->mai", _FRAMES, fields).reshape(-1, 3)
    w, v = _core.eigh3_batch(_hamiltonians(params, b_local))
    n = w.shape[0]
    overlap = np.abs(v[:, MS0, :]) ** 2
    best = overlap.max(axis=1, keepdims=True)
    ref = np.argmax(overlap >= best - _TIE_TOL, axis=1)
    others = np.array([[j for j in range(3) if j != r] for r in range(3)])[ref]
    idx = np.arange(n)

    # <psi_k| S_a |psi_k> for each eigenvector k and local component a
    ops = np.stack([SX, SY, SZ])
    expect = np.einsum("nik,aij,njk->nka", v.conj(), ops, v).real  # (n, 3, 3)
    grad_local = params.gamma * expect  # dE_k / dB_local
    frames = np.broadcast_to(_FRAMES, (m, 4, 3, 3)).reshape(-1, 3, 3)
    grad = np.einsum("nka,nac->nkc", grad_local, frames)  # crystal components

    e_ref = w[idx, ref]
    f = w[idx[:, None], others] - e_ref[:, None]
    df = grad[idx[:, None], others] - grad[idx, ref][:, None, :]
    order = np.argsort(f, axis=1)
    f = np.take_along_axis(f, order, axis=1)
    df = np.take_along_axis(df, order[:, :, None], axis=1)
    return f.reshape(m, 4, 2), df.reshape(m, 4, 2, 3)


def merge_frequencies(freqs, merge_tol: float) -> DipPattern:
    """Group sorted frequencies whose neighbour gap is below ``merge_tol``."""
    if merge_tol <= 0:
        raise ValueError("merge_tol must be positive")
    f = np.sort(np.asarray(freqs, dtype=float))
    groups = [[f[0]]]
    for x in f[1:]:
        if x - groups[-1][-1] < merge_tol:
            groups[-1].append(x)
        else:
            groups.append([x])
    return DipPattern(tuple((float(np.mean(g)), len(g)) for g in groups))


def zeeman_pattern(params: HamiltonianParams, b, merge_tol: float = 1.0) -> DipPattern:
    """Merged dip pattern of all eight transitions for field ``b``."""
    return merge_frequencies(all_resonances(params, b).ravel(), merge_tol)
