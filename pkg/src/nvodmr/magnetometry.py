"""Magnetic-field information from ODMR resonance frequencies."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .spin import (HamiltonianParams, MagneticField, ResonancePair, all_resonances,
                   axis_projections, nv_axes, resonances_and_gradients, zeeman_pattern)

INCONSISTENCY_MHZ = 1.0
_ZERO_TOL = 1e-6
_EXACT_MHZ = 1e-7  # a residual this small cannot be beaten meaningfully
_CHUNK = 16

_AXES = nv_axes()
_A = np.array([a.vector for a in _AXES])  # (4, 3)
_PERMS = list(itertools.permutations(range(4)))
_SIGNS = np.array(list(itertools.product((1.0, -1.0), repeat=4)))


class InconsistentResonanceError(ValueError):
    """Resonances that no field can produce under the given parameters."""


@dataclass
class FieldEstimate:
    b: MagneticField
    residual_rms: float
    assignment: dict
    degenerate_flags: list = field(default_factory=list)
    consistent: bool = True
    raw_b: MagneticField | None = None

    @property
    def canonical(self) -> np.ndarray:
        return canonical_field(self.b.vector)


def canonical_field(b) -> np.ndarray:
    """Representative of ``b`` modulo cube symmetries and ``b -> -b``.

    The point group of the four NV axes together with field inversion is
    the full cube group, so sorting absolute components gives
    ``bx >= by >= bz >= 0``.
    """
    v = np.abs(np.asarray(b, dtype=float))
    return np.sort(v)[::-1]


def projection_from_pair(pair, params: HamiltonianParams) -> float:
    """|B_parallel| (mT) from one resonance pair under the axial model."""
    fm, fp = pair[0], pair[1]
    if fp < fm:
        raise ValueError("f_plus must not be below f_minus")
    s = 0.5 * (fp - fm)
    if abs(s - params.E) <= _ZERO_TOL:
        return 0.0
    if s < params.E:
        raise InconsistentResonanceError(
            f"half-splitting {s:.6f} MHz is below the strain E = {params.E} MHz")
    return math.sqrt(s * s - params.E ** 2) / params.gamma


def _pair_array(pairs) -> np.ndarray:
    arr = np.array([[float(p[0]), float(p[1])] for p in pairs], dtype=float)
    return np.sort(arr, axis=1)


def _seed_fields(meas: np.ndarray, params: HamiltonianParams) -> tuple[np.ndarray, list]:
    """Axial-approximation starting fields for every (assignment, sign) choice."""
    mags = np.empty(4)
    for i, (fm, fp) in enumerate(meas):
        s = 0.5 * (fp - fm)
        mags[i] = math.sqrt(max(s * s - params.E ** 2, 0.0)) / params.gamma
    pinv = np.linalg.pinv(_A)  # (3, 4)
    seeds, labels = [], []
    for pi, perm in enumerate(_PERMS):
        # perm[axis] = index of the measured pair assigned to that axis
        m = mags[list(perm)]
        for si, sgn in enumerate(_SIGNS):
            seeds.append(pinv @ (sgn * m))
            labels.append((pi, si))
    return np.array(seeds), labels


def _cost(params, fields, targets):
    """Residual vectors for fields (m, 3) against per-seed targets (m, 4, 2)."""
    f, df = resonances_and_gradients(params, fields)
    return (f - targets).reshape(len(fields), 8), df.reshape(len(fields), 8, 3)


def _refine(params, seeds, targets, max_iter=200):
    """Levenberg-Marquardt on the full eigen-model, vectorized over seeds.

    Each seed keeps its own damping factor. Returns refined fields (k, 3)
    and their rms frequency residuals (k,).
    """
    b = np.array(seeds, dtype=float)
    tg = np.asarray(targets, dtype=float)
    r, j = _cost(params, b, tg)
    cost = np.einsum("ki,ki->k", r, r)
    lam = np.full(len(b), 1e-3)
    active = np.ones(len(b), dtype=bool)
    for _ in range(max_iter):
        active &= (np.sqrt(cost / 8.0) >= 1e-3 * _EXACT_MHZ) & (lam < 1e12)
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        ja, ra = j[idx], r[idx]
        g = np.einsum("kij,ki->kj", ja, ra)
        jtj = np.einsum("kij,kil->kjl", ja, ja)
        diag = np.maximum(np.einsum("kjj->kj", jtj), 1e-9)
        lhs = jtj + lam[idx, None, None] * (diag[:, :, None] * np.eye(3))
        step = np.linalg.solve(lhs, -g[:, :, None])[:, :, 0]
        bt = b[idx] + step
        rt, jt = _cost(params, bt, tg[idx])
        ct = np.einsum("ki,ki->k", rt, rt)
        ok = ct < cost[idx]
        acc = idx[ok]
        rel = (cost[acc] - ct[ok]) / np.maximum(cost[acc], 1e-300)
        b[acc], r[acc], j[acc], cost[acc] = bt[ok], rt[ok], jt[ok], ct[ok]
        lam[acc] = np.maximum(lam[acc] / 10.0, 1e-12)
        active[acc[rel < 1e-14]] = False
        lam[idx[~ok]] *= 10.0
    return b, np.sqrt(cost / 8.0)


def solve_b_vector(pairs: Sequence, params: HamiltonianParams,
                   threshold: float = INCONSISTENCY_MHZ) -> FieldEstimate:
    """Recover the field from four unlabeled resonance pairs.

    Every axis assignment (24) and projection sign choice (16) seeds a
    least-squares refinement against the full Hamiltonian. Seeds are
    refined in batches ordered by starting residual; the search stops early
    only once a batch reaches a residual below 1e-7 MHz. The field is known
    only up to cube symmetry and inversion; ``canonical`` gives the
    class representative.
    """
    if len(pairs) != 4:
        raise ValueError(f"exactly 4 resonance pairs are required, got {len(pairs)}")
    meas = _pair_array(pairs)
    seeds, labels = _seed_fields(meas, params)
    targets = np.stack([meas[list(_PERMS[pi])] for pi, _ in labels])  # (384, 4, 2)

    r0, _ = _cost(params, seeds, targets)
    start = np.sqrt(np.mean(r0 ** 2, axis=1))
    order = np.lexsort((np.arange(len(seeds)), start))

    best = None
    for lo in range(0, len(order), _CHUNK):
        chunk = order[lo:lo + _CHUNK]
        fields, res = _refine(params, seeds[chunk], targets[chunk])
        for k in np.lexsort((chunk, res)):
            key = (float(res[k]), int(chunk[k]))
            if best is None or key < best[0]:
                best = (key, fields[k])
        if best[0][0] < _EXACT_MHZ:
            break
    (res, idx), b = best
    perm = _PERMS[labels[idx][0]]
    assignment = {_AXES[a].index: int(perm[a]) for a in range(4)}

    flags = ["sign_of_b_unrecoverable", "cube_symmetry_equivalence"]
    proj = np.abs(axis_projections(b))
    if np.ptp(proj) < 1e-3 or len(np.unique(np.round(proj, 3))) < 4:
        flags.append("degenerate_axis_projections")
    canon = canonical_field(b)
    return FieldEstimate(MagneticField.from_vector(canon), float(res), assignment, flags,
                         consistent=res <= threshold, raw_b=MagneticField.from_vector(b))


def forward_pairs(params: HamiltonianParams, b) -> list[ResonancePair]:
    """Resonance pairs of all four axes, in axis order."""
    f = all_resonances(params, b)
    return [ResonancePair(float(fm), float(fp), ax) for (fm, fp), ax in zip(f, _AXES)]


@dataclass(frozen=True)
class PatternClass:
    count: int
    dips: tuple
    groups: tuple  # axis indices sharing one |projection|


def classify_pattern(b, params: HamiltonianParams, merge_tol: float = 1.0,
                     projection_tol: float = 1e-9) -> PatternClass:
    """Dip count of the Zeeman pattern and the |projection| grouping behind it."""
    pattern = zeeman_pattern(params, b, merge_tol)
    mags = np.abs(axis_projections(b))
    groups: list[list[int]] = []
    for i in np.argsort(mags, kind="stable"):
        if groups and abs(mags[i] - mags[groups[-1][0]]) <= projection_tol * max(1.0, mags[i]):
            groups[-1].append(int(i))
        else:
            groups.append([int(i)])
    groups = [[_AXES[i].index for i in g] for g in groups]
    return PatternClass(pattern.count, pattern.dips, tuple(tuple(sorted(g)) for g in groups))
