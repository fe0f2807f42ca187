# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops.

Every function here has a numerically equivalent twin in ``_pykernels``;
``nvodmr._core`` picks one of the two at import time.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef extern from "complex.h" nogil:
    double cabs(double complex)
    double complex conj(double complex)
    double creal(double complex)


cdef int _jacobi3(double complex[:, ::1] a, double complex[:, ::1] v,
                  double tol, int max_sweeps) noexcept nogil:
    cdef int sweep, p, q, r, k
    cdef int pairs_p[3]
    cdef int pairs_q[3]
    cdef double off, az, theta, t, c, s
    cdef double complex z, ph, jpp, jpq, jqp, jqq, mp, mq
    pairs_p[0] = 0; pairs_q[0] = 1
    pairs_p[1] = 0; pairs_q[1] = 2
    pairs_p[2] = 1; pairs_q[2] = 2

    for r in range(3):
        for k in range(3):
            v[r, k] = 0.0
        v[r, r] = 1.0

    for sweep in range(max_sweeps):
        off = sqrt(2.0 * (cabs(a[0, 1]) ** 2 + cabs(a[0, 2]) ** 2 + cabs(a[1, 2]) ** 2))
        if off < tol:
            return sweep
        for k in range(3):
            p = pairs_p[k]
            q = pairs_q[k]
            z = a[p, q]
            az = cabs(z)
            # negligible next to the diagonal, or too small for a unit phase: drop it
            if az <= 1e-18 * (cabs(a[p, p]) + cabs(a[q, q])) or az < 1e-290:
                a[p, q] = 0.0
                a[q, p] = 0.0
                continue
            ph = z / az
            theta = (creal(a[q, q]) - creal(a[p, p])) / (2.0 * az)
            if theta >= 0.0:
                t = 1.0 / (theta + sqrt(theta * theta + 1.0))
            else:
                t = -1.0 / (-theta + sqrt(theta * theta + 1.0))
            c = 1.0 / sqrt(t * t + 1.0)
            s = t * c
            # J = diag-phase * real rotation acting on (p, q)
            jpp = c
            jpq = s
            jqp = -s * conj(ph)
            jqq = c * conj(ph)
            # A <- A J (columns p, q)
            for r in range(3):
                mp = a[r, p]
                mq = a[r, q]
                a[r, p] = mp * jpp + mq * jqp
                a[r, q] = mp * jpq + mq * jqq
            # A <- J^H A (rows p, q)
            for r in range(3):
                mp = a[p, r]
                mq = a[q, r]
                a[p, r] = conj(jpp) * mp + conj(jqp) * mq
                a[q, r] = conj(jpq) * mp + conj(jqq) * mq
            a[p, q] = 0.0
            a[q, p] = 0.0
            a[p, p] = creal(a[p, p])
            a[q, q] = creal(a[q, q])
            for r in range(3):
                mp = v[r, p]
                mq = v[r, q]
                v[r, p] = mp * jpp + mq * jqp
                v[r, q] = mp * jpq + mq * jqq
    return max_sweeps


def eigh3_batch(h, double tol=1e-12, int max_sweeps=50):
    """Diagonalize a stack of 3x3 Hermitian matrices by cyclic Jacobi rotations.

    Returns ``(w, v)`` with eigenvalues ascending along the last axis of ``w``
    and matching eigenvectors in the columns of ``v``.
    """
    cdef cnp.ndarray[cnp.complex128_t, ndim=3] work = np.array(h, dtype=np.complex128, order="C", copy=True)
    if work.ndim != 3 or work.shape[1] != 3 or work.shape[2] != 3:
        raise ValueError("expected an array of shape (n, 3, 3)")
    cdef Py_ssize_t n = work.shape[0]
    cdef cnp.ndarray[cnp.complex128_t, ndim=3] vecs = np.empty((n, 3, 3), dtype=np.complex128)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] vals = np.empty((n, 3), dtype=np.float64)
    cdef double complex[:, :, ::1] wv = work
    cdef double complex[:, :, ::1] vv = vecs
    cdef double[:, ::1] ev = vals
    cdef Py_ssize_t i
    cdef int r, k, j, order[3]
    cdef double d[3]
    cdef double complex tmp[3][3]
    with nogil:
        for i in range(n):
            _jacobi3(wv[i], vv[i], tol, max_sweeps)
            for k in range(3):
                d[k] = creal(wv[i, k, k])
                order[k] = k
            # insertion sort of three indices by eigenvalue
            for k in range(1, 3):
                j = k
                while j > 0 and d[order[j - 1]] > d[order[j]]:
                    r = order[j]
                    order[j] = order[j - 1]
                    order[j - 1] = r
                    j -= 1
            for r in range(3):
                for k in range(3):
                    tmp[r][k] = vv[i, r, order[k]]
            for k in range(3):
                ev[i, k] = d[order[k]]
                for r in range(3):
                    vv[i, r, k] = tmp[r][k]
    return vals, vecs


def lowpass_cascade(x, double alpha, int order, double initial=0.0):
    """Run ``order`` identical first-order stages ``y += alpha * (u - y)``."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] src = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = src.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef double[::1] xv = src
    cdef double[::1] yv = out
    cdef Py_ssize_t i
    cdef int k
    cdef double u
    if order < 1:
        raise ValueError("order must be >= 1")
    cdef double *state = <double *> malloc(order * sizeof(double))
    if state == NULL:
        raise MemoryError()
    try:
        with nogil:
            for k in range(order):
                state[k] = initial
            for i in range(n):
                u = xv[i]
                for k in range(order):
                    state[k] = state[k] + alpha * (u - state[k])
                    u = state[k]
                yv[i] = u
    finally:
        free(state)
    return out


def render_separable(density, wx, wy, wz, xlo, xhi, ylo, yhi, Py_ssize_t zlo, Py_ssize_t zhi):
    """Sum ``density * wx * wy * wz`` over the banded voxel window of every pixel.

    ``density`` has shape (nx, ny, nz); ``wx`` (px, nx) and ``wy`` (py, ny)
    hold per-pixel 1-D weights that are only read inside ``[lo, hi)``.
    Returns an image of shape (py, px).
    """
    cdef double[:, :, ::1] d = np.ascontiguousarray(density, dtype=np.float64)
    cdef double[:, ::1] ax = np.ascontiguousarray(wx, dtype=np.float64)
    cdef double[:, ::1] ay = np.ascontiguousarray(wy, dtype=np.float64)
    cdef double[::1] az = np.ascontiguousarray(wz, dtype=np.float64)
    cdef long[::1] x0 = np.ascontiguousarray(xlo, dtype=np.int64)
    cdef long[::1] x1 = np.ascontiguousarray(xhi, dtype=np.int64)
    cdef long[::1] y0 = np.ascontiguousarray(ylo, dtype=np.int64)
    cdef long[::1] y1 = np.ascontiguousarray(yhi, dtype=np.int64)
    cdef Py_ssize_t nx = d.shape[0], ny = d.shape[1]
    cdef Py_ssize_t px = ax.shape[0], py = ay.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] plane = np.zeros((nx, ny), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] rows = np.zeros((px, ny), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] img = np.zeros((py, px), dtype=np.float64)
    cdef double[:, ::1] pv = plane
    cdef double[:, ::1] rv = rows
    cdef double[:, ::1] iv = img
    cdef Py_ssize_t i, j, k, z
    cdef double acc
    with nogil:
        for i in range(nx):
            for j in range(ny):
                acc = 0.0
                for z in range(zlo, zhi):
                    acc = acc + az[z] * d[i, j, z]
                pv[i, j] = acc
        for k in range(px):
            for j in range(ny):
                acc = 0.0
                for i in range(x0[k], x1[k]):
                    acc = acc + ax[k, i] * pv[i, j]
                rv[k, j] = acc
        for j in range(py):
            for k in range(px):
                acc = 0.0
                for i in range(y0[j], y1[j]):
                    acc = acc + ay[j, i] * rv[k, i]
                iv[j, k] = acc
    return img
