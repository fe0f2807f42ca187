"""Pure-Python/numpy versions of the compiled kernels in ``_ckernels.pyx``.

Same algorithms, same argument conventions. The Jacobi sweep is vectorized
across the batch instead of looping matrix by matrix, and the filter
cascade is a plain Python loop.
"""
import numpy as np

_PAIRS = ((0, 1), (0, 2), (1, 2))
_NEGLIGIBLE = 1e-18
_UNDERFLOW = 1e-290


def eigh3_batch(h, tol=1e-12, max_sweeps=50):
    a = np.array(h, dtype=np.complex128, copy=True)
    if a.ndim != 3 or a.shape[1:] != (3, 3):
        raise ValueError("expected an array of shape (n, 3, 3)")
    n = a.shape[0]
    v = np.broadcast_to(np.eye(3, dtype=np.complex128), (n, 3, 3)).copy()
    for _ in range(max_sweeps):
        off = np.sqrt(2.0 * (np.abs(a[:, 0, 1]) ** 2 + np.abs(a[:, 0, 2]) ** 2
                             + np.abs(a[:, 1, 2]) ** 2))
        active = off >= tol
        if not active.any():
            break
        for p, q in _PAIRS:
            z = a[:, p, q]
            az = np.abs(z)
            # negligible next to the diagonal, or too small for a unit phase: drop it
            tiny = (az <= _NEGLIGIBLE * (np.abs(a[:, p, p]) + np.abs(a[:, q, q]))) | (az < _UNDERFLOW)
            drop = active & tiny
            a[drop, p, q] = 0.0
            a[drop, q, p] = 0.0
            rot = active & ~tiny
            if not rot.any():
                continue
            safe = np.where(rot, az, 1.0)
            ph = np.where(rot, z / safe, 1.0)
            theta = (a[:, q, q].real - a[:, p, p].real) / (2.0 * safe)
            t = np.where(theta >= 0.0, 1.0, -1.0) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            c = np.where(rot, c, 1.0)
            s = np.where(rot, s, 0.0)
            jpp = c.astype(np.complex128)
            jpq = s.astype(np.complex128)
            jqp = -s * np.conj(ph)
            jqq = c * np.conj(ph)

            mp = a[:, :, p].copy()
            mq = a[:, :, q].copy()
            a[:, :, p] = mp * jpp[:, None] + mq * jqp[:, None]
            a[:, :, q] = mp * jpq[:, None] + mq * jqq[:, None]
            mp = a[:, p, :].copy()
            mq = a[:, q, :].copy()
            a[:, p, :] = np.conj(jpp)[:, None] * mp + np.conj(jqp)[:, None] * mq
            a[:, q, :] = np.conj(jpq)[:, None] * mp + np.conj(jqq)[:, None] * mq
            a[rot, p, q] = 0.0
            a[rot, q, p] = 0.0
            a[:, p, p] = a[:, p, p].real
            a[:, q, q] = a[:, q, q].real

            mp = v[:, :, p].copy()
            mq = v[:, :, q].copy()
            v[:, :, p] = mp * jpp[:, None] + mq * jqp[:, None]
            v[:, :, q] = mp * jpq[:, None] + mq * jqq[:, None]

    w = np.real(np.diagonal(a, axis1=1, axis2=2)).copy()
    order = np.argsort(w, axis=1, kind="stable")
    w = np.take_along_axis(w, order, axis=1)
    v = np.take_along_axis(v, order[:, None, :], axis=2)
    return w, v


def lowpass_cascade(x, alpha, order, initial=0.0):
    if order < 1:
        raise ValueError("order must be >= 1")
    src = np.ascontiguousarray(x, dtype=np.float64).tolist()
    state = [float(initial)] * order
    out = [0.0] * len(src)
    stages = range(order)
    for i, u in enumerate(src):
        for k in stages:
            y = state[k]
            y = y + alpha * (u - y)
            state[k] = y
            u = y
        out[i] = u
    return np.array(out, dtype=np.float64)


def render_separable(density, wx, wy, wz, xlo, xhi, ylo, yhi, zlo, zhi):
    d = np.asarray(density, dtype=np.float64)
    wx = np.asarray(wx, dtype=np.float64)
    wy = np.asarray(wy, dtype=np.float64)
    wz = np.asarray(wz, dtype=np.float64)
    nx, ny = d.shape[0], d.shape[1]
    plane = d[:, :, zlo:zhi] @ wz[zlo:zhi] if zhi > zlo else np.zeros((nx, ny))
    ax = _band(wx, xlo, xhi)
    ay = _band(wy, ylo, yhi)
    return ay @ (ax @ plane).T


def _band(w, lo, hi):
    idx = np.arange(w.shape[1])
    lo = np.asarray(lo)[:, None]
    hi = np.asarray(hi)[:, None]
    return np.where((idx >= lo) & (idx < hi), w, 0.0)
