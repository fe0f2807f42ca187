"""Time the compiled kernels against the numpy fallback.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5]

Prints the best-of-N wall time per kernel and backend, and the speed-up.
Both backends are checked for agreement on the benchmark inputs first.
"""
import argparse
import timeit

import numpy as np

from nvodmr import _core
from nvodmr.scan import Phantom, PSFConfig, _weights_1d
from nvodmr.signal_chain import LockinConfig
from nvodmr.spin import HamiltonianParams, build_hamiltonian, nv_axes


def eigh_case(n=4000, seed=0):
    rng = np.random.default_rng(seed)
    params = HamiltonianParams(2870.0, 2.82, 28.024)
    axes = nv_axes()
    h = np.stack([build_hamiltonian(params, rng.normal(size=3), axes[i % 4]) for i in range(n)])
    return (h,)


def lowpass_case(n=400_000, seed=0):
    x = np.random.default_rng(seed).normal(size=n)
    return (x, LockinConfig().alpha, 5, 0.0)


def render_case(pixels=256):
    ph = Phantom((160, 96, 20), (0.25, 0.25, 0.5))
    ph.add_density("2PEF", ph.sphere_mask((20.0, 12.0, 5.0), 6.0), 1.0)
    psf = PSFConfig()
    xs = np.linspace(0.0, 40.0, pixels)
    ys = np.linspace(0.0, 24.0, pixels)
    wx, xlo, xhi = _weights_1d(ph.centers(0), xs, psf.fwhm_lateral)
    wy, ylo, yhi = _weights_1d(ph.centers(1), ys, psf.fwhm_lateral)
    wz, zlo, zhi = _weights_1d(ph.centers(2), np.array([5.0]), psf.fwhm_axial)
    return (ph.density("2PEF"), wx, wy, wz[0], xlo, xhi, ylo, yhi, int(zlo[0]), int(zhi[0]))


CASES = {"eigh3_batch": eigh_case, "lowpass_cascade": lowpass_case,
         "render_separable": render_case}


def _agree(a, b):
    if isinstance(a, tuple):
        return all(_agree(x, y) for x, y in zip(a, b))
    return np.allclose(np.abs(a) if np.iscomplexobj(a) else a,
                       np.abs(b) if np.iscomplexobj(b) else b, rtol=1e-9, atol=1e-9)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = _core.backends()
    if "cython" not in backends:
        print("compiled kernels not built; only the numpy fallback is available")
    print(f"{'kernel':<18}" + "".join(f"{b:>12}" for b in backends) + f"{'speed-up':>10}")
    for name, make in CASES.items():
        inputs = make()
        outs = {b: getattr(m, name)(*inputs) for b, m in backends.items()}
        if len(outs) == 2 and not _agree(outs["python"][0] if name == "eigh3_batch"
                                         else outs["python"],
                                         outs["cython"][0] if name == "eigh3_batch"
                                         else outs["cython"]):
            raise SystemExit(f"{name}: backends disagree")
        times = {b: min(timeit.repeat(lambda m=m: getattr(m, name)(*inputs),
                                      number=1, repeat=args.repeat))
                 for b, m in backends.items()}
        row = f"{name:<18}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times.values())
        if len(times) == 2:
            row += f"{times['python'] / times['cython']:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
