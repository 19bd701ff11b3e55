"""Compiled vs numpy path simulation kernels.

    python benchmarks/bench_kernels.py --paths 20000 --steps 500 --repeat 3

Each case runs once per backend to warm up (numba compiles or loads its cache),
then ``--repeat`` timed runs; the table reports the best time, the speed-up and
the largest difference between the two backends' outputs.
"""
import argparse
import time

import numpy as np

from ergodic_lab import _accel
from ergodic_lab.domain import make_domain
from ergodic_lab.model import make_model
from ergodic_lab.sde import (SimConfig, penalization_gaps, simulate_reflected,
                             simulate_unreflected)


def _cases(n_paths, n_steps):
    dt = 1e-3
    ou = make_model("reflected_ou")
    cubic = make_model("cubic_sin")
    box = make_domain("box", lo=[-1.0], hi=[1.0])
    ball = make_domain("ball", dim=3, center=[0.0, 0.0, 0.0], radius=1.0)
    ou3 = make_model("reflected_ou", dim=3)
    cfg = SimConfig(dt, dt * n_steps, n_paths, seed=1, scheme="projected")
    pen = SimConfig(0.1 / 256, 0.1 / 256 * n_steps, n_paths, seed=1)

    return {
        "reflected OU, 1D box": lambda b: simulate_reflected(ou, box, 0.5, cfg, backend=b).states,
        "reflected OU, 3D ball": lambda b: simulate_reflected(ou3, ball, np.zeros(3), cfg,
                                                              backend=b).states,
        "tamed cubic, whole space": lambda b: simulate_unreflected(
            cubic, 2.0, cfg.replace(scheme="unreflected"), backend=b).states,
        "penalization gaps, 3 n": lambda b: np.hstack(
            penalization_gaps(ou, box, [16, 64, 256], 0.9, pen, backend=b)),
    }


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=20_000)
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not _accel.HAS_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    print(f"{args.paths} paths x {args.steps} steps, best of {args.repeat}")
    print(f"{'case':28s} {'numba [s]':>10s} {'numpy [s]':>10s} {'speed-up':>9s} {'max diff':>10s}")
    for name, run in _cases(args.paths, args.steps).items():
        t0 = time.perf_counter()
        run("numba")
        warm = time.perf_counter() - t0
        run("numpy")
        t_nb, a = _best(lambda: run("numba"), args.repeat)
        t_np, b = _best(lambda: run("numpy"), args.repeat)
        diff = float(np.abs(a - b).max())
        print(f"{name:28s} {t_nb:10.4f} {t_np:10.4f} {t_np / t_nb:8.1f}x {diff:10.1e}"
              f"   (first numba call {warm:.2f} s)")


if __name__ == "__main__":
    main()
