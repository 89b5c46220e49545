"""Compare the compiled kernels with the numpy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--samples N] [--repeats R]

Times each kernel on identical inputs with both backends, checks that the
outputs agree, then times a full one-second four-receiver simulation with
each backend swapped in.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from echosense import _pykernels, kernels
from echosense import frontend as fe
from echosense import gasdb

try:
    from echosense import _ckernels
except ImportError:
    _ckernels = None

NAMES = ("envelope_follow", "xor_integrate")


def best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def kernel_cases(n, rng):
    x = rng.normal(size=n)
    ref = rng.integers(0, 2, n).astype(np.uint8)
    return {
        "envelope_follow": lambda k: k.envelope_follow(x, 0.004, 0.0)[0],
        "xor_integrate": lambda k: k.xor_integrate(x, ref, 0.0, np.zeros(256, np.uint8), 0, 0)[0],
    }


def simulate_with(backend, scenario):
    saved = {name: getattr(kernels, name) for name in NAMES}
    try:
        for name in NAMES:
            setattr(kernels, name, getattr(backend, name))
        return fe.simulate(scenario)
    finally:
        for name, fn in saved.items():
            setattr(kernels, name, fn)


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--samples", type=int, default=1_024_000)
    p.add_argument("--repeats", type=int, default=3)
    args = p.parse_args()

    backends = {"python": _pykernels}
    if _ckernels is not None:
        backends["cython"] = _ckernels
    print(f"selected backend: {kernels.BACKEND}; samples per kernel call: {args.samples}")
    print(f"{'kernel':<18}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}")
    cases = kernel_cases(args.samples, np.random.default_rng(0))
    for name, case in cases.items():
        times, outs = [], []
        for k in backends.values():
            t, out = best_of(lambda: case(k), args.repeats)
            times.append(t)
            outs.append(out)
        if len(outs) == 2:
            np.testing.assert_allclose(outs[0], outs[1], rtol=1e-9, atol=1e-12)
        speed = f"{times[0] / times[-1]:>9.1f}x" if len(times) == 2 else ""
        print(f"{name:<18}" + "".join(f"{t * 1e3:>10.1f}ms" for t in times) + speed)

    db = gasdb.load()
    sc = fe.Scenario(db.get("argon"), 15.0, 1.0, 0.2, noise_sigma=0.01, seed=1)
    times, results = [], []
    for k in backends.values():
        t, out = best_of(lambda: simulate_with(k, sc), 1)
        times.append(t)
        results.append(out)
    if len(results) == 2:
        assert all(np.allclose(a.v1, b.v1) and np.allclose(a.v2, b.v2) for a, b in zip(*results))
    speed = f"{times[0] / times[-1]:>9.1f}x" if len(times) == 2 else ""
    print(f"{'simulate 1 s x4':<18}" + "".join(f"{t * 1e3:>10.1f}ms" for t in times) + speed)


if __name__ == "__main__":
    main()
