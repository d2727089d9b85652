"""Timing comparison of the compiled kernels against the pure-numpy fallback.

Both backends are bit-identical (tests assert exact equality); this script
measures the speed difference on representative workloads:

* ``assemble_follower_obs`` at desk scale (8 machines, 5 products, 5 ops),
  the per-tick observation hot path, and
* ``gae_advantages`` on a 4096-step buffer, the per-update advantage pass.

Run from the repository root::

    python3 benchmarks/bench_backends.py

The script imports each backend module directly, so it reports both even
when ``FABSCHED_PURE`` is set.
"""

from __future__ import annotations

import time

import numpy as np

from fabsched import _kernels_py

try:
    from fabsched import _kernels  # type: ignore[attr-defined]
except ImportError:
    _kernels = None


def obs_args(rng: np.random.Generator) -> tuple:
    nm, npo, nops, window = 8, 5, 5, 4
    return (
        rng.integers(-1, npo, nm),
        rng.integers(0, nops, nm),
        rng.integers(0, 2, nm),
        rng.integers(0, 12, nm),
        rng.integers(0, 24, nm),
        npo,
        nops,
        10,
        24,
        rng.integers(0, 9, npo),
        rng.integers(0, 9, npo),
        rng.integers(0, 9, (npo, window)),
        8,
        rng.random(3),
    )


def gae_args(rng: np.random.Generator) -> tuple:
    n = 4096
    rewards = rng.normal(size=n)
    values = rng.normal(size=n)
    next_values = rng.normal(size=n)
    ends = (rng.random(n) < 0.02).astype(np.uint8)
    ends[-1] = 1
    return rewards, values, next_values, ends, 0.99, 0.95


def bench(fn, args: tuple, repeats: int, inner: int) -> float:
    """Best-of-``repeats`` mean call time in microseconds."""
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn(*args)
        best = min(best, (time.perf_counter() - t0) / inner)
    return best * 1e6


def main() -> None:
    rng = np.random.default_rng(0)
    cases = [
        ("assemble_follower_obs", "assemble_follower_obs", obs_args(rng), 2000),
        ("gae_advantages (4096 steps)", "gae_advantages", gae_args(rng), 200),
    ]
    print(f"{'kernel':32s} {'python (us)':>12s} {'cython (us)':>12s} {'speedup':>8s}")
    for label, name, args, inner in cases:
        py = bench(getattr(_kernels_py, name), args, repeats=5, inner=inner)
        if _kernels is None:
            print(f"{label:32s} {py:12.2f} {'(not built)':>12s} {'-':>8s}")
            continue
        cy = bench(getattr(_kernels, name), args, repeats=5, inner=inner)
        out_py = getattr(_kernels_py, name)(*args)
        out_cy = np.asarray(getattr(_kernels, name)(*args))
        same = "yes" if np.array_equal(out_py, out_cy) else "NO"
        print(f"{label:32s} {py:12.2f} {cy:12.2f} {py / cy:7.1f}x  identical={same}")


if __name__ == "__main__":
    main()
