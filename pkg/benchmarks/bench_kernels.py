"""Benchmark the integral kernels: numba JIT vs pure-numpy fallback.

The fallback is selected with QMMNET_NUMBA=0, so this script re-runs itself
in a subprocess with that environment to time both variants on identical
work (overlap matrix, dipole integrals, and the on-site three-index overlap
tensor for a jittered ethane-like geometry).

Usage: python3 benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _checksum(result):
    """Sum of |values| over an ndarray or a (possibly nested) container."""
    if isinstance(result, np.ndarray):
        return float(np.sum(np.abs(result)))
    if isinstance(result, dict):
        return sum(_checksum(v) for v in result.values())
    if isinstance(result, (tuple, list)):
        return sum(_checksum(v) for v in result)
    return float(abs(result))


def run_workload(repeats):
    from qmmnet import basis
    from qmmnet.kernels import USE_NUMBA

    rng = np.random.default_rng(0)
    coords = np.array(
        [
            [0, 0, 0], [0, 0, 2.9],
            [1.9, 0, -0.7], [-0.95, 1.65, -0.7], [-0.95, -1.65, -0.7],
            [1.9, 0, 3.6], [-0.95, 1.65, 3.6], [-0.95, -1.65, 3.6],
        ],
        dtype=np.float64,
    )
    coords = coords + rng.normal(scale=0.02, size=coords.shape)
    numbers = (6, 6, 1, 1, 1, 1, 1, 1)
    layout = basis.build_basis(numbers, coords)

    # warm-up (includes JIT compilation when numba is active)
    basis.overlap_matrix(layout)
    basis.dipole_integrals(layout, origin=np.zeros(3))
    basis.three_index_overlap(layout)

    timings = {}
    for name, fn in (
        ("overlap_matrix", lambda: basis.overlap_matrix(layout)),
        ("dipole_integrals", lambda: basis.dipole_integrals(layout, origin=np.zeros(3))),
        ("three_index_overlap", lambda: basis.three_index_overlap(layout)),
    ):
        t0 = time.perf_counter()
        for _ in range(repeats):
            result = fn()
        timings[name] = (time.perf_counter() - t0) / repeats
        timings[name + "_checksum"] = _checksum(result)
    return {"numba": USE_NUMBA, "timings": timings}


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=20)
    parser.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()

    if args.worker:
        print(json.dumps(run_workload(args.repeats)))
        return

    results = {}
    for label, numba_flag in (("numba", "1"), ("numpy", "0")):
        env = dict(os.environ, QMMNET_NUMBA=numba_flag)
        out = subprocess.run(
            [sys.executable, os.path.abspath(__file__), "--worker",
             "--repeats", str(args.repeats)],
            env=env, capture_output=True, text=True, check=True,
        )
        results[label] = json.loads(out.stdout.strip().splitlines()[-1])

    print(f"{'kernel':24s} {'numba':>12s} {'numpy':>12s} {'speedup':>9s}")
    for name in ("overlap_matrix", "dipole_integrals", "three_index_overlap"):
        t_nb = results["numba"]["timings"][name]
        t_np = results["numpy"]["timings"][name]
        print(f"{name:24s} {t_nb * 1e3:10.3f}ms {t_np * 1e3:10.3f}ms {t_np / t_nb:8.1f}x")
        c_nb = results["numba"]["timings"][name + "_checksum"]
        c_np = results["numpy"]["timings"][name + "_checksum"]
        if abs(c_nb - c_np) > 1e-9 * max(abs(c_nb), 1.0):
            print(f"  WARNING: checksum mismatch {c_nb} vs {c_np}")


if __name__ == "__main__":
    main()
