"""Compare the numba and pure-numpy convolution kernels.

The backend is frozen at import time from the AFFECTNN_BACKEND environment
variable, so each backend is timed in its own subprocess. Run with no
arguments to print a comparison table:

    python benchmarks/bench_backends.py
"""

import argparse
import json
import os
import subprocess
import sys
import time

CASES = [
    # (C_in, H, W, C_out, k)  -- the three conv stages of the default model
    ("conv1 96x96", 1, 96, 96, 64, 5),
    ("conv2 46x46", 64, 46, 46, 128, 5),
    ("conv3 21x21", 128, 21, 21, 256, 5),
]


def run_case(c_in, h, w, c_out, k, repeats):
    import numpy as np

    from affectnn import kernels

    rng = np.random.default_rng(0)
    x = rng.normal(size=(c_in, h, w))
    wgt = rng.normal(size=(c_out, c_in, k, k))
    b = rng.normal(size=c_out)
    out = kernels.conv2d_fwd(x, wgt, b)  # warmup (includes JIT compile)
    kernels.conv2d_bwd(x, wgt, out)
    t0 = time.perf_counter()
    for _ in range(repeats):
        out = kernels.conv2d_fwd(x, wgt, b)
    fwd = (time.perf_counter() - t0) / repeats
    t0 = time.perf_counter()
    for _ in range(repeats):
        kernels.conv2d_bwd(x, wgt, out)
    bwd = (time.perf_counter() - t0) / repeats
    return fwd, bwd


def worker(repeats):
    from affectnn import BACKEND

    results = {"backend": BACKEND, "cases": {}}
    for label, *dims in CASES:
        fwd, bwd = run_case(*dims, repeats)
        results["cases"][label] = [fwd, bwd]
    print(json.dumps(results))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()
    if args.worker:
        worker(args.repeats)
        return

    reports = {}
    for backend in ("numba", "numpy"):
        env = dict(os.environ, AFFECTNN_BACKEND=backend)
        proc = subprocess.run(
            [sys.executable, __file__, "--worker", "--repeats",
             str(args.repeats)],
            env=env, capture_output=True, text=True, check=True,
        )
        doc = json.loads(proc.stdout.splitlines()[-1])
        if doc["backend"] != backend:
            raise RuntimeError(
                f"requested backend {backend}, got {doc['backend']} "
                "(is numba installed?)"
            )
        reports[backend] = doc["cases"]

    header = f"{'case':<14} {'pass':<5} {'numba (ms)':>11} {'numpy (ms)':>11} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for label, *_ in CASES:
        for i, direction in enumerate(("fwd", "bwd")):
            nb = reports["numba"][label][i] * 1e3
            np_ = reports["numpy"][label][i] * 1e3
            print(f"{label:<14} {direction:<5} {nb:>11.2f} {np_:>11.2f} "
                  f"{np_ / nb:>7.2f}x")


if __name__ == "__main__":
    main()
