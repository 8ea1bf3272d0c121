"""Time the numba kernels against their numpy counterparts.

    python benchmarks/bench_kernels.py [--scale 1.0] [--repeat 5] [--json out.json]

Both paths are called directly, so the DPIPS_NO_JIT flag does not matter
here. Each kernel's outputs are checked for equality before timing.
"""

from __future__ import annotations

import argparse
import json
import time

import numpy as np

from dpips import _kernels as K


def _best(fn, repeat: int) -> float:
    fn()  # warm-up (and JIT compile)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(scale: float, rng: np.random.Generator):
    n = int(200_000 * scale)
    m = 256
    width = 32
    headers = rng.integers(0, 1 << width, size=n, dtype=np.uint64)
    ports = rng.integers(1, 5, size=n).astype(np.int64)
    masks = (((np.uint64(1) << rng.integers(4, 24, size=m).astype(np.uint64)) - np.uint64(1))
             << np.uint64(8))
    values = rng.integers(0, 1 << width, size=m, dtype=np.uint64) & masks
    rule_ports = np.where(rng.random(m) < 0.2, rng.integers(1, 5, size=m), -1).astype(np.int64)
    yield ("first_match", (headers, ports, values, masks, rule_ports),
           K.first_match_numpy, K.first_match_jit)

    k = int(2_000 * max(scale, 0.05))
    av = rng.integers(0, 1 << width, size=k, dtype=np.uint64)
    am = rng.integers(0, 1 << width, size=k, dtype=np.uint64)
    yield ("overlap", (av & am, am, av[::-1] & am[::-1], am[::-1].copy()), K.overlap_numpy, K.overlap_jit)

    fields = rng.integers(0, 1 << 32, size=(n, 6), dtype=np.uint64)
    yield ("label_hash", (fields, 20), K.label_hash_numpy, K.label_hash_jit)

    walks = int(50_000 * scale)
    lengths = rng.integers(2, 12, size=walks)
    offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    idx = rng.integers(0, 54, size=int(offsets[-1])).astype(np.int64)
    yield ("visit_counts", (idx, offsets, 54), K.visit_counts_numpy, K.visit_counts_jit)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale", type=float, default=1.0, help="problem size multiplier")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", help="also write results to this file")
    args = ap.parse_args(argv)
    if not K.HAVE_NUMBA:
        print("numba is not installed; only the numpy path is available")
        return 1
    rng = np.random.default_rng(args.seed)
    rows = []
    print(f"{'kernel':<14}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, inputs, slow, fast in cases(args.scale, rng):
        a, b = slow(*inputs), fast(*inputs)
        if not np.array_equal(np.asarray(a), np.asarray(b)):
            raise SystemExit(f"{name}: numpy and numba results differ")
        t_np = _best(lambda: slow(*inputs), args.repeat)
        t_jit = _best(lambda: fast(*inputs), args.repeat)
        rows.append({"kernel": name, "numpy_s": t_np, "numba_s": t_jit, "speedup": t_np / t_jit})
        print(f"{name:<14}{t_np * 1e3:>12.2f}{t_jit * 1e3:>12.2f}{t_np / t_jit:>9.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
