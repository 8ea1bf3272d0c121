"""Numeric kernels with a numba path and a pure-numpy path.

Set ``DPIPS_NO_JIT=1`` to force the numpy implementations. Both paths are
always importable so the benchmark and the tests can compare them directly.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None

JIT_DISABLED = os.environ.get("DPIPS_NO_JIT", "").strip() not in ("", "0")
HAVE_NUMBA = numba is not None
USE_JIT = HAVE_NUMBA and not JIT_DISABLED

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

# Keeps the (n, m) boolean temporaries of the numpy path bounded.
_CHUNK_CELLS = 1 << 22


# ---------------------------------------------------------------- numpy path

def first_match_numpy(headers, in_ports, values, masks, rule_ports):
    """Index of the first rule matching each header, or -1.

    Rules must already be in evaluation order. ``rule_ports`` holds the
    required in_port per rule, with -1 meaning any port.
    """
    headers = np.asarray(headers, dtype=np.uint64)
    in_ports = np.asarray(in_ports, dtype=np.int64)
    n, m = headers.shape[0], values.shape[0]
    out = np.full(n, -1, dtype=np.int64)
    if n == 0 or m == 0:
        return out
    step = max(1, _CHUNK_CELLS // m)
    any_port = rule_ports[None, :] < 0
    for lo in range(0, n, step):
        h = headers[lo:lo + step, None]
        hit = ((h ^ values[None, :]) & masks[None, :]) == 0
        hit &= any_port | (rule_ports[None, :] == in_ports[lo:lo + step, None])
        idx = np.argmax(hit, axis=1)
        found = hit[np.arange(hit.shape[0]), idx]
        out[lo:lo + step] = np.where(found, idx, -1)
    return out


def overlap_numpy(av, am, bv, bm):
    """Boolean matrix: pattern a[i] and pattern b[j] share at least one header."""
    av = np.asarray(av, dtype=np.uint64)
    am = np.asarray(am, dtype=np.uint64)
    bv = np.asarray(bv, dtype=np.uint64)
    bm = np.asarray(bm, dtype=np.uint64)
    return ((av[:, None] ^ bv[None, :]) & am[:, None] & bm[None, :]) == 0


def _splitmix(z):
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def label_hash_numpy(fields, width):
    """Hash each row of an (n, k) uint64 field matrix down to ``width`` bits."""
    fields = np.atleast_2d(np.asarray(fields, dtype=np.uint64))
    with np.errstate(over="ignore"):
        h = np.full(fields.shape[0], _GOLDEN, dtype=np.uint64)
        for j in range(fields.shape[1]):
            h = _splitmix(h ^ fields[:, j])
    return (h >> np.uint64(64 - width)).astype(np.int64)


_M64 = (1 << 64) - 1


def label_hash_scalar(fields, width):
    """Single-row label hash in plain integers; same values as the array paths."""
    h = int(_GOLDEN)
    for f in fields:
        z = ((h ^ (int(f) & _M64)) + int(_GOLDEN)) & _M64
        z = ((z ^ (z >> 30)) * int(_MIX1)) & _M64
        z = ((z ^ (z >> 27)) * int(_MIX2)) & _M64
        h = z ^ (z >> 31)
    return h >> (64 - width)


def visit_counts_numpy(device_idx, offsets, n_devices):
    """Number of trajectories visiting each device (repeat visits count once).

    Trajectory t owns ``device_idx[offsets[t]:offsets[t + 1]]``.
    """
    device_idx = np.asarray(device_idx, dtype=np.int64)
    offsets = np.asarray(offsets, dtype=np.int64)
    lengths = np.diff(offsets)
    traj = np.repeat(np.arange(lengths.shape[0], dtype=np.int64), lengths)
    pairs = np.unique(traj * np.int64(n_devices) + device_idx)
    return np.bincount(pairs % n_devices, minlength=n_devices).astype(np.int64)


# ---------------------------------------------------------------- numba path

if HAVE_NUMBA:

    @numba.njit(cache=True)
    def first_match_jit(headers, in_ports, values, masks, rule_ports):
        n = headers.shape[0]
        m = values.shape[0]
        out = np.full(n, -1, dtype=np.int64)
        for i in range(n):
            h = headers[i]
            p = in_ports[i]
            for j in range(m):
                if ((h ^ values[j]) & masks[j]) == 0 and (rule_ports[j] < 0 or rule_ports[j] == p):
                    out[i] = j
                    break
        return out

    @numba.njit(cache=True)
    def overlap_jit(av, am, bv, bm):
        n = av.shape[0]
        m = bv.shape[0]
        out = np.zeros((n, m), dtype=np.bool_)
        for i in range(n):
            for j in range(m):
                out[i, j] = ((av[i] ^ bv[j]) & am[i] & bm[j]) == 0
        return out

    @numba.njit(cache=True)
    def _splitmix_scalar(z):
        z = z + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))

    @numba.njit(cache=True)
    def label_hash_jit(fields, width):
        n, k = fields.shape
        out = np.empty(n, dtype=np.int64)
        shift = np.uint64(64 - width)
        for i in range(n):
            h = np.uint64(0x9E3779B97F4A7C15)
            for j in range(k):
                h = _splitmix_scalar(h ^ fields[i, j])
            out[i] = np.int64(h >> shift)
        return out

    @numba.njit(cache=True)
    def visit_counts_jit(device_idx, offsets, n_devices):
        counts = np.zeros(n_devices, dtype=np.int64)
        stamp = np.full(n_devices, -1, dtype=np.int64)
        for t in range(offsets.shape[0] - 1):
            for q in range(offsets[t], offsets[t + 1]):
                d = device_idx[q]
                if stamp[d] != t:
                    stamp[d] = t
                    counts[d] += 1
        return counts

else:  # pragma: no cover
    first_match_jit = overlap_jit = label_hash_jit = visit_counts_jit = None


def _u64(a):
    return np.ascontiguousarray(a, dtype=np.uint64)


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def first_match(headers, in_ports, values, masks, rule_ports):
    if USE_JIT:
        return first_match_jit(_u64(headers), _i64(in_ports), _u64(values), _u64(masks), _i64(rule_ports))
    return first_match_numpy(headers, in_ports, _u64(values), _u64(masks), _i64(rule_ports))


def overlap(av, am, bv, bm):
    if USE_JIT:
        return overlap_jit(_u64(av), _u64(am), _u64(bv), _u64(bm))
    return overlap_numpy(av, am, bv, bm)


def label_hash(fields, width):
    fields = np.atleast_2d(_u64(fields))
    if USE_JIT:
        return label_hash_jit(fields, width)
    return label_hash_numpy(fields, width)


def visit_counts(device_idx, offsets, n_devices):
    if USE_JIT:
        return visit_counts_jit(_i64(device_idx), _i64(offsets), n_devices)
    return visit_counts_numpy(device_idx, offsets, n_devices)


def backend() -> str:
    return "numba" if USE_JIT else "numpy"
