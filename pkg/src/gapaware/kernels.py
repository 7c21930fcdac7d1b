"""Hot numeric loops, compiled with numba when available.

Set ``GAPAWARE_DISABLE_JIT=1`` to force the pure-numpy implementations.
Both paths return bitwise-identical results; ``benchmarks/bench_kernels.py``
times them against each other.
"""
from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("GAPAWARE_DISABLE_JIT", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - depends on environment
    HAVE_NUMBA = False


# ---------------------------------------------------------------------------
# numpy reference implementations


def kth_completion_np(durations: np.ndarray, offsets: np.ndarray, k: int) -> float:
    """Time of the ``k``-th task completion over independent machines.

    ``durations`` holds every machine's consecutive task times back to back;
    machine ``j`` owns ``durations[offsets[j]:offsets[j+1]]``. Each machine
    runs its tasks one after the other starting at time zero.
    """
    ends = np.empty_like(durations)
    for j in range(offsets.size - 1):
        lo, hi = offsets[j], offsets[j + 1]
        ends[lo:hi] = np.cumsum(durations[lo:hi])
    return float(np.partition(ends, k - 1)[k - 1])


def sync_total_np(times: np.ndarray) -> float:
    """Sum over iterations (columns) of the slowest machine's time (rows)."""
    return float(np.cumsum(times.max(axis=0))[-1])


def paramwise_gap_np(theta, sent, c) -> np.ndarray:
    return np.abs(theta - sent) / c + 1.0


# ---------------------------------------------------------------------------
# numba versions


if HAVE_NUMBA:

    @njit(cache=True)
    def _kth_completion_jit(durations, offsets, k):
        ends = np.empty_like(durations)
        for j in range(offsets.size - 1):
            acc = 0.0
            for i in range(offsets[j], offsets[j + 1]):
                acc += durations[i]  # same order as np.cumsum
                ends[i] = acc
        return np.partition(ends, k - 1)[k - 1]

    @njit(cache=True)
    def _sync_total_jit(times):
        n, m = times.shape
        best = times[0].copy()
        for j in range(1, n):
            row = times[j]
            for i in range(m):
                if row[i] > best[i]:
                    best[i] = row[i]
        total = 0.0
        for i in range(m):
            total += best[i]
        return total

    @njit(cache=True)
    def _paramwise_gap_jit(theta, sent, c):
        out = np.empty(theta.size)
        for i in range(theta.size):
            out[i] = abs(theta[i] - sent[i]) / c[i] + 1.0
        return out

    def kth_completion(durations, offsets, k):
        if not 1 <= k <= durations.size:
            raise ValueError("k out of range")
        return float(_kth_completion_jit(durations, offsets.astype(np.int64), int(k)))

    def sync_total(times):
        return float(_sync_total_jit(np.ascontiguousarray(times)))

    def paramwise_gap(theta, sent, c):
        return _paramwise_gap_jit(theta, sent, np.broadcast_to(c, theta.shape).astype(np.float64))

else:

    def kth_completion(durations, offsets, k):
        if not 1 <= k <= durations.size:
            raise ValueError("k out of range")
        return kth_completion_np(durations, offsets, k)

    sync_total = sync_total_np
    paramwise_gap = paramwise_gap_np


def backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
