"""Parameter-vector arithmetic, layer layouts and the seeded random source.

Parameter vectors are plain 1-D ``float64`` numpy arrays. The layer structure
that goes with them lives in a :class:`LayerLayout` owned by the model.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class InvalidGapError(ValueError):
    """Raised when a Gap denominator or divisor is not strictly positive."""


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class LayerLayout:
    """Contiguous, non-overlapping index spans covering ``[0, d)``."""

    spans: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if not self.spans:
            raise ValueError("layout needs at least one span")
        pos = 0
        for lo, hi in self.spans:
            if lo != pos or hi <= lo:
                raise ValueError(f"spans must be contiguous and non-empty, got {self.spans}")
            pos = hi

    @classmethod
    def from_sizes(cls, sizes: Sequence[int]) -> "LayerLayout":
        spans, pos = [], 0
        for s in sizes:
            spans.append((pos, pos + int(s)))
            pos += int(s)
        return cls(tuple(spans))

    @classmethod
    def single(cls, d: int) -> "LayerLayout":
        return cls(((0, int(d)),))

    @property
    def dim(self) -> int:
        return self.spans[-1][1]

    @property
    def n_layers(self) -> int:
        return len(self.spans)

    def layer_ids(self) -> np.ndarray:
        """Layer index of every coordinate (length ``dim``)."""
        out = np.empty(self.dim, dtype=np.intp)
        for p, (lo, hi) in enumerate(self.spans):
            out[lo:hi] = p
        return out

    def starts(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.spans], dtype=np.intp)


def as_param(values, layout: LayerLayout | None = None) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise DimensionError("parameter vectors are non-empty 1-D arrays")
    if layout is not None and layout.dim != v.size:
        raise DimensionError(f"layout covers {layout.dim} entries, vector has {v.size}")
    return v


def _check_same(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.shape} vs {b.shape}")


def scale_add(a, b, s: float) -> np.ndarray:
    """``a + s*b`` for equal-length vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same(a, b)
    return a + s * b


def l2_norm(v) -> float:
    return float(np.sqrt(np.dot(v, v)))


def hadamard_div(num, den) -> np.ndarray:
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    _check_same(num, den)
    if not np.all(den > 0):
        raise InvalidGapError("divisor must be strictly positive everywhere")
    return num / den


# ---------------------------------------------------------------------------
# random numbers


class RngStream:
    """Seeded stream on numpy's counter-based Philox bit generator.

    Child streams are derived from ``(seed, *keys)`` through ``SeedSequence``
    so every worker, machine and dataset gets an independent, reproducible
    stream no matter in which order they are created.
    """

    def __init__(self, seed: int, keys: tuple = ()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.keys = tuple(keys)
        entropy = [self.seed] + [_key_to_int(k) for k in self.keys]
        self._gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))

    def child(self, *keys) -> "RngStream":
        return RngStream(self.seed, self.keys + tuple(keys))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def uniform(self, size=None) -> np.ndarray:
        return self._gen.random(size)

    def normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def raw(self, n: int) -> np.ndarray:
        """Raw 64-bit words, used for reproducibility checks."""
        return self._gen.bit_generator.random_raw(n)

    def standard_gamma(self, shape: float, size) -> np.ndarray:
        return marsaglia_tsang(self, shape, size)

    def gamma(self, shape: float, scale, size=None) -> np.ndarray:
        """Gamma(shape, scale) draws; ``scale`` may be an array broadcast to ``size``."""
        if size is None:
            size = np.shape(scale)
        return marsaglia_tsang(self, shape, size) * scale


def _key_to_int(k) -> int:
    if isinstance(k, (int, np.integer)):
        return int(k) & 0xFFFFFFFF
    # stable across runs, unlike hash()
    h = 2166136261
    for ch in str(k).encode():
        h = ((h ^ ch) * 16777619) & 0xFFFFFFFF
    return h


def marsaglia_tsang(rng: RngStream, shape: float, size) -> np.ndarray:
    """Standard gamma variates by Marsaglia & Tsang's squeeze method.

    Candidates are drawn in vectorized rounds; rejected slots are refilled
    in the next round, so the output depends only on the stream state.
    Shapes below one use the ``U**(1/a)`` boost.
    """
    if shape <= 0:
        raise ValueError("gamma shape must be positive")
    size = (size,) if np.isscalar(size) else tuple(size)
    n = int(np.prod(size)) if size else 1
    boost = shape < 1.0
    a = shape + 1.0 if boost else shape
    d = a - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)

    out = np.empty(n)
    todo = np.arange(n)
    while todo.size:
        m = todo.size
        x = rng.normal(m)
        u = rng.uniform(m)
        v = 1.0 + c * x
        ok = v > 0
        v = np.where(ok, v * v * v, 1.0)
        x2 = x * x
        accept = ok & (
            (u < 1.0 - 0.0331 * x2 * x2)
            | (np.log(u) < 0.5 * x2 + d * (1.0 - v + np.log(v)))
        )
        out[todo[accept]] = d * v[accept]
        todo = todo[~accept]
    if boost:
        out *= rng.uniform(n) ** (1.0 / shape)
    return out.reshape(size)
