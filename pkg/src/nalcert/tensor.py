"""Dense float64 arrays and deterministic random streams.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. The helpers here
add the shape and finiteness checks the rest of the package relies on.

Random numbers come from Philox-4x64 (counter-based) keyed by a
``(seed, stream_id)`` pair; normals use numpy's ziggurat sampler. Sub-streams
are derived by hashing ``(seed, parent stream, tag, index...)`` with BLAKE2b,
so the samples drawn for a given purpose never depend on evaluation order.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NonFiniteError, ParameterError

PRNG_ID = "philox4x64-10+ziggurat-normal; substream=blake2b64(seed,parent,tag,index)"

_MASK64 = (1 << 64) - 1


def as_tensor(x, what="tensor"):
    arr = np.asarray(x, dtype=np.float64)
    check_finite(arr, what)
    return arr


def check_finite(x, what="tensor"):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{what} contains NaN or Inf")
    return x


def derive_stream_id(seed, parent, tag, *index):
    h = hashlib.blake2b(digest_size=8)
    h.update(f"{seed & _MASK64}|{parent & _MASK64}|{tag}".encode())
    for i in index:
        h.update(b"|" + str(int(i)).encode())
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by ``(seed, stream_id)``."""

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not 0 <= self.seed <= _MASK64 or not 0 <= self.stream_id <= _MASK64:
            raise ParameterError("seed and stream_id must be 64-bit unsigned integers")

    def child(self, tag, *index):
        return RngStream(self.seed, derive_stream_id(self.seed, self.stream_id, tag, *index))

    def generator(self):
        # A fresh generator each call: the same stream always replays from the start.
        key = self.seed | (self.stream_id << 64)
        return np.random.Generator(np.random.Philox(key=key))


def gaussian(rng, shape, sigma):
    """I.i.d. N(0, sigma^2) samples; ``rng`` is an RngStream or a numpy Generator."""
    if sigma < 0:
        raise ParameterError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return np.zeros(shape)
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    return sigma * gen.standard_normal(shape)


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")
    return check_finite(a @ b, "matmul result")


def l2_norm(x):
    return float(np.sqrt(np.sum(np.square(np.asarray(x, dtype=np.float64)))))


def axpy(alpha, x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionError(f"axpy shape mismatch: {x.shape} vs {y.shape}")
    return check_finite(alpha * x + y, "axpy result")


def clamp(x, lo, hi):
    if lo > hi:
        raise ParameterError("clamp requires lo <= hi")
    return np.clip(np.asarray(x, dtype=np.float64), lo, hi)
