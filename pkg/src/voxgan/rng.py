"""Seeded random streams shared by every stochastic component.

``RngStream`` wraps numpy's PCG64 bit generator, whose output sequence for a
given seed is fixed across platforms. Child streams are derived from the
parent seed and a name, so e.g. parameter init and data shuffling never share
draws.
"""

from __future__ import annotations

import zlib

import numpy as np

PRIORS = ("uniform01", "standard_normal")


class RngStream:
    def __init__(self, seed: int, key: tuple = ()):
        if not 0 <= int(seed) < 2 ** 64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self.key = tuple(key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self._gen = np.random.Generator(np.random.PCG64(ss))
        self.draws = 0

    def child(self, name: str) -> "RngStream":
        return RngStream(self.seed, self.key + (zlib.crc32(name.encode("utf-8")),))

    def uniform(self, size, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        out = self._gen.uniform(low, high, size)
        self.draws += int(np.prod(size))
        return out

    def normal(self, size) -> np.ndarray:
        out = self._gen.standard_normal(size)
        self.draws += int(np.prod(size))
        return out

    def integers(self, low: int, high: int, size=None):
        out = self._gen.integers(low, high, size)
        self.draws += 1 if size is None else int(np.prod(size))
        return out

    def permutation(self, n: int) -> np.ndarray:
        self.draws += n
        return self._gen.permutation(n)

    def choice(self, a, size: int, replace: bool = False) -> np.ndarray:
        self.draws += size
        return self._gen.choice(a, size=size, replace=replace)


def sample_latent(stream: RngStream, prior: str, dim: int, n: int | None = None, dtype=np.float32) -> np.ndarray:
    """Draw latent codes from the uniform [0, 1] or standard normal prior.

    Returns a ``(dim,)`` vector, or ``(n, dim)`` when ``n`` is given.
    """
    if dim < 1:
        raise ValueError("latent dimension must be >= 1")
    size = (dim,) if n is None else (n, dim)
    if prior == "uniform01":
        z = stream.uniform(size)
    elif prior == "standard_normal":
        z = stream.normal(size)
    else:
        raise ValueError(f"unknown prior {prior!r}; expected one of {PRIORS}")
    return z.astype(dtype)


def clamp_to_support(z: np.ndarray, prior: str) -> np.ndarray:
    """Project a latent vector onto the prior's support."""
    if prior == "uniform01":
        return np.clip(z, 0.0, 1.0)
    if prior == "standard_normal":
        return z
    raise ValueError(f"unknown prior {prior!r}")
