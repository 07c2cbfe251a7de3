"""Counter-based random number streams.

All randomness in the package flows through :class:`RngStream`, a value type
wrapping a Philox counter-based generator.  Streams are split by hashing
(key, index) pairs, so path partitions, nested simulations and optimizer
restarts draw from independent streams regardless of evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64(x: int) -> int:
    # Finalizer of the splitmix64 generator; bijective on uint64.
    x = (x + _GOLDEN) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


@dataclass(frozen=True)
class RngStream:
    """Immutable (key, counter) pair addressing a Philox stream.

    Distinct keys give independent streams by construction; the counter
    offsets the draw position within one stream.  Because the dataclass is
    frozen, "advancing" produces a new value and never mutates shared state.
    """

    key: int
    counter: int = 0

    def __post_init__(self):
        object.__setattr__(self, "key", self.key & _MASK64)
        object.__setattr__(self, "counter", self.counter & _MASK64)

    def generator(self) -> np.random.Generator:
        """Fresh numpy Generator positioned at (key, counter)."""
        bitgen = np.random.Philox(key=self.key, counter=self.counter)
        return np.random.Generator(bitgen)

    def gaussians(self, n: int) -> np.ndarray:
        """n standard normal draws; identical for identical (key, counter)."""
        return self.generator().standard_normal(n)

    def uniforms(self, n: int) -> np.ndarray:
        """n U[0,1) draws; identical for identical (key, counter)."""
        return self.generator().random(n)


def master_stream(seed: int) -> RngStream:
    """Root stream for a run, derived from a 64-bit seed."""
    return RngStream(key=_splitmix64(seed & _MASK64))


def split(stream: RngStream, index: int) -> RngStream:
    """Child stream `index` of `stream`; deterministic and collision-resistant.

    Children of distinct (key, index) pairs get distinct Philox keys, hence
    independent streams; the child counter restarts at 0.
    """
    if index < 0:
        raise ValueError("split index must be nonnegative")
    mixed = _splitmix64(stream.key ^ _splitmix64(index))
    return RngStream(key=mixed, counter=0)


def sample_gaussians(stream: RngStream, n: int) -> np.ndarray:
    """Functional form of :meth:`RngStream.gaussians`."""
    return stream.gaussians(n)
