"""Deterministic, hierarchically-keyed Gaussian streams and Brownian increments.

Every random quantity in the engine is addressed by a key tuple
(master seed, level, cloud, channel) feeding a counter-based Philox generator,
with a fixed particle-major block layout inside each stream.  Consequences:

* identical keys reproduce identical values, distinct keys give independent
  streams (Philox acts as a block cipher on its counter),
* particle i's block depends only on (master, level, cloud, i), so restricting
  a 2N draw to its first N particle blocks reproduces the direct N draw
  bit-for-bit -- the coupling contract the antithetic estimators rely on,
* Gaussians come from the inverse normal CDF applied to one 64-bit word each,
  so stream consumption per draw is fixed (no rejection steps).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import ConfigurationError

CHANNEL_INITIAL = 0
CHANNEL_BROWNIAN = 1
# Residual noise for exact terminal laws conditioned on a coarse increment
# table (Brownian-bridge completion); not part of the public channel pair.
CHANNEL_BRIDGE = 2


@dataclass(frozen=True)
class SeedKey:
    """Address of a stream: master seed, level index, cloud index, particle, channel."""

    master: int
    level: int = 0
    cloud: int = 0
    particle: int = 0
    channel: int = CHANNEL_INITIAL

    def __post_init__(self):
        if not 0 <= int(self.master) < 2**64:
            raise ConfigurationError("master seed must be an unsigned 64-bit integer")
        if self.level < 0 or self.cloud < 0 or self.particle < 0:
            raise ConfigurationError("level, cloud and particle indices must be non-negative")


def gaussian_block(key: SeedKey, channel: int, count: int) -> np.ndarray:
    """Draw ``count`` standard normals for stream (master, level, cloud, channel).

    Pure function of the key tuple and count; the first k values of a longer
    draw equal the first k values of a shorter one.
    """
    if count < 0:
        raise ConfigurationError("count must be non-negative")
    ss = np.random.SeedSequence(
        int(key.master), spawn_key=(int(key.level), int(key.cloud), int(channel))
    )
    raw = np.random.Philox(ss).random_raw(int(count))
    # (r >> 11) has 53 random bits; +0.5 centers the lattice strictly inside (0, 1).
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


def draw_initials(model_or_law, n: int, key: SeedKey) -> np.ndarray:
    """N i.i.d. draws from the initial law, deterministic in the key.

    Accepts a ModelSpec (uses its ``initial_law``) or an InitialLaw directly.
    Layout is particle-major with a fixed number of Gaussians per particle, so
    the first N' rows of a larger draw equal the direct N' draw.
    """
    if n < 1:
        raise ConfigurationError("need at least one particle")
    law = getattr(model_or_law, "initial_law", model_or_law)
    k = law.gaussians_per_draw
    g = gaussian_block(key, CHANNEL_INITIAL, n * k).reshape(n, k)
    x = np.asarray(law.transform(g), dtype=np.float64)
    if x.shape != (n, law.dim):
        raise ConfigurationError(
            f"initial law {law.descriptor!r} returned shape {x.shape}, expected {(n, law.dim)}"
        )
    return x


@dataclass(frozen=True)
class IncrementTable:
    """Brownian increments dW of shape (steps, particles, dim), N(0, h) per entry."""

    dW: np.ndarray
    h: float
    T: float

    @property
    def steps(self) -> int:
        return self.dW.shape[0]

    @property
    def particles(self) -> int:
        return self.dW.shape[1]

    @property
    def dim(self) -> int:
        return self.dW.shape[2]

    def restrict(self, start: int, stop: int) -> "IncrementTable":
        """Sub-table for the particle index range [start, stop)."""
        return IncrementTable(dW=self.dW[:, start:stop, :], h=self.h, T=self.T)

    def totals(self) -> np.ndarray:
        """Terminal Brownian values W_T, shape (particles, dim)."""
        return self.dW.sum(axis=0)


def draw_increments(n: int, p: int, h: float, d: int, key: SeedKey) -> IncrementTable:
    """Increment table for n particles over p steps of size h in dimension d."""
    if p < 1:
        raise ConfigurationError("need at least one time step")
    if not (h > 0 and np.isfinite(h)):
        raise ConfigurationError("step size must be positive and finite")
    if n < 1 or d < 1:
        raise ConfigurationError("particle count and dimension must be positive")
    g = gaussian_block(key, CHANNEL_BROWNIAN, n * p * d).reshape(n, p, d)
    dW = np.ascontiguousarray(np.transpose(g, (1, 0, 2))) * np.sqrt(h)
    return IncrementTable(dW=dW, h=float(h), T=float(p * h))


def coarsen(table: IncrementTable) -> IncrementTable:
    """Halve the number of steps: entry k is fine(2k) + fine(2k+1), in that order."""
    if table.steps % 2 != 0:
        raise ConfigurationError("coarsening requires an even number of steps")
    dW = table.dW[0::2] + table.dW[1::2]
    return IncrementTable(dW=dW, h=2.0 * table.h, T=table.T)
