"""Reproducible sampling of discretized Brownian paths.

Seeding contract
----------------
Every path is drawn from its own counter-based stream. The key of that
stream is ``derive_seed(master, index)``, the SplitMix64 output for the
(index + 1)-th draw of a generator started at ``master``::

    z = (master + (index + 1) * 0x9E3779B97F4A7C15) mod 2**64
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 mod 2**64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB mod 2**64
    z =  z ^ (z >> 31)

For a fixed master the map index -> seed is a bijection on 64-bit integers,
so distinct indices never collide. The derived seed keys a numpy
``Philox`` generator; increments are ``standard_normal((n_steps, d))``
scaled by sqrt(t_max / n_steps). Because each path owns its stream, the
result does not depend on batching, call order or worker count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB


def derive_seed(master: int, index: int) -> int:
    """SplitMix64 substream key for ``index`` under ``master``."""
    z = (int(master) + (int(index) + 1) * GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def derive_seeds(master: int, indices) -> np.ndarray:
    """Vectorized :func:`derive_seed` over an array of indices (uint64)."""
    idx = np.asarray(indices, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(int(master) & MASK64) + (idx + np.uint64(1)) * np.uint64(GOLDEN_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
    return z ^ (z >> np.uint64(31))


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int
    stream_index: int

    @property
    def key(self) -> int:
        return derive_seed(self.master_seed, self.stream_index)

    def child(self, index: int) -> "SeedSpec":
        """Seed spec for a nested family of streams rooted at this one."""
        return SeedSpec(self.key, index)


@dataclass(frozen=True)
class BrownianPath:
    """Positions of a Brownian path on the uniform grid t_i = i t_max / n_steps."""

    d: int
    t_max: float
    n_steps: int
    positions: np.ndarray

    @property
    def dt(self):
        return self.t_max / self.n_steps

    @property
    def times(self):
        return np.linspace(0.0, self.t_max, self.n_steps + 1)

    @property
    def endpoint(self):
        return self.positions[-1]

    def shifted(self, offset) -> "BrownianPath":
        """Same path translated by ``offset``."""
        return BrownianPath(self.d, self.t_max, self.n_steps,
                            self.positions + np.asarray(offset, dtype=float))


def _check(d, t_max, n_steps):
    if d not in (1, 2, 3):
        raise InputError(f"dimension must be 1, 2 or 3, got {d}")
    if not t_max > 0:
        raise InputError("t_max must be positive")
    if int(n_steps) != n_steps or n_steps < 1:
        raise InputError(f"n_steps must be a positive integer, got {n_steps}")


def _increments(key, n_steps, d):
    gen = np.random.Generator(np.random.Philox(key=int(key)))
    return gen.standard_normal((n_steps, d))


def sample_path(d: int, t_max: float, n_steps: int, seed: SeedSpec) -> BrownianPath:
    """One Brownian path started at the origin."""
    _check(d, t_max, n_steps)
    pos = np.zeros((n_steps + 1, d))
    np.cumsum(_increments(seed.key, n_steps, d) * math.sqrt(t_max / n_steps),
              axis=0, out=pos[1:])
    return BrownianPath(d, float(t_max), int(n_steps), pos)


def sample_batch(d: int, t_max: float, n_steps: int, master: int, indices) -> np.ndarray:
    """Paths for stream ``indices`` under ``master`` in kernel layout (M, d, n_steps + 1).

    Row m equals ``sample_path(d, t_max, n_steps, SeedSpec(master, indices[m]))``
    transposed.
    """
    _check(d, t_max, n_steps)
    keys = derive_seeds(master, indices)
    out = np.zeros((len(keys), d, n_steps + 1))
    scale = math.sqrt(t_max / n_steps)
    for m, key in enumerate(keys):
        np.cumsum(_increments(key, n_steps, d).T * scale, axis=1, out=out[m, :, 1:])
    return out


def as_batch(paths) -> np.ndarray:
    """Stack BrownianPath objects into kernel layout (M, d, n + 1)."""
    paths = list(paths)
    if not paths:
        raise InputError("no paths given")
    first = paths[0]
    for p in paths[1:]:
        if p.d != first.d or p.n_steps != first.n_steps or p.t_max != first.t_max:
            raise InputError("paths do not share a time grid")
    return np.ascontiguousarray(np.stack([p.positions.T for p in paths]))
