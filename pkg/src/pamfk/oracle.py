"""Lattice oracle for the mollified equation du = (1/2) Lap u + (xi_eps - C_eps) u.

Periodic lattice {-L, -L + h, ..., L - h}^d with d in {1, 2}. Lattice white
noise has i.i.d. N(0, h^-d) entries so that h^d-weighted sums against test
functions carry the continuum covariance. Mollification is a periodic FFT
convolution with the sampled rho_eps, normalized to h^d * sum = 1.

Time stepping splits each step into a half step of the potential (exact
exponential), one explicit Euler step of (1/2) Lap, and another potential
half step. Consecutive potential half steps are merged.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from ._parallel import map_chunks
from .errors import DegenerateComparison, InputError
from .kernel import MollifierKernel, RenormSpec, renorm_constant
from .moments import Estimate, InitialCondition, MonteCarlo
from .paths import derive_seeds

UNDER_RESOLVED = "under-resolved"   # eps < 3 h
HEADER = struct.Struct("<4sIId")    # magic, d, side, h
MAGIC = b"PAMF"


@dataclass(frozen=True)
class GridField:
    """Values on the periodic lattice of spacing h over [-L, L)^d."""

    d: int
    h: float
    extent: float
    values: np.ndarray = field(compare=False, repr=False)
    warnings: tuple = ()

    @property
    def side(self):
        return self.values.shape[-1]

    def axis(self):
        return lattice_axis(self.h, self.extent)

    def points(self):
        """Coordinates of shape (side,)*d + (d,)."""
        ax = self.axis()
        return np.stack(np.meshgrid(*([ax] * self.d), indexing="ij"), axis=-1)

    def write(self, path):
        """Flat little-endian dump: 20-byte header then row-major float64 values."""
        with open(path, "wb") as f:
            f.write(HEADER.pack(MAGIC, self.d, self.side, self.h))
            f.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @classmethod
    def read(cls, path):
        with open(path, "rb") as f:
            magic, d, side, h = HEADER.unpack(f.read(HEADER.size))
            if magic != MAGIC:
                raise InputError(f"{path}: not a grid field file")
            values = np.frombuffer(f.read(), dtype="<f8")
        if values.size != side ** d:
            raise InputError(f"{path}: expected {side ** d} values, found {values.size}")
        return cls(d, h, side * h / 2.0, values.reshape((side,) * d).astype(float))


def _side(h, L):
    if not h > 0 or not L > 0:
        raise InputError("h and L must be positive")
    ratio = L / h
    if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
        raise InputError(f"L / h = {ratio:g} is not an integer")
    return 2 * int(round(ratio))


def lattice_axis(h, L):
    return -L + h * np.arange(_side(h, L))


def _check_d(d):
    if d not in (1, 2):
        raise InputError("the lattice oracle supports d = 1, 2")


def sample_noise_batch(d, h, L, master, indices) -> np.ndarray:
    """Noise draws for streams ``indices`` under ``master``, shape (M,) + (side,)*d."""
    _check_d(d)
    side = _side(h, L)
    keys = derive_seeds(master, indices)
    out = np.empty((len(keys),) + (side,) * d)
    scale = h ** (-d / 2)
    for m, key in enumerate(keys):
        gen = np.random.Generator(np.random.Philox(key=int(key)))
        out[m] = gen.standard_normal((side,) * d) * scale
    return out


def sample_noise_grid(d, h, L, seed) -> GridField:
    """Lattice white noise: i.i.d. N(0, h^-d) entries, stream ``seed`` (a SeedSpec)."""
    vals = sample_noise_batch(d, h, L, seed.master_seed, [seed.stream_index])[0]
    return GridField(d, h, L, vals)


def _offsets2(d, h, L):
    # squared minimal-image distance of every lattice offset
    side = _side(h, L)
    i = np.arange(side)
    off = h * np.minimum(i, side - i)
    grids = np.meshgrid(*([off] * d), indexing="ij")
    return sum(g * g for g in grids)


def stencil_fft(d, h, L, k: MollifierKernel, eps):
    """rfft of the normalized mollifier stencil (h^d * sum = 1)."""
    _check_d(d)
    r2 = _offsets2(d, h, L) / eps ** 2
    if k.family == "gaussian":
        w = np.exp(-r2 / (2 * k.sigma2))
    else:
        w = np.asarray(k.rho(np.sqrt(r2)[..., None] * np.eye(k.d)[0]), dtype=float)
    w = w / w.sum()   # h^d-weighted sum of w / h^d equals 1
    return np.fft.rfftn(w, axes=tuple(range(-d, 0)))


def _mollify(values, d, what):
    axes = tuple(range(-d, 0))
    shape = values.shape[-d:]
    return np.fft.irfftn(np.fft.rfftn(values, axes=axes) * what, s=shape, axes=axes)


def _resolution_warnings(h, eps):
    return () if eps >= 3 * h * (1 - 1e-9) else (UNDER_RESOLVED,)


def mollify_grid(noise: GridField, k: MollifierKernel, eps) -> GridField:
    """Periodic convolution of the lattice field with rho_eps."""
    if not eps > 0:
        raise InputError("eps must be positive")
    if k.d != noise.d:
        raise InputError("kernel dimension does not match the field")
    what = stencil_fft(noise.d, noise.h, noise.extent, k, eps)
    vals = _mollify(noise.values, noise.d, what)
    return GridField(noise.d, noise.h, noise.extent, vals,
                     noise.warnings + _resolution_warnings(noise.h, eps))


# --------------------------------------------------------------------------
# time stepping

def diffusion_step(u, dt, h, d):
    """One explicit Euler step of (1/2) Lap on the last d axes, periodic."""
    lap = -2.0 * d * u
    for ax in range(-d, 0):
        lap = lap + np.roll(u, 1, axis=ax) + np.roll(u, -1, axis=ax)
    return u + (0.5 * dt / (h * h)) * lap


def max_stable_dt(h, d):
    return h * h / (2 * d)


def _evolve(u, V, t, dt, h, d):
    if dt > max_stable_dt(h, d) * (1 + 1e-12):
        raise InputError(f"dt = {dt:g} exceeds the explicit stability limit; need dt <= {max_stable_dt(h, d):g}")
    steps = max(1, math.ceil(t / dt - 1e-9))
    dt = t / steps
    half = np.exp(0.5 * dt * V)
    full = half * half
    u = u * half
    for s in range(steps):
        u = diffusion_step(u, dt, h, d)
        u = u * (full if s < steps - 1 else half)
    return u


def _u0_values(u0, field_: GridField):
    if isinstance(u0, InitialCondition):
        return u0(field_.points())
    u = np.broadcast_to(np.asarray(u0, dtype=float), field_.values.shape)
    return np.array(u)


def solve_pde(xi_eps: GridField, t, dt, C_eps, u0) -> GridField:
    """u(t) for du = (1/2) Lap u + (xi_eps - C_eps) u on the periodic lattice.

    ``u0`` is an :class:`InitialCondition` or an array broadcastable to the
    lattice. ``dt`` is an upper bound; the step is shrunk to divide t.
    """
    if t < 0:
        raise InputError("t must be nonnegative")
    u = _u0_values(u0, xi_eps)
    if t == 0:
        return GridField(xi_eps.d, xi_eps.h, xi_eps.extent, u, xi_eps.warnings)
    u = _evolve(u, xi_eps.values - C_eps, t, dt, xi_eps.h, xi_eps.d)
    if not np.all(np.isfinite(u)):
        raise InputError("solution is not finite")
    return GridField(xi_eps.d, xi_eps.h, xi_eps.extent, u, xi_eps.warnings)


# --------------------------------------------------------------------------
# Monte Carlo over noise draws

@dataclass(frozen=True)
class PdeParams:
    h: float
    extent: float
    dt: float | None = None     # None: the stability limit h^2 / (2 d)


def required_extent(x, t, eps):
    """Half-width needed so periodic images stay negligible."""
    return float(np.max(np.abs(x))) + 4.0 * math.sqrt(t) + 4.0 * eps


def noise_mc_moment(n, t, x, eps, k: MollifierKernel, mc: MonteCarlo, pde: PdeParams,
                    u0=InitialCondition(), renorm: RenormSpec | None = None,
                    threads: int | None = None, chunk: int = 128) -> Estimate:
    """Mean of u_eps(t, x)^n over independent noise draws.

    Draw i uses the stream ``derive_seed(master_seed, i)``.
    """
    d = k.d
    _check_d(d)
    if int(n) != n or n < 1:
        raise InputError("moment order n must be a positive integer")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (d,):
        raise InputError("x does not match the kernel dimension")
    h, L = pde.h, pde.extent
    need = required_extent(x, t, eps)
    if L < need - 1e-12:
        raise InputError(f"domain half-width {L:g} below the required margin {need:g}")
    idx = (x + L) / h
    if np.any(np.abs(idx - np.round(idx)) > 1e-9):
        raise InputError("x is not a lattice point")
    idx = tuple(int(round(v)) for v in idx)
    c_eps = renorm_constant(renorm or RenormSpec(d=d), eps)
    dt = pde.dt or max_stable_dt(h, d)
    what = stencil_fft(d, h, L, k, eps)
    proto = GridField(d, h, L, np.zeros((_side(h, L),) * d))
    u_init = _u0_values(u0, proto)
    warnings = _resolution_warnings(h, eps)
    if t == 0:
        return Estimate.exact(u_init[idx] ** n, mc.master_seed, warnings)
    master = mc.master_seed

    def run(s0, s1):
        xi = _mollify(sample_noise_batch(d, h, L, master, np.arange(s0, s1)), d, what)
        u = _evolve(np.broadcast_to(u_init, xi.shape), xi - c_eps, t, dt, h, d)
        return u[(slice(None),) + idx] ** n

    vals = map_chunks(run, mc.n_paths, threads, chunk=chunk)
    if not np.all(np.isfinite(vals)):
        raise InputError("non-finite solution value")
    se = float(np.std(vals, ddof=1)) / math.sqrt(vals.size) if vals.size > 1 else 0.0
    mean = float(np.mean(vals))
    return Estimate(mean, se, int(vals.size), master, warnings,
                    math.log(mean) if mean > 0 else None)


@dataclass(frozen=True)
class CrossValidation:
    z: float
    verdict: str


def cross_validate(a: Estimate, b: Estimate, threshold: float = 3.0) -> CrossValidation:
    """z = (a - b) / sqrt(se_a^2 + se_b^2); PASS iff |z| <= threshold."""
    vals = (a.mean, b.mean, a.stderr, b.stderr)
    if not all(math.isfinite(v) for v in vals):
        raise InputError("cross-validation needs finite estimates")
    s = math.sqrt(a.stderr ** 2 + b.stderr ** 2)
    diff = a.mean - b.mean
    if s == 0:
        if diff != 0:
            raise DegenerateComparison("zero combined standard error with unequal means")
        return CrossValidation(0.0, "PASS")
    z = diff / s
    return CrossValidation(z, "PASS" if abs(z) <= threshold else "FAIL")
