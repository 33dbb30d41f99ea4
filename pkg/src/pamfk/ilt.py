"""Riemann-sum estimators of self- and mutual-intersection functionals.

For a path sampled at t_i = i dt, i = 0..n, the left-point rule uses the
points i = 0..n-1:

    beta_eps  = dt^2 * sum_{0 <= i < j <= n-1} R_eps(B_j - B_i)     (strict simplex)
    alpha_eps = dt^2 * sum_{i, j = 0..n-1}   R_eps(B1_i - B2_j)     (full square)

The diagonal of the simplex is left out: R_eps(0) is of order eps^-d and
half-weighting it would bias the mean by O(dt^2 eps^-d) per point.

Batch routines work on arrays of shape (M, d, n + 1) as produced by
:func:`pamfk.paths.sample_batch`; the single-path routines wrap them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from . import _backend
from .errors import InputError
from .kernel import MollifierKernel, nu_epsilon, pair_profile
from .paths import BrownianPath, as_batch

RESOLUTION = "resolution"   # warning: dt > eps^2 / 4, kernel not resolved by the grid
GUARD_RATIO = 0.25


def resolution_ok(t_max, n_steps, eps) -> bool:
    """Validity guard dt <= eps^2 / 4."""
    return t_max / n_steps <= GUARD_RATIO * eps * eps * (1 + 1e-12)


def _warnings(t_max, n_steps, eps):
    return () if resolution_ok(t_max, n_steps, eps) else (RESOLUTION,)


@dataclass(frozen=True)
class IltValue:
    """A functional evaluated on one path (or path pair) with guard warnings."""

    value: float
    warnings: tuple = ()

    def __float__(self):
        return self.value


@dataclass(frozen=True)
class IltSample:
    """All intersection functionals of one n-tuple of paths.

    ``beta[k]`` is the self term of path k, ``alpha`` the mutual terms in
    ``itertools.combinations(range(n), 2)`` order, ``x_renorm`` the centered
    self terms and ``i_n`` their sum without a 1/2 factor.
    """

    beta: np.ndarray
    alpha: np.ndarray
    x_renorm: np.ndarray
    i_n: float
    warnings: tuple = ()

    @property
    def y_mutual(self):
        return self.alpha


# --------------------------------------------------------------------------
# batch kernels

def _check_batch(P):
    P = np.asarray(P)
    if P.ndim != 3 or P.dtype != np.float64:
        raise InputError("path batch must be a float64 array of shape (M, d, n + 1)")
    if P.shape[2] < 2:
        raise InputError("paths need at least one time step")
    return P


def _dt(P, t_max):
    if not t_max > 0:
        raise InputError("t_max must be positive")
    return t_max / (P.shape[2] - 1)


def _tri(P, prof):
    return _backend.tri_sum_batch(P, prof.kind, prof.coef, prof.table)


def _rect(P, Q, prof):
    return _backend.rect_sum_batch(P, Q, prof.kind, prof.coef, prof.table)


def beta_batch(P, k: MollifierKernel, eps, t_max):
    """beta_eps on [0, t_max]^2_< for every path of the batch."""
    P = _check_batch(P)
    prof = pair_profile(k, eps)
    dt = _dt(P, t_max)
    return prof.prefactor * dt * dt * _tri(P[:, :, :-1], prof)


def alpha_batch(P, Q, k: MollifierKernel, eps, t_max):
    """alpha_eps on [0, t_max]^2 for every pair (P[m], Q[m])."""
    P = _check_batch(P)
    Q = _check_batch(Q)
    if P.shape != Q.shape:
        raise InputError("path batches do not share a time grid")
    prof = pair_profile(k, eps)
    dt = _dt(P, t_max)
    return prof.prefactor * dt * dt * _rect(P[:, :, :-1], Q[:, :, :-1], prof)


def i_n_batch(batches, k: MollifierKernel, eps, t_max):
    """I_n^eps for n path batches.

    Returns
    -------
    i_n : (M,) array
    beta : (M, n) array
    alpha : (M, n(n-1)/2) array, pairs in ``combinations`` order
    """
    batches = [_check_batch(P) for P in batches]
    if not batches:
        raise InputError("I_n needs at least one path")
    if any(P.shape != batches[0].shape for P in batches):
        raise InputError("path batches do not share a time grid")
    M = batches[0].shape[0]
    beta = np.column_stack([beta_batch(P, k, eps, t_max) for P in batches])
    pairs = list(combinations(range(len(batches)), 2))
    alpha = np.empty((M, len(pairs)))
    for c, (i, j) in enumerate(pairs):
        alpha[:, c] = alpha_batch(batches[i], batches[j], k, eps, t_max)
    return beta.sum(axis=1) + alpha.sum(axis=1), beta, alpha


# --------------------------------------------------------------------------
# single-path interface

def _check_paths(*paths: BrownianPath):
    first = paths[0]
    for p in paths[1:]:
        if p.d != first.d or p.n_steps != first.n_steps or p.t_max != first.t_max:
            raise InputError("paths do not share a time grid")


def _check_dim(path: BrownianPath, k: MollifierKernel):
    if path.d != k.d:
        raise InputError(f"path dimension {path.d} does not match kernel d={k.d}")


def beta_simplex(path: BrownianPath, k: MollifierKernel, eps) -> IltValue:
    """Self-intersection functional over the strict simplex [0, t_max]^2_<."""
    _check_dim(path, k)
    val = beta_batch(as_batch([path]), k, eps, path.t_max)[0]
    return IltValue(float(val), _warnings(path.t_max, path.n_steps, eps))


def alpha_mutual(path1: BrownianPath, path2: BrownianPath, k: MollifierKernel, eps) -> IltValue:
    """Mutual-intersection functional of two paths over [0, t_max]^2."""
    _check_paths(path1, path2)
    _check_dim(path1, k)
    val = alpha_batch(as_batch([path1]), as_batch([path2]), k, eps, path1.t_max)[0]
    return IltValue(float(val), _warnings(path1.t_max, path1.n_steps, eps))


def renormalized_self(path: BrownianPath, k: MollifierKernel, eps) -> IltValue:
    """X_eps = beta_eps - nu_eps(t_max), centered by the exact mean."""
    b = beta_simplex(path, k, eps)
    return IltValue(b.value - nu_epsilon(k, eps, path.t_max), b.warnings)


def i_n_epsilon(paths, k: MollifierKernel, eps) -> IltSample:
    """Combined exponent: n self terms plus n(n-1)/2 mutual terms."""
    paths = list(paths)
    if not paths:
        raise InputError("I_n needs at least one path")
    _check_paths(*paths)
    _check_dim(paths[0], k)
    p0 = paths[0]
    total, beta, alpha = i_n_batch([as_batch([p]) for p in paths], k, eps, p0.t_max)
    nu = nu_epsilon(k, eps, p0.t_max)
    return IltSample(beta[0], alpha[0], beta[0] - nu, float(total[0]),
                     _warnings(p0.t_max, p0.n_steps, eps))


# --------------------------------------------------------------------------
# dyadic triangle decomposition of {0 <= u < s <= 1}

@dataclass(frozen=True, order=True)
class DyadicBox:
    """A_l^k = [2l, 2l+1) x [2l+1, 2l+2), all divided by 2^(k+1)."""

    k: int
    l: int  # noqa: E741

    def __post_init__(self):
        if self.k < 0 or not 0 <= self.l < 2 ** self.k:
            raise InputError(f"invalid dyadic box (k={self.k}, l={self.l})")

    @property
    def u_interval(self):
        s = 2.0 ** (self.k + 1)
        return (2 * self.l / s, (2 * self.l + 1) / s)

    @property
    def s_interval(self):
        s = 2.0 ** (self.k + 1)
        return ((2 * self.l + 1) / s, (2 * self.l + 2) / s)

    @property
    def area(self):
        return 4.0 ** -(self.k + 1)

    def index_ranges(self, n_steps, t_max=1.0):
        """Grid index ranges [i0, i1) x [j0, j1) with t_i in the u and s intervals."""
        if t_max < 1.0 - 1e-12:
            raise InputError("box lies outside the path's time range")
        denom = 2 ** (self.k + 1)
        if t_max == 1.0:
            # exact integer ceil(m n / 2^(k+1))
            cut = [-(-m * n_steps // denom) for m in (2 * self.l, 2 * self.l + 1, 2 * self.l + 2)]
        else:
            cut = [math.ceil(m * n_steps / (denom * t_max) - 1e-9)
                   for m in (2 * self.l, 2 * self.l + 1, 2 * self.l + 2)]
        return (cut[0], cut[1]), (cut[1], cut[2])


def triangle_boxes(max_level: int) -> list[DyadicBox]:
    """All A_l^k with k <= max_level."""
    if max_level < 0:
        raise InputError("max_level must be nonnegative")
    return [DyadicBox(k, l) for k in range(max_level + 1) for l in range(2 ** k)]  # noqa: E741


def box_batch(P, box: DyadicBox, k: MollifierKernel, eps, t_max=1.0):
    """beta_eps restricted to the grid pairs (u, s) in ``box`` for a path batch."""
    P = _check_batch(P)
    n = P.shape[2] - 1
    (i0, i1), (j0, j1) = box.index_ranges(n, t_max)
    prof = pair_profile(k, eps)
    dt = _dt(P, t_max)
    if i1 <= i0 or j1 <= j0:
        return np.zeros(P.shape[0])
    return prof.prefactor * dt * dt * _rect(P[:, :, i0:i1], P[:, :, j0:j1], prof)


def beta_on_box(path: BrownianPath, box: DyadicBox, k: MollifierKernel, eps) -> IltValue:
    _check_dim(path, k)
    val = box_batch(as_batch([path]), box, k, eps, path.t_max)[0]
    return IltValue(float(val), _warnings(path.t_max, path.n_steps, eps))


@dataclass(frozen=True)
class DyadicDecomposition:
    """beta over the simplex split into box terms and the uncovered strip.

    ``residual`` is beta_simplex minus the box total, i.e. the strip's
    contribution; ``strip_bound`` is R_eps(0) dt^2 times the number of strip
    pairs, an upper bound for it because R attains its maximum at 0.
    """

    boxes: list
    values: np.ndarray
    beta: float
    residual: float
    strip_bound: float
    strip_pairs: int
    warnings: tuple = field(default=())


def dyadic_decomposition(path: BrownianPath, k: MollifierKernel, eps,
                         max_level: int) -> DyadicDecomposition:
    _check_dim(path, k)
    if path.t_max != 1.0:
        raise InputError("the dyadic decomposition is defined on [0, 1]")
    P = as_batch([path])
    boxes = triangle_boxes(max_level)
    values = np.array([box_batch(P, b, k, eps)[0] for b in boxes])
    beta = float(beta_batch(P, k, eps, 1.0)[0])
    n = path.n_steps
    covered = 0
    for b in boxes:
        (i0, i1), (j0, j1) = b.index_ranges(n)
        covered += max(i1 - i0, 0) * max(j1 - j0, 0)
    strip = n * (n - 1) // 2 - covered
    prof = pair_profile(k, eps)
    bound = prof.prefactor * float(prof.table[0] if prof.kind == 1 else 1.0) * path.dt ** 2 * strip
    return DyadicDecomposition(boxes, values, beta, beta - float(np.sum(values)), bound, strip,
                               _warnings(1.0, n, eps))
