"""Mollifiers, noise covariance kernels and renormalization constants.

The mollified noise xi_eps = xi * rho_eps has covariance
R_eps(x) = eps^-d R(x / eps) with R = rho * rho. Two mollifier families are
provided:

``gaussian``
    rho = N(0, sigma2 I), hence R = N(0, 2 sigma2 I). Everything below has a
    closed form for this family.
``bump``
    rho(x) proportional to exp(-1 / (1 - |x|^2 / r^2)) on |x| < r. R has no
    closed form; its radial profile is tabulated once by tensor
    Gauss-Legendre quadrature and interpolated with a cubic spline in |x|^2.

The heat-smoothed kernel g_eps(v) = E[R_eps(B_v)] drives the exact mean of
the self-intersection functional,

    nu_eps(t) = int_0^t int_0^s g_eps(s - u) du ds = int_0^t (t - v) g_eps(v) dv,

and, in d = 2, nu_eps(t) - C_eps t -> t (mu1 + mu2 log t) as eps -> 0 with
C_eps = log(1/eps) / pi.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, special
from scipy.interpolate import CubicSpline

from .errors import InputError, NumericalFailure

FAMILIES = ("gaussian", "bump")

# surface area of the unit sphere in R^d
_SPHERE = {1: 2.0, 2: 2.0 * math.pi, 3: 4.0 * math.pi}

_PROFILE_NODES = 2049   # nodes in |x|^2 / r^2 on [0, 4] for the bump table
_PAIR_NODES = 8193      # linear-interpolation table for pair sums (error < 3e-7 of the peak)
_GL_ORDER = 20          # nodes per panel in the time quadrature


@dataclass(frozen=True)
class MollifierKernel:
    """A mollifier rho in dimension d together with its self-convolution R."""

    family: str = "gaussian"
    d: int = 2
    sigma2: float = 0.5
    support_radius: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InputError(f"unknown mollifier family {self.family!r}")
        if self.d not in (1, 2, 3):
            raise InputError(f"dimension must be 1, 2 or 3, got {self.d}")
        if self.family == "gaussian" and not self.sigma2 > 0:
            raise InputError("sigma2 must be positive")
        if self.family == "bump" and not self.support_radius > 0:
            raise InputError("support_radius must be positive")

    @property
    def length2(self):
        """Squared length scale of R (variance per coordinate, or (2r)^2)."""
        if self.family == "gaussian":
            return 2.0 * self.sigma2
        return (2.0 * self.support_radius) ** 2

    def _radius2(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            if self.d == 1:
                return x * x
            raise InputError(f"scalar point given for d={self.d}")
        if x.shape[-1] != self.d:
            raise InputError(f"point dimension {x.shape[-1]} does not match d={self.d}")
        return np.sum(x * x, axis=-1)

    def rho(self, x):
        """Mollifier density at x (last axis of length d)."""
        r2 = self._radius2(x)
        if self.family == "gaussian":
            s2 = self.sigma2
            return (2 * math.pi * s2) ** (-self.d / 2) * np.exp(-r2 / (2 * s2))
        _, _, norm = _bump_tables(self.d)
        q2 = r2 / self.support_radius ** 2
        return _bump_unnormalized(q2) / norm / self.support_radius ** self.d

    def radial(self, r2):
        """R as a function of the squared radius."""
        r2 = np.asarray(r2, dtype=float)
        if self.family == "gaussian":
            s2 = 2.0 * self.sigma2
            return (2 * math.pi * s2) ** (-self.d / 2) * np.exp(-r2 / (2 * s2))
        rs2 = self.support_radius ** 2
        _, spline, _ = _bump_tables(self.d)
        u = r2 / rs2
        val = np.where(u < 4.0, spline(np.minimum(u, 4.0)), 0.0)
        return val / self.support_radius ** self.d


def _check_eps(eps):
    if not eps > 0:
        raise InputError(f"eps must be positive, got {eps}")


def kernel_value(k: MollifierKernel, x):
    """R(x) for the covariance kernel R = rho * rho."""
    return k.radial(k._radius2(x))


def kernel_scaled(k: MollifierKernel, eps, x):
    """R_eps(x) = eps^-d R(x / eps)."""
    _check_eps(eps)
    r2 = k._radius2(x)
    return k.radial(r2 / eps ** 2) / eps ** k.d


# --------------------------------------------------------------------------
# bump profile

def _gl(n, a, b):
    x, w = np.polynomial.legendre.leggauss(n)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    half = 0.5 * (b - a)
    return (a[..., None] + half[..., None] * (x + 1.0)), half[..., None] * w


def _bump_unnormalized(q2):
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        return np.where(q2 < 1.0, np.exp(-1.0 / (1.0 - np.minimum(q2, 1.0))), 0.0)


@lru_cache(maxsize=None)
def _bump_tables(d):
    """Radial profile of R for the unit-support bump: (u grid, spline, norm)."""
    q, wq = _gl(200, 0.0, 1.0)
    norm = _SPHERE[d] * float(np.sum(wq * _bump_unnormalized(q * q) * q ** (d - 1)))

    u = np.linspace(0.0, 4.0, _PROFILE_NODES)
    r = np.sqrt(u)
    n = 96
    if d == 1:
        # R(r) = int rho(y) rho(r - y) dy over y in [r - 1, 1]
        y, wy = _gl(2 * n, r - 1.0, np.ones_like(r))
        vals = np.sum(wy * _bump_unnormalized(y * y) * _bump_unnormalized((r[:, None] - y) ** 2),
                      axis=1)
    else:
        qlo = np.maximum(r - 1.0, 0.0)
        qq, wqq = _gl(n, qlo, np.ones_like(r))                 # (nr, n)
        rr = r[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            c = (rr ** 2 + qq ** 2 - 1.0) / (2.0 * rr * qq)
        c = np.where(np.isfinite(c), np.clip(c, -1.0, 1.0), -1.0)
        if d == 2:
            hi = np.arccos(c)                                   # angle range [0, hi]
            s, ws = _gl(n, 0.0, 1.0)
            ang = hi[..., None] * s.reshape(1, 1, -1)
            z2 = rr[..., None] ** 2 + qq[..., None] ** 2 - 2 * rr[..., None] * qq[..., None] * np.cos(ang)
            inner = 2.0 * hi * np.sum(ws.reshape(1, 1, -1) * _bump_unnormalized(z2), axis=-1)
            vals = np.sum(wqq * qq * _bump_unnormalized(qq ** 2) * inner, axis=1)
        else:
            # cosine of the polar angle runs over [c, 1]
            s, ws = _gl(n, 0.0, 1.0)
            w = c[..., None] + (1.0 - c[..., None]) * s.reshape(1, 1, -1)
            z2 = rr[..., None] ** 2 + qq[..., None] ** 2 - 2 * rr[..., None] * qq[..., None] * w
            inner = 2 * math.pi * (1.0 - c) * np.sum(ws.reshape(1, 1, -1) * _bump_unnormalized(z2),
                                                     axis=-1)
            vals = np.sum(wqq * qq ** 2 * _bump_unnormalized(qq ** 2) * inner, axis=1)
    vals = np.maximum(vals, 0.0) / norm ** 2
    vals[-1] = 0.0
    return u, CubicSpline(u, vals), norm


# --------------------------------------------------------------------------
# hot-loop profile

@dataclass(frozen=True)
class PairProfile:
    """R_eps(x) = prefactor * f(|x|^2) in the form the pair-sum core expects."""

    prefactor: float
    kind: int
    coef: float
    table: np.ndarray


def pair_profile(k: MollifierKernel, eps) -> PairProfile:
    _check_eps(eps)
    if k.family == "gaussian":
        s2 = 2.0 * k.sigma2 * eps ** 2
        return PairProfile((2 * math.pi * s2) ** (-k.d / 2), 0, 1.0 / (2.0 * s2), np.zeros(1))
    return PairProfile(1.0 / (k.support_radius * eps) ** k.d, 1,
                       (_PAIR_NODES - 1) / (4.0 * (k.support_radius * eps) ** 2), _pair_table(k.d))


@lru_cache(maxsize=None)
def _pair_table(d):
    _, spline, _ = _bump_tables(d)
    table = spline(np.linspace(0.0, 4.0, _PAIR_NODES))
    table[-1] = 0.0
    table.setflags(write=False)
    return table


# --------------------------------------------------------------------------
# heat-smoothed kernel and self-intersection mean

def _chi_density(d, z):
    return _SPHERE[d] * (2 * math.pi) ** (-d / 2) * z ** (d - 1) * np.exp(-0.5 * z * z)


def heat_smoothed_kernel(k: MollifierKernel, eps, v):
    """g_eps(v) = E[R_eps(B_v)] for a d-dimensional Brownian motion B."""
    _check_eps(eps)
    if np.any(np.asarray(v) < 0):
        raise InputError("time lag v must be nonnegative")
    if k.family == "gaussian":
        a = 2.0 * k.sigma2 * eps ** 2
        return (2 * math.pi * (np.asarray(v, dtype=float) + a)) ** (-k.d / 2)
    v = np.asarray(v, dtype=float)
    return _bump_g(k, eps, v.ravel()).reshape(v.shape)[()]


def _bump_g(k, eps, v, rtol=1e-11):
    # g = E[R(s Z)] / eps^d with Z standard normal in R^d and s = sqrt(v) / eps,
    # integrated radially on [0, min(2r/s, 40)] by panel-doubling Gauss-Legendre
    out = np.full(v.shape, float(k.radial(0.0)))
    live = v > 0
    if np.any(live):
        s = np.sqrt(v[live]) / eps
        top = np.minimum(2.0 * k.support_radius / s, 40.0)
        prev = None
        for panels in (8, 16, 32, 64, 128, 256):
            edges = np.linspace(0.0, 1.0, panels + 1)
            x, w = _gl(_GL_ORDER, edges[:-1], edges[1:])
            z = top[:, None] * x.ravel()[None, :]
            f = k.radial((s[:, None] * z) ** 2) * _chi_density(k.d, z)
            est = top * np.sum(w.ravel()[None, :] * f, axis=1)
            if prev is not None and np.all(np.abs(est - prev) <= rtol * np.abs(est)):
                break
            prev = est
        else:
            raise NumericalFailure("heat-smoothed kernel quadrature did not converge")
        out[live] = est
    return out / eps ** k.d


def _log_panels(t, v0):
    """Panel edges 0, v0, 2 v0, 4 v0, ..., t."""
    edges = [0.0]
    e = min(v0, t)
    while e < t:
        edges.append(e)
        e *= 2.0
    edges.append(t)
    return np.array(edges)


def _time_quadrature(k, eps, fn_weight, upper, breaks=()):
    """int_0^upper w(v) g_eps(v) dv on log-spaced Gauss-Legendre panels."""
    v0 = 1e-3 * k.length2 * eps ** 2
    edges = set(_log_panels(upper, v0).tolist())
    edges.update(b for b in breaks if 0 < b < upper)
    edges = np.array(sorted(edges))
    nodes, weights = _gl(_GL_ORDER, edges[:-1], edges[1:])
    nodes = nodes.ravel()
    g = heat_smoothed_kernel(k, eps, nodes)
    return float(np.sum(weights.ravel() * fn_weight(nodes) * g))


def _gauss_double_antiderivative(k, eps, w):
    """Phi with Phi'' = g_eps for the gaussian family (w >= 0)."""
    a = 2.0 * k.sigma2 * eps ** 2
    x = w + a
    if k.d == 1:
        return (2 * math.pi) ** -0.5 * (4.0 / 3.0) * x ** 1.5
    if k.d == 2:
        return (x * math.log(x) - x) / (2 * math.pi)
    return -(2 * math.pi) ** -1.5 * 4.0 * math.sqrt(x)


def nu_epsilon(k: MollifierKernel, eps, t, method="auto"):
    """Exact mean of the self-intersection functional over the simplex [0, t]^2_<.

    ``method="quadrature"`` forces the Gauss-Legendre route also for gaussian
    kernels; ``"auto"`` uses closed forms where they exist.
    """
    _check_eps(eps)
    if t < 0:
        raise InputError("t must be nonnegative")
    if t == 0:
        return 0.0
    if k.family == "gaussian" and method == "auto":
        a = 2.0 * k.sigma2 * eps ** 2
        if k.d == 2:
            return ((t + a) * math.log1p(t / a) - t) / (2 * math.pi)
        A, B = math.sqrt(a), math.sqrt(t + a)
        diff = t / (A + B)
        if k.d == 1:
            return (2 * math.pi) ** -0.5 * (2.0 / 3.0) * diff ** 2 * (2 * B + A)
        return (2 * math.pi) ** -1.5 * 2.0 * diff ** 2 / A
    if method not in ("auto", "quadrature"):
        raise InputError(f"unknown method {method!r}")
    return _time_quadrature(k, eps, lambda v: t - v, t)


def alpha_mean(k: MollifierKernel, eps, t, method="auto"):
    """Exact mean of the mutual-intersection functional over the square [0, t]^2.

    B^1_s - B^2_u is centered Gaussian with variance (s + u) per coordinate,
    so the mean is int_0^{2t} min(w, 2t - w) g_eps(w) dw.
    """
    _check_eps(eps)
    if t < 0:
        raise InputError("t must be nonnegative")
    if t == 0:
        return 0.0
    if k.family == "gaussian" and method == "auto":
        a = 2.0 * k.sigma2 * eps ** 2
        if k.d == 2:
            x0, x1, x2 = a, t + a, 2 * t + a
            return (x2 * math.log(x2) - 2 * x1 * math.log(x1) + x0 * math.log(x0)) / (2 * math.pi)
        phi = lambda w: _gauss_double_antiderivative(k, eps, w)  # noqa: E731
        return phi(2 * t) - 2 * phi(t) + phi(0.0)
    return _time_quadrature(k, eps, lambda w: np.minimum(w, 2 * t - w), 2 * t, breaks=(t,))


# --------------------------------------------------------------------------
# renormalization

@dataclass(frozen=True)
class RenormSpec:
    """Renormalization constant C_eps and the d = 2 limit constants.

    C_eps is 0 in d = 1, log(1/eps)/pi in d = 2 and c1/eps + c2 log(1/eps)
    in d = 3.
    """

    d: int = 2
    c1: float = 0.0
    c2: float = 0.0
    mu1: float | None = None
    mu2: float | None = None

    @classmethod
    def for_kernel(cls, k: MollifierKernel, c1=None, c2=0.0):
        """Defaults derived from the kernel: mu1, mu2 in d = 2, c1 in d = 3."""
        if k.d == 2:
            lc = limit_constants(k)
            return cls(d=2, mu1=lc.mu1, mu2=lc.mu2)
        if k.d == 3:
            return cls(d=3, c1=green_constant(k) if c1 is None else c1, c2=c2)
        return cls(d=1)


def green_constant(k: MollifierKernel):
    """int R(x) / (2 pi |x|) dx in d = 3, the coefficient of 1/eps in nu_eps(t)/t."""
    if k.d != 3:
        raise InputError("the 1/eps divergence constant is defined for d = 3")
    if k.family == "gaussian":
        s = math.sqrt(2.0 * k.sigma2)
        return math.sqrt(2.0 / math.pi) / (2 * math.pi * s)
    top = 2.0 * k.support_radius
    val, _ = integrate.quad(lambda r: float(k.radial(r * r)) * 2.0 * r, 0.0, top,
                            epsrel=1e-11, limit=200)
    return val


def renorm_constant(spec: RenormSpec, eps):
    """C_eps for the configured dimension."""
    _check_eps(eps)
    if spec.d == 1:
        return 0.0
    if spec.d == 2:
        if eps > 1:
            raise InputError("d = 2 renormalization expects eps in (0, 1]")
        return math.log(1.0 / eps) / math.pi
    if spec.d == 3:
        return spec.c1 / eps + spec.c2 * math.log(1.0 / eps)
    raise InputError(f"unsupported dimension {spec.d}")


@dataclass(frozen=True)
class LimitConstants:
    mu1: float
    mu2: float
    residual: float
    method: str


_LEMMA_T = np.linspace(0.1, 2.0, 20)
_LEMMA_EPS = (0.04, 0.02, 0.01, 0.005)
RESIDUAL_TOL = 1e-4


@lru_cache(maxsize=32)
def limit_constants(k: MollifierKernel, method="auto") -> LimitConstants:
    """(mu1, mu2) with nu_eps(t) - C_eps t -> t (mu1 + mu2 log t).

    Gaussian kernels use the closed form mu2 = 1/(2 pi),
    mu1 = -(1 + log(2 sigma2)) / (2 pi). Otherwise f_eps(t) = nu_eps(t) - C_eps t
    is extrapolated to eps = 0 on a (t, eps) grid with the correction basis
    {1, eps^2, eps^2 log eps}, then regressed on {t, t log t}.
    """
    if k.d != 2:
        raise InputError("limit constants are defined for d = 2")
    if k.family == "gaussian" and method == "auto":
        mu2 = 1.0 / (2 * math.pi)
        return LimitConstants(-(1.0 + math.log(2.0 * k.sigma2)) * mu2, mu2, 0.0, "closed-form")
    return _fit_limit_constants(k)


def _fit_limit_constants(k, ts=_LEMMA_T, eps_list=_LEMMA_EPS):
    spec = RenormSpec(d=2)
    eps = np.asarray(eps_list, dtype=float)
    design = np.column_stack([np.ones_like(eps), eps ** 2, eps ** 2 * np.log(eps)])
    f0 = np.empty(len(ts))
    for i, t in enumerate(ts):
        f = [nu_epsilon(k, e, t, method="quadrature") - renorm_constant(spec, e) * t for e in eps]
        coef, *_ = np.linalg.lstsq(design, np.array(f), rcond=None)
        f0[i] = coef[0]
    ts = np.asarray(ts, dtype=float)
    basis = np.column_stack([ts, ts * np.log(ts)])
    (mu1, mu2), *_ = np.linalg.lstsq(basis, f0, rcond=None)
    residual = float(np.max(np.abs(basis @ np.array([mu1, mu2]) - f0)))
    if residual > RESIDUAL_TOL:
        raise NumericalFailure(
            f"limit-constant regression residual {residual:.3e} exceeds {RESIDUAL_TOL:g}")
    return LimitConstants(float(mu1), float(mu2), residual, "extrapolated")


def lemma_residual(k: MollifierKernel, eps, t, constants: LimitConstants | None = None):
    """nu_eps(t) - C_eps t - t (mu1 + mu2 log t); tends to 0 as eps -> 0."""
    c = constants or limit_constants(k)
    return (nu_epsilon(k, eps, t) - renorm_constant(RenormSpec(d=2), eps) * t
            - t * (c.mu1 + c.mu2 * math.log(t)))


def small_ball_constant(d):
    """Principal Dirichlet eigenvalue of -(1/2) Laplacian on the unit ball.

    P(sup_{s<=t} |B_s| < eps) decays like exp(-c t / eps^2) with this c,
    which is j^2 / 2 for j the first zero of the Bessel function J_{d/2-1}.
    """
    if d == 1:
        return math.pi ** 2 / 8.0
    if d == 3:
        return math.pi ** 2 / 2.0
    return float(special.jn_zeros(0, 1)[0]) ** 2 / 2.0


def kernel_min_on_ball(k: MollifierKernel, radius=2.0, n=2001):
    """min of R over |x| <= radius (R is radial)."""
    r = np.linspace(0.0, radius, n)
    return float(np.min(k.radial(r * r)))
