"""Feynman-Kac Monte Carlo for moments of the mollified parabolic Anderson model.

With n independent Brownian motions B^1..B^n started at 0,

    E[u_eps(t, x)^n] = E[exp(I_n^eps(t) - n C_eps t) prod_k u0(x + B^k_t)],

where I_n^eps is the sum of the n self terms and the n(n-1)/2 mutual terms
(:mod:`pamfk.ilt`). In d = 2 the same weight can be written with the exact
self-intersection mean and the limit constants,

    exp(I_n^eps - n nu_eps(t) + n t (mu1 + mu2 log t)),

which differs from the first form by a deterministic factor per sample.

Weights are accumulated in log space and shifted by their maximum before
exponentiation, so large exponents never overflow silently.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from ._parallel import map_chunks
from .errors import InadmissibleTime, InputError
from .ilt import beta_batch, alpha_batch, i_n_batch, resolution_ok, RESOLUTION
from .kernel import (MollifierKernel, RenormSpec, kernel_min_on_ball, limit_constants,
                     nu_epsilon, renorm_constant, small_ball_constant)
from .paths import derive_seed, sample_batch

HEAVY_TAIL = "heavy-tail"       # top 1% of weights carry more than half the total
OVERFLOW = "overflow"           # mean exceeds float range; see Estimate.log_mean
TOP_FRACTION = 0.01
TOP_SHARE = 0.5

DEFAULT_PATHS = 10000
STEPS_PER_EPS2 = 8.0            # auto grid: dt <= eps^2 / 8


@dataclass(frozen=True)
class Estimate:
    """Monte Carlo mean with standard error and provenance.

    ``stderr`` is the sample standard deviation (ddof = 1) over
    sqrt(n_samples). ``log_mean`` is log(mean) for positive means and is
    the only finite summary when ``mean`` overflows.
    """

    mean: float
    stderr: float
    n_samples: int
    master_seed: int
    warnings: tuple = ()
    log_mean: float | None = None

    @classmethod
    def exact(cls, value, master_seed=0, warnings=()):
        value = float(value)
        return cls(value, 0.0, 0, master_seed, tuple(warnings),
                   math.log(value) if value > 0 else None)


def summarize_log_weights(logw, sign=None, master_seed=0, warnings=()) -> Estimate:
    """Mean of sign * exp(logw) computed with a max-shift."""
    logw = np.asarray(logw, dtype=float)
    M = logw.size
    if M == 0:
        raise InputError("no samples")
    sign = np.ones(M) if sign is None else np.asarray(sign, dtype=float)
    warnings = list(warnings)
    live = (sign != 0) & np.isfinite(logw)
    if not np.any(live):
        return Estimate(0.0, 0.0, M, master_seed, tuple(warnings), None)
    shift = float(np.max(logw[live]))
    w = np.where(live, sign * np.exp(np.where(live, logw, shift) - shift), 0.0)
    m = float(np.mean(w))
    s = float(np.std(w, ddof=1)) / math.sqrt(M) if M > 1 else 0.0
    aw = np.sort(np.abs(w))[::-1]
    top = max(1, math.ceil(TOP_FRACTION * M))
    if M > 1 and aw[:top].sum() > TOP_SHARE * aw.sum():
        warnings.append(HEAVY_TAIL)
    log_mean = shift + math.log(m) if m > 0 else None
    if shift <= 700.0:
        scale = math.exp(shift)
        return Estimate(m * scale, s * scale, M, master_seed, tuple(warnings), log_mean)
    # exp(shift) alone would overflow; combine in log space
    log_abs = shift + math.log(abs(m)) if m != 0 else -math.inf
    if log_abs > 709.0:
        warnings.append(OVERFLOW)
        return Estimate(math.copysign(math.inf, m), math.inf, M, master_seed,
                        tuple(warnings), log_mean)
    mean = math.copysign(math.exp(log_abs), m) if m != 0 else 0.0
    err = math.exp(shift + math.log(s)) if s > 0 else 0.0
    return Estimate(mean, err, M, master_seed, tuple(warnings), log_mean)


# --------------------------------------------------------------------------
# initial conditions

@dataclass(frozen=True)
class InitialCondition:
    """u0 with sup-norm at most 1.

    Build with :meth:`constant`, :meth:`gaussian_bump` or :meth:`custom`.
    ``custom`` takes values on a regular grid with spacing h over [-L, L]^d,
    interpolated multilinearly and zero outside.
    """

    form: str = "constant"
    c: float = 1.0
    center: tuple = ()
    width: float = 1.0
    h: float = 0.0
    extent: float = 0.0
    values: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.form == "constant":
            if abs(self.c) > 1:
                raise InputError("constant initial condition needs |c| <= 1")
        elif self.form == "gaussian_bump":
            if abs(self.c) > 1 or not self.width > 0:
                raise InputError("gaussian bump needs |amplitude| <= 1 and width > 0")
        elif self.form == "custom":
            if self.values is None or not np.all(np.isfinite(self.values)):
                raise InputError("custom initial condition needs finite values")
            if np.max(np.abs(self.values)) > 1:
                raise InputError("initial condition sup-norm exceeds 1")
        else:
            raise InputError(f"unknown initial condition form {self.form!r}")

    @classmethod
    def constant(cls, c=1.0):
        return cls("constant", c=float(c))

    @classmethod
    def gaussian_bump(cls, center, width, amplitude=1.0):
        """amplitude * exp(-|x - center|^2 / (2 width^2))."""
        return cls("gaussian_bump", c=float(amplitude),
                   center=tuple(float(v) for v in np.atleast_1d(center)), width=float(width))

    @classmethod
    def custom(cls, values, h, extent):
        values = np.asarray(values, dtype=float)
        return cls("custom", h=float(h), extent=float(extent), values=values)

    def __call__(self, x):
        """Evaluate at points x of shape (..., d)."""
        x = np.asarray(x, dtype=float)
        if self.form == "constant":
            return np.full(x.shape[:-1], self.c)
        if self.form == "gaussian_bump":
            r2 = np.sum((x - np.asarray(self.center)) ** 2, axis=-1)
            return self.c * np.exp(-r2 / (2 * self.width ** 2))
        axis = np.linspace(-self.extent, self.extent, self.values.shape[0])
        interp = RegularGridInterpolator((axis,) * self.values.ndim, self.values,
                                         bounds_error=False, fill_value=0.0)
        return interp(x.reshape(-1, x.shape[-1])).reshape(x.shape[:-1])


# --------------------------------------------------------------------------
# requests

@dataclass(frozen=True)
class MonteCarlo:
    n_paths: int = DEFAULT_PATHS
    n_steps: int | None = None      # None: ceil(8 t / eps^2)
    master_seed: int = 0

    def __post_init__(self):
        if self.n_paths < 1:
            raise InputError("n_paths must be >= 1")
        if self.n_steps is not None and self.n_steps < 1:
            raise InputError("n_steps must be >= 1")


def default_steps(t, eps):
    """Smallest grid with dt <= eps^2 / 8."""
    return max(1, math.ceil(STEPS_PER_EPS2 * t / (eps * eps) - 1e-9))


@dataclass(frozen=True)
class MomentRequest:
    n: int
    t: float
    eps: float
    kernel: MollifierKernel = MollifierKernel()
    x: tuple | None = None
    u0: InitialCondition = InitialCondition()
    mc: MonteCarlo = MonteCarlo()
    theta: float = 2.0
    lambda_hat: float = 0.5
    renorm: RenormSpec | None = None

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise InputError("moment order n must be a positive integer")
        if self.t < 0:
            raise InputError("t must be nonnegative")
        if not self.eps > 0:
            raise InputError("eps must be positive")
        if self.x is not None and len(self.x) != self.kernel.d:
            raise InputError("x does not match the kernel dimension")

    @property
    def point(self):
        return np.zeros(self.kernel.d) if self.x is None else np.asarray(self.x, dtype=float)

    @property
    def n_steps(self):
        return self.mc.n_steps or default_steps(self.t, self.eps)

    @property
    def renorm_spec(self):
        if self.renorm is not None:
            return self.renorm
        return RenormSpec.for_kernel(self.kernel)


def form_offset(req: MomentRequest, form: str) -> float:
    """Deterministic part subtracted from I_n in the chosen exponent form."""
    n, t = req.n, req.t
    if form == "C":
        return n * renorm_constant(req.renorm_spec, req.eps) * t
    if form == "renormalized":
        if req.kernel.d != 2:
            raise InputError("the renormalized exponent form is defined for d = 2")
        spec = req.renorm_spec
        lc = (spec.mu1, spec.mu2) if spec.mu1 is not None else None
        if lc is None:
            c = limit_constants(req.kernel)
            lc = (c.mu1, c.mu2)
        return n * nu_epsilon(req.kernel, req.eps, t) - n * t * (lc[0] + lc[1] * math.log(t))
    raise InputError(f"unknown exponent form {form!r}")


def form_ratio(req: MomentRequest) -> float:
    """exp(n (nu_eps - C_eps t - t (mu1 + mu2 log t))): C-form over renormalized form."""
    return math.exp(form_offset(req, "renormalized") - form_offset(req, "C"))


def _fk_log_weights(req: MomentRequest, master, threads):
    k, n, t = req.kernel, req.n, req.t
    x = req.point
    steps = req.n_steps

    def chunk(s0, s1):
        idx = np.arange(s0, s1, dtype=np.uint64)
        batches = [sample_batch(k.d, t, steps, master, idx * np.uint64(n) + np.uint64(j))
                   for j in range(n)]
        total, _, _ = i_n_batch(batches, k, req.eps, t)
        sign = np.ones(s1 - s0)
        with np.errstate(divide="ignore"):
            for P in batches:
                u = req.u0(x + P[:, :, -1])
                sign *= np.sign(u)
                total += np.log(np.abs(u))
        return total, sign

    return map_chunks(chunk, req.mc.n_paths, threads)


def fk_moment(req: MomentRequest, form: str = "C", threads: int | None = None,
              master_seed: int | None = None) -> Estimate:
    """Monte Carlo estimate of E[u_eps(t, x)^n].

    Sample m uses the path streams m n + j, j < n, under ``master_seed``
    (default ``req.mc.master_seed``).
    """
    master = req.mc.master_seed if master_seed is None else master_seed
    offset = form_offset(req, form) if req.t > 0 else 0.0
    if req.t == 0:
        return Estimate.exact(float(req.u0(req.point[None, :])[0]) ** req.n, master)
    warnings = [] if resolution_ok(req.t, req.n_steps, req.eps) else [RESOLUTION]
    logw, sign = _fk_log_weights(req, master, threads)
    return summarize_log_weights(logw - offset, sign, master, warnings)


# --------------------------------------------------------------------------
# limit moments

def small_time_bound(n: int, lambda_hat: float, theta: float = 2.0) -> float:
    """lambda_hat / (theta N) with N = n (n + 1) / 2."""
    if not lambda_hat > 0:
        raise InputError("lambda_hat must be positive")
    if not theta >= 1:
        raise InputError("theta must be >= 1")
    if int(n) != n or n < 1:
        raise InputError("moment order n must be a positive integer")
    return lambda_hat / (theta * n * (n + 1) / 2)


def combined_z(a: Estimate, b: Estimate) -> float:
    s = math.hypot(a.stderr, b.stderr)
    diff = a.mean - b.mean
    if s == 0:
        return 0.0 if diff == 0 else math.copysign(math.inf, diff)
    return diff / s


@dataclass(frozen=True)
class LimitReport:
    """Renormalized-form estimates along a decreasing eps ladder.

    ``z`` holds the combined z-scores of successive rungs. The verdict is
    PASS when every |z| <= 3; only then is ``estimate`` (the finest rung)
    offered as a limit value.
    """

    eps: tuple
    n_steps: tuple
    estimates: tuple
    z: tuple
    verdict: str
    bound: float

    @property
    def estimate(self) -> Estimate | None:
        return self.estimates[-1] if self.verdict == "PASS" else None


def limit_moment(req: MomentRequest, eps_ladder, threads: int | None = None) -> LimitReport:
    """Cauchy-in-eps study of the renormalized Feynman-Kac moment.

    Rung r runs on its own seed ``derive_seed(master_seed, r)``. Without an
    explicit ``mc.n_steps`` each rung gets the auto grid for its eps.
    """
    ladder = tuple(float(e) for e in eps_ladder)
    if len(ladder) < 2 or any(b >= a for a, b in zip(ladder, ladder[1:])):
        raise InputError("eps ladder must be strictly decreasing with at least two rungs")
    bound = small_time_bound(req.n, req.lambda_hat, req.theta)
    if req.t >= bound:
        raise InadmissibleTime(req.t, bound)
    rows, steps = [], []
    for r, eps in enumerate(ladder):
        n_steps = req.mc.n_steps or default_steps(req.t, eps)
        if req.t > 0 and not resolution_ok(req.t, n_steps, eps):
            raise InputError(f"n_steps = {n_steps} violates the resolution guard at eps = {eps:g}")
        rung = replace(req, eps=eps, mc=replace(req.mc, n_steps=n_steps))
        rows.append(fk_moment(rung, form="renormalized", threads=threads,
                              master_seed=derive_seed(req.mc.master_seed, r)))
        steps.append(n_steps)
    z = tuple(combined_z(a, b) for a, b in zip(rows, rows[1:]))
    verdict = "PASS" if all(abs(v) <= 3 for v in z) else "FAIL"
    return LimitReport(ladder, tuple(steps), tuple(rows), z, verdict, bound)


# --------------------------------------------------------------------------
# exponential moments of X_eps and Y_eps on [0, 1]

def exp_moment(which: str, lam: float, k: MollifierKernel, eps: float,
               mc: MonteCarlo = MonteCarlo(), threads: int | None = None) -> Estimate:
    """E[exp(lam X_eps)] (one path) or E[exp(lam Y_eps)] (two paths) on [0, 1]."""
    if which not in ("X", "Y"):
        raise InputError("which must be 'X' or 'Y'")
    steps = mc.n_steps or default_steps(1.0, eps)
    warnings = [] if resolution_ok(1.0, steps, eps) else [RESOLUTION]
    if lam == 0:
        return Estimate(1.0, 0.0, mc.n_paths, mc.master_seed, tuple(warnings), 0.0)
    seed = mc.master_seed
    if which == "X":
        nu = nu_epsilon(k, eps, 1.0)

        def chunk(s0, s1):
            P = sample_batch(k.d, 1.0, steps, seed, np.arange(s0, s1))
            return lam * (beta_batch(P, k, eps, 1.0) - nu)
    else:
        def chunk(s0, s1):
            idx = 2 * np.arange(s0, s1, dtype=np.uint64)
            P = sample_batch(k.d, 1.0, steps, seed, idx)
            Q = sample_batch(k.d, 1.0, steps, seed, idx + np.uint64(1))
            return lam * alpha_batch(P, Q, k, eps, 1.0)

    logw = map_chunks(chunk, mc.n_paths, threads)
    return summarize_log_weights(logw, None, seed, warnings)


@dataclass(frozen=True)
class LambdaScan:
    lambda_hat: float | None
    table: tuple      # (lam, which, eps, Estimate)
    ratios: dict      # (lam, which) -> max/min over eps


def estimate_lambda_hat(k: MollifierKernel, eps_list, lambdas, mc: MonteCarlo = MonteCarlo(),
                        max_ratio: float = 1.5, threads: int | None = None) -> LambdaScan:
    """Largest lambda whose X and Y sweeps over eps stay within ``max_ratio`` untailed.

    Each (lambda, which, eps) cell runs on ``derive_seed(master_seed, cell)``.
    """
    table, ratios, best = [], {}, None
    cell = 0
    for lam in sorted(lambdas):
        ok = True
        for which in ("X", "Y"):
            ests = []
            for eps in eps_list:
                est = exp_moment(which, lam, k, eps,
                                 replace(mc, master_seed=derive_seed(mc.master_seed, cell)), threads)
                cell += 1
                table.append((lam, which, eps, est))
                ests.append(est)
            means = [e.mean for e in ests]
            ratio = max(means) / min(means) if min(means) > 0 else math.inf
            ratios[(lam, which)] = ratio
            ok &= ratio <= max_ratio and not any(HEAVY_TAIL in e.warnings for e in ests)
        if not ok:
            break
        best = lam
    return LambdaScan(best, tuple(table), ratios)


# --------------------------------------------------------------------------
# explosion probe

def log_lower_bound(d, t, eps, delta_hat, c_prime, c_eps):
    """log of exp(delta t^2 / (2 eps^d) - c' t / eps^2 - C_eps t)."""
    return delta_hat * t * t / (2 * eps ** d) - c_prime * t / eps ** 2 - c_eps * t


@dataclass(frozen=True)
class ExplosionRow:
    eps: float
    log_lower_bound: float
    growth: float | None          # lower bound at this eps over the previous (larger) eps
    mc: Estimate | None


@dataclass(frozen=True)
class ExplosionTable:
    d: int
    t: float
    delta_hat: float
    c_prime: float
    rows: tuple

    @property
    def lower_bound_increasing(self) -> bool:
        """Strict increase of the lower bound as eps decreases along the list."""
        lb = [r.log_lower_bound for r in self.rows]
        return all(b > a for a, b in zip(lb, lb[1:]))

    @property
    def mc_z(self) -> tuple:
        est = [r.mc for r in self.rows if r.mc is not None]
        return tuple(combined_z(a, b) for a, b in zip(est, est[1:]))

    @property
    def mc_stable(self) -> bool | None:
        z = self.mc_z
        return None if not z else all(abs(v) <= 3 for v in z)


def explosion_probe(d: int, t: float, eps_list, k: MollifierKernel, mc: MonteCarlo = MonteCarlo(),
                    renorm: RenormSpec | None = None, c_prime: float | None = None,
                    delta_hat: float | None = None, with_mc: bool = True,
                    threads: int | None = None) -> ExplosionTable:
    """Monte Carlo e^{-C_eps t} E[exp(beta_eps)] next to its small-ball lower bound.

    ``delta_hat`` defaults to min of R over |x| <= 2 and ``c_prime`` to the
    small-ball rate of the unit ball. Row r samples on
    ``derive_seed(master_seed, r)``.
    """
    if d not in (2, 3):
        raise InputError("the explosion probe is defined for d = 2, 3")
    if k.d != d:
        raise InputError("kernel dimension does not match d")
    eps_list = tuple(float(e) for e in eps_list)
    renorm = renorm or RenormSpec.for_kernel(k)
    delta_hat = kernel_min_on_ball(k) if delta_hat is None else delta_hat
    c_prime = small_ball_constant(d) if c_prime is None else c_prime
    rows, prev = [], None
    for r, eps in enumerate(eps_list):
        c_eps = renorm_constant(renorm, eps)
        llb = log_lower_bound(d, t, eps, delta_hat, c_prime, c_eps)
        growth = None if prev is None else math.exp(min(llb - prev, 700.0))
        est = None
        if with_mc:
            req = MomentRequest(1, t, eps, kernel=k, mc=replace(mc, master_seed=derive_seed(mc.master_seed, r)),
                                renorm=renorm)
            est = fk_moment(req, form="C", threads=threads)
        rows.append(ExplosionRow(eps, llb, growth, est))
        prev = llb
    return ExplosionTable(d, t, delta_hat, c_prime, tuple(rows))
