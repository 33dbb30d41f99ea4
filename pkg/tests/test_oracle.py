import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pamfk.errors import DegenerateComparison, InputError
from pamfk.kernel import MollifierKernel, kernel_scaled
from pamfk.moments import Estimate, InitialCondition, MomentRequest, MonteCarlo, fk_moment
from pamfk.oracle import (
    HEADER, UNDER_RESOLVED, GridField, PdeParams, cross_validate, diffusion_step, lattice_axis,
    max_stable_dt, mollify_grid, noise_mc_moment, required_extent, sample_noise_batch,
    sample_noise_grid, solve_pde,
)
from pamfk.paths import SeedSpec

G1 = MollifierKernel(d=1)
G2 = MollifierKernel()
BUMP2 = MollifierKernel("bump", 2)


def heat_bump(x, t, width, d):
    """Heat evolution of exp(-|x|^2 / (2 w^2)) under (1/2) Lap."""
    s2 = width ** 2 + t
    return (width ** 2 / s2) ** (d / 2) * np.exp(-np.sum(x * x, axis=-1) / (2 * s2))


# --------------------------------------------------------------------------
# lattice noise

def test_lattice_axis_and_side():
    ax = lattice_axis(0.25, 1.0)
    assert np.allclose(ax, [-1.0, -0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75])
    with pytest.raises(InputError):
        lattice_axis(0.3, 1.0)
    with pytest.raises(InputError):
        sample_noise_grid(3, 0.5, 1.0, SeedSpec(0, 0))


def test_noise_variance_and_mean():
    h = 1 / 64
    f = sample_noise_grid(2, h, 2.0, SeedSpec(1, 0))
    assert f.values.shape == (256, 256)
    var = f.values.var()
    assert abs(var / 4096 - 1) < 0.05
    n = f.values.size
    assert abs(var - 4096) <= 4 * 4096 * math.sqrt(2 / n)
    assert abs(f.values.mean()) <= 4 * h ** -1 / math.sqrt(n)


def test_noise_reproducible():
    a = sample_noise_grid(1, 0.1, 1.0, SeedSpec(5, 2))
    b = sample_noise_grid(1, 0.1, 1.0, SeedSpec(5, 2))
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(sample_noise_batch(1, 0.1, 1.0, 5, [7, 2])[1], a.values)


def test_mollify_constant_unchanged():
    f = GridField(2, 0.1, 1.0, np.full((20, 20), 3.5))
    for k in (G2, BUMP2):
        assert np.allclose(mollify_grid(f, k, 0.3).values, 3.5, rtol=1e-13)


def test_mollify_warning_and_validation():
    f = sample_noise_grid(2, 0.1, 1.0, SeedSpec(0, 0))
    assert mollify_grid(f, G2, 0.3).warnings == ()
    assert mollify_grid(f, G2, 0.2).warnings == (UNDER_RESOLVED,)
    with pytest.raises(InputError):
        mollify_grid(f, G1, 0.3)
    with pytest.raises(InputError):
        mollify_grid(f, G2, 0.0)


def _periodic_R(k, eps, off, period):
    # R_eps at offset ``off`` summed over periodic images
    shifts = np.arange(-3, 4) * period
    grid = np.stack(np.meshgrid(shifts, shifts, indexing="ij"), axis=-1).reshape(-1, 2)
    return float(np.sum(kernel_scaled(k, eps, off + grid)))


@pytest.mark.slow
@pytest.mark.parametrize("k", [G2, BUMP2])
def test_mollified_covariance(k):
    h, L, eps, M = 0.05, 0.8, 0.25, 1000
    xi = np.stack([mollify_grid(GridField(2, h, L, v), k, eps).values
                   for v in sample_noise_batch(2, h, L, 3, np.arange(M))])
    side = xi.shape[-1]
    c = side // 2                                  # lattice origin
    for di, dj in [(0, 0), (1, 0), (2, 1), (4, 0), (3, 3)]:
        prod = xi[:, c, c] * xi[:, c + di, c + dj]
        ref = _periodic_R(k, eps, np.array([di * h, dj * h]), 2 * L)
        se = prod.std(ddof=1) / math.sqrt(M)
        assert abs(prod.mean() - ref) <= 3 * se, (di, dj)


# --------------------------------------------------------------------------
# time stepping

def test_diffusion_mass_conservation():
    rng = np.random.default_rng(0)
    for d, shape in [(1, (64,)), (2, (32, 32))]:
        u = rng.random(shape)
        v = diffusion_step(u, max_stable_dt(0.1, d), 0.1, d)
        assert abs(v.sum() - u.sum()) <= 1e-12 * abs(u.sum())


@given(st.integers(0, 2 ** 32), st.floats(0.1, 1.0))
def test_diffusion_step_properties(seed, frac):
    rng = np.random.default_rng(seed)
    u = rng.random((16, 16))
    v = diffusion_step(u, frac * max_stable_dt(0.2, 2), 0.2, 2)
    assert abs(v.sum() - u.sum()) <= 1e-12 * u.sum()
    assert v.min() >= 0
    assert v.max() <= u.max() + 1e-15


def test_heat_kernel_accuracy_d1():
    h, L, t, w = 1 / 128, 2.0, 0.1, 0.25
    f = GridField(1, h, L, np.zeros(int(2 * L / h)))
    u0 = InitialCondition.gaussian_bump([0.0], w)
    u = solve_pde(f, t, max_stable_dt(h, 1), 0.0, u0)
    err = np.max(np.abs(u.values - heat_bump(u.points(), t, w, 1)))
    assert err <= 1e-3


@pytest.mark.slow
def test_heat_kernel_accuracy_d2():
    h, L, t, w = 1 / 128, 1.5, 0.1, 0.25
    f = GridField(2, h, L, np.zeros((int(2 * L / h),) * 2))
    u0 = InitialCondition.gaussian_bump([0.0, 0.0], w)
    u = solve_pde(f, t, max_stable_dt(h, 2), 0.0, u0)
    err = np.max(np.abs(u.values - heat_bump(u.points(), t, w, 2)))
    assert err <= 1e-3


@pytest.mark.parametrize("c", [-3.0, 0.0, 2.5])
def test_constant_potential_exact(c):
    f = GridField(2, 0.1, 1.0, np.full((20, 20), c))
    u = solve_pde(f, 0.37, 0.002, 0.7, 1.0)
    assert np.max(np.abs(u.values - math.exp((c - 0.7) * 0.37))) <= 1e-12 * math.exp(abs(c) * 0.37)


def test_positivity():
    xi = mollify_grid(sample_noise_grid(2, 0.1, 1.6, SeedSpec(2, 0)), G2, 0.3)
    u0 = InitialCondition.gaussian_bump([0.3, -0.2], 0.2)
    u = solve_pde(xi, 0.2, max_stable_dt(0.1, 2), 1.0, u0)
    assert np.all(u.values >= 0) and np.all(np.isfinite(u.values))


def test_splitting_first_order():
    h, L = 0.05, 1.0
    xi = mollify_grid(sample_noise_grid(1, h, L, SeedSpec(4, 0)), G1, 0.2)
    u0 = InitialCondition.gaussian_bump([0.0], 0.3)
    dt0 = max_stable_dt(h, 1)
    sols = [solve_pde(xi, 0.25, dt0 / 2 ** j, 0.0, u0).values for j in range(3)]
    r = np.max(np.abs(sols[0] - sols[1])) / np.max(np.abs(sols[1] - sols[2]))
    assert 1.6 < r < 2.4


def test_stability_refusal():
    f = GridField(2, 0.1, 1.0, np.zeros((20, 20)))
    with pytest.raises(InputError, match="0.0025"):
        solve_pde(f, 0.1, 0.003, 0.0, 1.0)


def test_time_zero_returns_initial():
    f = GridField(1, 0.1, 1.0, np.zeros(20))
    u = solve_pde(f, 0.0, 0.001, 5.0, 0.5)
    assert np.all(u.values == 0.5)


# --------------------------------------------------------------------------
# file format

def test_grid_field_round_trip(tmp_path):
    f = sample_noise_grid(2, 0.125, 1.0, SeedSpec(0, 1))
    path = tmp_path / "xi.bin"
    f.write(path)
    raw = path.read_bytes()
    assert HEADER.size == 20 and len(raw) == 20 + 8 * 16 * 16
    assert raw[:4] == b"PAMF"
    g = GridField.read(path)
    assert (g.d, g.h, g.extent) == (2, 0.125, 1.0)
    assert np.array_equal(g.values, f.values)
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(InputError):
        GridField.read(path)
    path.write_bytes(raw[:-8])
    with pytest.raises(InputError):
        GridField.read(path)


# --------------------------------------------------------------------------
# noise Monte Carlo and cross-validation

def test_required_extent():
    assert required_extent(np.array([0.5, -1.0]), 0.25, 0.1) == pytest.approx(1.0 + 2.0 + 0.4)


def test_noise_mc_validation():
    mc = MonteCarlo(4)
    with pytest.raises(InputError, match="margin"):
        noise_mc_moment(1, 0.25, [0.0], 0.3, G1, mc, PdeParams(0.05, 1.0))
    with pytest.raises(InputError, match="lattice"):
        noise_mc_moment(1, 0.25, [0.01], 0.3, G1, mc, PdeParams(0.05, 4.0))
    with pytest.raises(InputError):
        noise_mc_moment(0, 0.25, [0.0], 0.3, G1, mc, PdeParams(0.05, 4.0))


def test_noise_mc_zero_initial_and_time_zero():
    pde = PdeParams(0.05, 4.0)
    e = noise_mc_moment(1, 0.25, [0.0], 0.3, G1, MonteCarlo(16), pde, u0=InitialCondition.constant(0))
    assert e.mean == 0.0
    e0 = noise_mc_moment(2, 0.0, [0.0], 0.3, G1, MonteCarlo(16), pde,
                         u0=InitialCondition.constant(0.5))
    assert e0.mean == 0.25 and e0.stderr == 0.0


def test_noise_mc_thread_independent():
    pde = PdeParams(0.05, 4.0)
    mc = MonteCarlo(40, master_seed=3)
    a = noise_mc_moment(2, 0.25, [0.0], 0.3, G1, mc, pde, threads=1, chunk=8)
    b = noise_mc_moment(2, 0.25, [0.0], 0.3, G1, mc, pde, threads=4, chunk=8)
    assert a == b


@pytest.mark.slow
def test_small_cross_validation_d1():
    eps, t, M = 0.3, 0.25, 2000
    pde = PdeParams(0.05, 0.05 * math.ceil(required_extent(np.zeros(1), t, eps) / 0.05))
    b = noise_mc_moment(1, t, [0.0], eps, G1, MonteCarlo(M, master_seed=1), pde)
    a = fk_moment(MomentRequest(1, t, eps, kernel=G1, mc=MonteCarlo(M, n_steps=200, master_seed=2)))
    assert cross_validate(a, b).verdict == "PASS"


def test_cross_validate_examples():
    a = Estimate(1.0, 0.01, 10, 0)
    b = Estimate(1.05, 0.01, 10, 0)
    r = cross_validate(a, b)
    assert r.z == pytest.approx(-3.5355339, rel=1e-6) and r.verdict == "FAIL"
    assert cross_validate(a, a) == cross_validate(a, a)
    assert cross_validate(a, a).z == 0.0 and cross_validate(a, a).verdict == "PASS"
    edge = cross_validate(Estimate(15.0, 3.0, 10, 0), Estimate(0.0, 4.0, 10, 0))
    assert edge.z == 3.0 and edge.verdict == "PASS"
    assert cross_validate(Estimate.exact(1.0), Estimate.exact(1.0)).verdict == "PASS"
    with pytest.raises(DegenerateComparison):
        cross_validate(Estimate.exact(1.0), Estimate.exact(2.0))
    with pytest.raises(InputError):
        cross_validate(Estimate(math.inf, 0.1, 1, 0), a)


@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0.01, 5), st.floats(0.01, 5))
def test_cross_validate_antisymmetric(m1, m2, s1, s2):
    a, b = Estimate(m1, s1, 2, 0), Estimate(m2, s2, 2, 0)
    assert cross_validate(a, b).z == pytest.approx(-cross_validate(b, a).z)
    assert (cross_validate(a, b).verdict == "PASS") == (abs(m1 - m2) <= 3 * math.hypot(s1, s2))
