import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from pamfk.errors import InputError
from pamfk.paths import (
    BrownianPath, SeedSpec, as_batch, derive_seed, derive_seeds, sample_batch, sample_path,
)

u64 = st.integers(0, 2 ** 64 - 1)


def _splitmix_reference(state, draws):
    # textbook SplitMix64 generator: state += gamma, then mix
    out = []
    for _ in range(draws):
        state = (state + 0x9E3779B97F4A7C15) % 2 ** 64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) % 2 ** 64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) % 2 ** 64
        out.append(z ^ (z >> 31))
    return out


def test_derive_seed_is_splitmix_stream():
    for master in (0, 1, 12345, 2 ** 64 - 1):
        assert [derive_seed(master, i) for i in range(8)] == _splitmix_reference(master, 8)


def test_derive_seed_known_value():
    # first SplitMix64 output from state 0
    assert derive_seed(0, 0) == 0xE220A8397B1DCDAF


def test_derive_seed_deterministic_and_distinct():
    assert derive_seed(7, 3) == derive_seed(7, 3)
    assert derive_seed(0, 0) != derive_seed(0, 1)


def test_no_collisions_on_million_indices():
    seeds = derive_seeds(42, np.arange(10 ** 6))
    assert np.unique(seeds).size == 10 ** 6


@given(u64, st.lists(st.integers(0, 2 ** 63), min_size=1, max_size=20))
def test_vectorized_matches_scalar(master, idx):
    vec = derive_seeds(master, idx)
    assert [int(v) for v in vec] == [derive_seed(master, i) for i in idx]


def test_seedspec_key_and_child():
    s = SeedSpec(5, 9)
    assert s.key == derive_seed(5, 9)
    assert s.child(2) == SeedSpec(derive_seed(5, 9), 2)


def test_sample_path_basic():
    p = sample_path(2, 1.5, 30, SeedSpec(1, 2))
    assert p.positions.shape == (31, 2)
    assert np.all(p.positions[0] == 0.0)
    assert p.dt == pytest.approx(0.05)
    assert p.times[-1] == 1.5
    q = sample_path(2, 1.5, 30, SeedSpec(1, 2))
    assert np.array_equal(p.positions, q.positions)
    assert not np.array_equal(p.positions, sample_path(2, 1.5, 30, SeedSpec(1, 3)).positions)


def test_sample_path_errors():
    with pytest.raises(InputError):
        sample_path(2, 1.0, 0, SeedSpec(0, 0))
    with pytest.raises(InputError):
        sample_path(2, 0.0, 10, SeedSpec(0, 0))
    with pytest.raises(InputError):
        sample_path(4, 1.0, 10, SeedSpec(0, 0))


@given(st.integers(1, 3), st.integers(1, 40), st.integers(0, 2 ** 32),
       st.lists(st.integers(0, 10 ** 9), min_size=1, max_size=5, unique=True))
def test_batch_matches_single_paths(d, n, master, idx):
    B = sample_batch(d, 0.7, n, master, idx)
    for m, i in enumerate(idx):
        p = sample_path(d, 0.7, n, SeedSpec(master, i))
        assert np.array_equal(B[m], p.positions.T)


def test_batch_independent_of_order():
    a = sample_batch(2, 1.0, 16, 3, [5, 1, 9])
    b = sample_batch(2, 1.0, 16, 3, [9, 5])
    assert np.array_equal(a[0], b[1]) and np.array_equal(a[2], b[0])


def test_as_batch_and_shift():
    p = sample_path(2, 1.0, 8, SeedSpec(0, 0))
    q = p.shifted([1e6, 0.0])
    assert np.allclose(q.positions - p.positions, [1e6, 0.0])
    assert as_batch([p, q]).shape == (2, 2, 9)
    with pytest.raises(InputError):
        as_batch([p, sample_path(2, 1.0, 9, SeedSpec(0, 0))])
    with pytest.raises(InputError):
        as_batch([])


def test_increment_statistics():
    M, n, t = 4000, 10, 2.0
    inc = np.diff(sample_batch(2, t, n, 11, np.arange(M)), axis=2)   # (M, 2, n)
    dt = t / n
    x = inc.transpose(0, 2, 1).reshape(-1, 2)
    N = x.shape[0]
    assert np.all(np.abs(x.mean(axis=0)) <= 4 * math.sqrt(dt / N))
    cov = np.cov(x, rowvar=False)
    assert np.all(np.abs(np.diag(cov) - dt) <= 4 * dt * math.sqrt(2 / N))
    assert abs(cov[0, 1]) <= 4 * dt / math.sqrt(N)


@pytest.mark.slow
def test_endpoint_clt_bounds():
    M = 10 ** 5
    end = sample_batch(2, 1.0, 1, 2024, np.arange(M))[:, :, -1]
    assert np.all(np.abs(end.mean(axis=0)) <= 4 / math.sqrt(M))
    assert abs(end[:, 0].var(ddof=1) - 1.0) <= 4 * math.sqrt(2 / M)
    r = np.corrcoef(end[:, 0], end[:, 1])[0, 1]
    assert abs(r) <= 4 / math.sqrt(M)


def test_brownian_scaling_ks():
    M, n, t = 10 ** 4, 8, 3.0
    a = sample_batch(2, t, n, 1, np.arange(M))[:, :, -1]
    b = sample_batch(2, 1.0, n, 2, np.arange(M))[:, :, -1]
    p = stats.ks_2samp(np.linalg.norm(a, axis=1) / math.sqrt(t), np.linalg.norm(b, axis=1)).pvalue
    assert p > 0.01


def test_brownian_path_is_immutable_dataclass():
    p = BrownianPath(1, 1.0, 2, np.zeros((3, 1)))
    with pytest.raises(AttributeError):
        p.t_max = 2.0
