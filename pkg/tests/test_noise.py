import numpy as np
import pytest

from hsiprop.cube import HsiCube
from hsiprop.noise import NoiseSpec, add_gaussian, add_impulse, add_poisson, apply_noise

FUNCS = (add_gaussian, add_impulse, add_poisson)


@pytest.fixture
def clean(rng):
    return rng.uniform(0.2, 0.8, (100, 100, 10))


@pytest.mark.parametrize("fn", FUNCS)
def test_zero_scale_is_identity(fn, clean):
    np.testing.assert_array_equal(fn(clean, 0.0, seed=3), clean)


@pytest.mark.parametrize("fn", FUNCS)
def test_deterministic_and_pure(fn, clean):
    before = clean.copy()
    a, b = fn(clean, 0.2, seed=11), fn(clean, 0.2, seed=11)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(clean, before)


@pytest.mark.parametrize("fn", FUNCS)
def test_seeds_decorrelate(fn):
    # constant base: a varying signal would correlate impulse residuals by itself
    base = np.full(10**5, 0.5)
    a = fn(base, 0.2, seed=1) - base
    b = fn(base, 0.2, seed=2) - base
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.01


@pytest.mark.parametrize("fn", FUNCS)
def test_output_in_unit_range(fn, clean):
    out = fn(clean, 0.3, seed=0)
    assert out.min() >= 0 and out.max() <= 1


def test_gaussian_variance():
    base = np.full(10**6, 0.5)
    noise = add_gaussian(base, 0.1, seed=5) - base
    assert abs(noise.var() / 0.01 - 1) < 0.02


def test_impulse_fraction_within_binomial_bound():
    n, p = 10**6, 0.2
    base = np.full(n, 0.5)
    out = add_impulse(base, p, seed=9)
    changed = np.mean(out != 0.5)
    assert abs(changed - p) <= 3 * np.sqrt(p * (1 - p) / n)
    assert set(np.unique(out)) == {0.0, 0.5, 1.0}
    assert abs(np.mean(out[out != 0.5]) - 0.5) < 0.01


def test_poisson_small_scale_is_gentle(clean):
    out = add_poisson(clean, 0.01, seed=2)
    assert np.mean(np.abs(out - clean)) < 0.01


def test_poisson_unbiased(clean):
    out = add_poisson(clean, 0.2, seed=4)
    assert abs(out.mean() / clean.mean() - 1) < 0.01


def test_cube_in_cube_out():
    cube = HsiCube(np.full((3, 3, 2), 0.5, dtype=np.float32), truth=np.ones((3, 3), int))
    out = apply_noise(cube, NoiseSpec("gaussian", 0.1, 7))
    assert isinstance(out, HsiCube)
    assert out.values.dtype == np.float32
    np.testing.assert_array_equal(out.truth, cube.truth)
    assert not np.array_equal(out.values, cube.values)


def test_block_streams_depend_on_position_only():
    # a larger array shares its leading blocks with a smaller one
    small = add_gaussian(np.full(70000, 0.5), 0.1, seed=3)
    large = add_gaussian(np.full(200000, 0.5), 0.1, seed=3)
    np.testing.assert_array_equal(small[: 1 << 16], large[: 1 << 16])


def test_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec("speckle", 0.1)
    with pytest.raises(ValueError):
        NoiseSpec("gaussian", -0.1)
    with pytest.raises(ValueError):
        add_impulse(np.zeros(3), 1.5)
    assert apply_noise(np.zeros(2), None) is not None
