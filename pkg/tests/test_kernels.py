import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from voronoi_wta.kernels import KernelSpec, kernel_density, radial_cell_mass, unit_ball_volume


def test_gaussian_mode_height():
    k = KernelSpec.gaussian(1.0, 2)
    assert kernel_density(k, np.zeros(2), np.zeros(2)) == pytest.approx(1 / (2 * math.pi))


def test_uniform_outside_support_is_zero():
    k = KernelSpec.uniform(1.0, 2)
    assert kernel_density(k, np.zeros(2), np.array([2.0, 0.0])) == 0.0
    assert kernel_density(k, np.zeros(2), np.array([0.5, 0.0])) == pytest.approx(1 / math.pi)


def test_gaussian_1d_value_against_quadrature():
    k = KernelSpec.gaussian(0.5, 1)
    # frozen from scipy quad of the 1-D normal density (integral 1.000000000000001)
    assert kernel_density(k, np.zeros(1), np.array([0.5])) == pytest.approx(0.48394144903828673, abs=1e-12)
    total, _ = integrate.quad(lambda t: float(kernel_density(k, np.zeros(1), np.array([t]))), -np.inf, np.inf)
    assert total == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("h", [0.3, 1.0])
def test_gaussian_normalisation_2d(h):
    k = KernelSpec.gaussian(h, 2)
    f = lambda b, a: float(kernel_density(k, np.zeros(2), np.array([a, b])))
    total, _ = integrate.dblquad(f, -8 * h, 8 * h, -8 * h, 8 * h, epsabs=1e-10)
    assert total == pytest.approx(1.0, abs=1e-6)


def test_uniform_normalisation_is_support_ratio():
    k = KernelSpec.uniform(0.7, 2)
    f = lambda b, a: float(kernel_density(k, np.zeros(2), np.array([a, b])))
    half, _ = integrate.dblquad(f, 0.0, 0.7, lambda a: 0.0, lambda a: math.sqrt(max(0.0, 0.49 - a * a)))
    assert 4 * half == pytest.approx(1.0, abs=1e-6)
    assert unit_ball_volume(2) == pytest.approx(math.pi)
    assert unit_ball_volume(3) == pytest.approx(4 * math.pi / 3)


def test_radial_mass_examples():
    g = KernelSpec.gaussian(1.0, 2)
    assert radial_cell_mass(g, math.sqrt(2.0)) == pytest.approx(1 - math.exp(-1), abs=1e-12)
    for d in (1, 2, 3):
        assert radial_cell_mass(KernelSpec.gaussian(0.37, d), np.inf) == 1.0
    assert radial_cell_mass(KernelSpec.uniform(1.0, 2), 0.5) == pytest.approx(0.25)
    assert radial_cell_mass(KernelSpec.uniform(1.0, 2), np.inf) == 1.0


def test_radial_mass_rejects_negative_radius():
    with pytest.raises(ValueError):
        radial_cell_mass(KernelSpec.gaussian(1.0), -0.1)


@pytest.mark.parametrize("factor", [0.1, 0.5, 1.0, 3.0])
def test_radial_mass_matches_radial_quadrature(factor):
    h = 0.4
    l = factor * h
    # mass of the 2-D Gaussian inside radius l: int_0^l r exp(-r^2 / 2h^2) / h^2 dr
    ref, _ = integrate.quad(lambda r: r * math.exp(-r * r / (2 * h * h)) / (h * h), 0.0, l, epsabs=1e-14)
    assert radial_cell_mass(KernelSpec.gaussian(h, 2), l) == pytest.approx(ref, abs=1e-8)


@settings(max_examples=50, deadline=None)
@given(
    family=st.sampled_from(["gaussian", "uniform"]),
    h=st.floats(0.01, 5.0),
    d=st.integers(1, 4),
    ls=st.lists(st.floats(0.0, 50.0), min_size=2, max_size=20),
)
def test_radial_mass_monotone_and_bounded(family, h, d, ls):
    k = KernelSpec(family, h, d)
    ls = np.sort(np.asarray(ls))
    m = radial_cell_mass(k, ls)
    assert np.all(np.diff(m) >= -1e-15)
    assert np.all((m >= 0) & (m <= 1))
    assert radial_cell_mass(k, 0.0) == 0.0
    assert radial_cell_mass(k, 1e6 * h) == pytest.approx(1.0)


def test_invalid_specs_rejected():
    with pytest.raises(ValueError):
        KernelSpec.gaussian(0.0)
    with pytest.raises(ValueError):
        KernelSpec.gaussian(1.0, 0)


@pytest.mark.parametrize("family", ["gaussian", "uniform"])
def test_kernel_sampler_matches_radial_mass(family):
    k = KernelSpec(family, 0.5, 2)
    s = k.sample(np.zeros((100_000, 2)), np.random.default_rng(0))
    r = np.linalg.norm(s, axis=1)
    for l in (0.2, 0.4):
        assert np.mean(r <= l) == pytest.approx(float(radial_cell_mass(k, l)), abs=0.01)
