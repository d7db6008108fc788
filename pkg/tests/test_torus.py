import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import special

from cuspwalk.errors import ValidationError
from cuspwalk.kernel import AnisotropicScale
from cuspwalk.torus import (
    TorusField,
    cube_torus_sandwich,
    g_multiplier,
    gn_table,
    low_high_split,
    multiplier,
    one_minus_g,
    quadratic_coefficient,
    reflect_extend,
    restrict,
    split_bound_ratios,
    split_constants,
    torus_convolution_oracle,
    torus_dirichlet_energy,
    torus_metropolis_apply,
)
from cuspwalk.torus import _g_scalar

XI = np.array([0.0, 0.3, 1.0, 2.5, 7.0])


def test_g1_closed_form_matches_quadrature():
    for s in XI[1:]:
        assert g_multiplier(1, s) == pytest.approx(_g_scalar(1, float(s), False), abs=1e-12)
        assert g_multiplier(1, s) == pytest.approx(math.sin(math.pi * s) / (math.pi * s), abs=1e-14)


def test_g2_is_a_bessel_ratio():
    # Fourier transform of the normalized disc indicator: 2 J_1(pi s) / (pi s)
    x = math.pi * XI[1:]
    np.testing.assert_allclose(g_multiplier(2, XI[1:]), 2 * special.j1(x) / x, atol=1e-11)


def test_g3_closed_form_matches_quadrature():
    for s in XI[1:]:
        assert g_multiplier(3, s) == pytest.approx(_g_scalar(3, float(s), False), abs=1e-11)


@given(st.integers(1, 5), st.floats(0.0, 20.0))
def test_complement_and_bound(n, s):
    g = g_multiplier(n, s)
    assert abs(g) <= 1.0 + 1e-12
    assert g + one_minus_g(n, s) == pytest.approx(1.0, abs=1e-10)
    assert g_multiplier(n, -s) == g


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_quadratic_coefficient(n):
    assert quadratic_coefficient(n) == pytest.approx(math.pi**2 / (2 * (n + 2)), rel=1e-6)


def test_g1_zero_at_one():
    assert abs(g_multiplier(1, 1.0)) < 1e-15
    with pytest.raises(ValidationError):
        g_multiplier(0, 1.0)


def test_gn_table_triples():
    rows = gn_table([1, 2], [0.0, 0.5])
    assert [r[:2] for r in rows] == [(1, 0.0), (1, 0.5), (2, 0.0), (2, 0.5)]
    assert rows[0][2] == 1.0


@given(arrays(np.float64, (6, 4), elements=st.floats(-10, 10)))
def test_reflect_restrict_round_trip_and_parseval(f):
    fld = reflect_extend(f)
    np.testing.assert_allclose(restrict(fld), f, atol=1e-10)
    # the even extension has 2^d times the cube L^2 mass
    assert fld.l2_norm() ** 2 == pytest.approx(4 * np.mean(f**2), rel=1e-10, abs=1e-10)


def test_torus_grid_round_trip(rng):
    v = rng.normal(size=(8, 6, 4))
    fld = TorusField.from_torus_grid(v, (1, 1, 1))
    np.testing.assert_allclose(fld.to_torus_grid().real, v, atol=1e-12)


def test_derivative_of_cosine(rng):
    n = 16
    x = (np.arange(2 * n) + 0.5) / n
    fld = TorusField.from_torus_grid(np.cos(math.pi * 3 * x), (1, 0, 0))
    d = fld.derivative(0).to_torus_grid().real
    np.testing.assert_allclose(d, -3 * math.pi * np.sin(3 * math.pi * x), atol=1e-10)


def test_multiplier_matches_physical_window_average(rng):
    # band-limited random field, product window: Fourier multiplier versus Gauss-Legendre in x space
    n = 6
    c = np.zeros((2 * n, 2 * n), dtype=complex)
    c[:3, :3] = rng.normal(size=(3, 3))
    v = TorusField(c, (1, 1, 0)).to_torus_grid().real
    fld = TorusField.from_torus_grid(v, (1, 1, 0))
    scale = AnisotropicScale(0.3, 0.2, 0.5)
    fourier = torus_metropolis_apply(fld, scale).to_torus_grid().real
    physical = torus_convolution_oracle(v, scale, (1, 1, 0))
    np.testing.assert_allclose(fourier, physical, atol=1e-10)


def test_energy_is_one_minus_multiplier(rng):
    fld = reflect_extend(rng.normal(size=(8, 8)))
    scale = AnisotropicScale(0.2, 0.1, 0.5)
    m = multiplier(fld, scale)
    e = torus_dirichlet_energy(fld, scale)
    assert e == pytest.approx(float(np.sum((1 - m) * np.abs(fld.coeffs) ** 2)), rel=1e-10)


def test_split_is_a_partition(rng):
    fld = reflect_extend(rng.normal(size=(8, 8)))
    low, high = low_high_split(fld, AnisotropicScale(0.5, 0.5, 0.5), 2.0)
    np.testing.assert_allclose((low + high).coeffs, fld.coeffs)
    assert low.inner(high) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValidationError):
        low_high_split(fld, AnisotropicScale(0.5, 0.5, 0.5), 0.0)


def test_split_constants_frozen():
    # derived from the scan of 1 - G_1 G_1: Upsilon_1 = 4 / (1/6) and the first radius where the
    # quadratic minorant fails
    c = split_constants((1, 1, 0))
    assert c.upsilon1 == pytest.approx(24.0)
    assert c.delta == pytest.approx(4.8, abs=0.02)
    assert c.upsilon2 == pytest.approx(1.05, abs=0.01)


def test_split_bounds_hold(rng):
    fld = reflect_extend(rng.normal(size=(16, 16)))
    r = split_bound_ratios(fld, AnisotropicScale(0.3, 0.3, 0.5))
    assert r["high_ratio"] <= r["upsilon2"] * (1 + 1e-9)
    assert r["low_ratio"] <= r["upsilon1"] * (1 + 1e-9)


def test_cube_torus_sandwich(rng):
    out = cube_torus_sandwich(rng.normal(size=(50, 50)), AnisotropicScale(0.2, 0.2, 0.5))
    # the two forms agree up to the window normalization ratio and a bounded constant
    assert out["volume_ratio"] == pytest.approx(math.pi / 4)
    assert 0.1 < out["lower"] < 10 and 0.1 < out["upper"] < 10


def test_to_csv_lists_nonzero_modes():
    c = np.zeros((4, 4), dtype=complex)
    c[1, 0] = 2.0
    text = TorusField(c, (1, 1, 0)).to_csv()
    lines = text.strip().splitlines()
    assert len(lines) == 2
    assert lines[1].startswith("1,0,")
