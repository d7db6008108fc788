import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cuspwalk.errors import AssumptionViolation, ValidationError
from cuspwalk.geometry import (
    Box,
    CuspChart,
    DomainSpec,
    DyadicSlab,
    ModelCusp,
    ball_volume_theta,
    boundary_distance,
    box_volume_W,
    cell_quadrature,
    contains,
    dyadic_jacobian,
    dyadic_map_tau,
    dyadic_map_tau_inverse,
    gamma_exponent,
    in_closure,
    nu_map,
    nu_map_inverse,
    sigma_map,
    straighten_theta,
    straighten_theta_inverse,
    unit_ball_volume,
)

SQUARE = DomainSpec(2, (Box((0.0, 0.0), (1.0, 1.0)),))


@pytest.mark.parametrize("n, vol", [(0, 1.0), (1, 2.0), (2, math.pi), (3, 4 * math.pi / 3), (4, math.pi**2 / 2)])
def test_unit_ball_volume(n, vol):
    assert unit_ball_volume(n) == pytest.approx(vol, rel=1e-14)


def test_box_rejects_degenerate_corners():
    with pytest.raises(ValidationError):
        Box((0.0, 1.0), (1.0, 1.0))
    with pytest.raises(ValidationError):
        Box((0.0,), (1.0, 2.0))


def test_gamma_and_assumption():
    assert gamma_exponent(SQUARE) == 0.0
    assert ModelCusp(1.5).domain().gamma == pytest.approx(0.5)
    assert ModelCusp(1.25, d_prime=2).domain().gamma == pytest.approx(0.5)
    with pytest.raises(AssumptionViolation):
        ModelCusp(3.5).domain()
    with pytest.raises(ValidationError):
        ModelCusp(1.0)


def test_chart_dimension_must_match():
    with pytest.raises(ValidationError, match="differs from ambient"):
        DomainSpec(3, (), (CuspChart(1.5),))


@given(st.floats(1.1, 2.9), st.integers(20, 80))
def test_planar_cusp_area_exact(alpha, cells):
    # area of {0 < x < 1, |y| < x^alpha} is 2 / (alpha + 1)
    q = cell_quadrature(ModelCusp(alpha).domain(), 1.0 / cells)
    assert q.exact
    assert q.weights.sum() == pytest.approx(2.0 / (alpha + 1.0), rel=1e-11)
    assert np.all(contains(ModelCusp(alpha).domain(), q.nodes))


def test_cell_quadrature_on_square_is_uniform():
    q = cell_quadrature(SQUARE, 0.1)
    assert q.size == 100
    np.testing.assert_allclose(q.weights, 0.01)


@given(st.floats(0.05, 0.95), st.floats(-0.999, 0.999), st.floats(1.001, 3.0))
def test_cusp_membership_matches_inequality(x1, frac, out):
    # stay off the boundary itself, where the sign is a rounding question
    dom = ModelCusp(1.5).domain()
    assert contains(dom, np.array([x1, frac * x1**1.5]))
    assert not contains(dom, np.array([x1, out * x1**1.5]))
    assert not contains(dom, np.array([x1, -out * x1**1.5]))


def test_in_closure_accepts_the_tip():
    dom = ModelCusp(1.5).domain()
    assert not contains(dom, np.array([0.0, 0.0]))
    assert in_closure(dom, np.array([0.0, 0.0]))
    assert not in_closure(dom, np.array([-0.1, 0.0]))


def test_ball_volume_interior_and_corner():
    h = 0.05
    v, _ = ball_volume_theta(SQUARE, np.array([0.5, 0.5]), h)
    assert v == pytest.approx(math.pi * h * h, rel=1e-9)
    v, _ = ball_volume_theta(SQUARE, np.array([1e-12, 1e-12]), h)
    assert v == pytest.approx(math.pi * h * h / 4, rel=1e-6)


def test_box_volume_W_interior_oracle():
    # far from the lateral surface the window is a full square of side 2h
    m = ModelCusp(1.5)
    h = 0.01
    assert box_volume_W(m, 0.9, [0.0], h) == pytest.approx(4 * h * h, rel=1e-12)
    # at the tip the window sees the cusp area up to x_1 = h, which is 2 h^{alpha+1}/(alpha+1)
    assert box_volume_W(m, 0.0, [0.0], h) == pytest.approx(2 * h**2.5 / 2.5, rel=1e-9)


def test_boundary_distance_square():
    d = boundary_distance(SQUARE, np.array([[0.3, 0.5], [0.9, 0.5]]))
    np.testing.assert_allclose(d, [0.3, 0.1])
    with pytest.raises(ValidationError):
        boundary_distance(SQUARE, np.array([1.5, 0.5]))


@given(st.integers(0, 5), st.floats(0.0, 1.0), st.floats(-0.99, 0.99))
def test_dyadic_tau_round_trip(k, s, t):
    m = ModelCusp(1.5)
    x1 = 2.0 ** (-k - 1) * (1.0 + 0.98 * s + 0.01)
    x = np.array([[x1, t * x1**1.5]])
    y = dyadic_map_tau(m, k, x)
    assert DyadicSlab(0, m).contains(y[0])
    np.testing.assert_allclose(dyadic_map_tau_inverse(m, k, y), x, rtol=1e-13)
    np.testing.assert_allclose(straighten_theta_inverse(m, straighten_theta(m, x)), x, rtol=1e-13)
    # sigma_k lands in B_0 = (1/2, 1) x (-1, 1)
    z = sigma_map(m, k, x)[0]
    assert 0.5 <= z[0] <= 1.0 and abs(z[1]) < 1.0


def test_tau_rejects_points_outside_slab():
    with pytest.raises(ValidationError):
        dyadic_map_tau(ModelCusp(1.5), 2, np.array([[0.6, 0.0]]))


def test_dyadic_jacobian():
    m = ModelCusp(1.5, 1, 1)
    assert dyadic_jacobian(m, 3) == pytest.approx(2.0 ** (3 * 2.5))


@given(st.integers(0, 3), st.floats(0.26, 0.99), st.floats(-0.9, 0.9))
def test_nu_round_trip(k, x1, t):
    m = ModelCusp(1.5)
    x = np.array([[4.0**-k * x1, t * (4.0**-k * x1) ** 1.5]])
    np.testing.assert_allclose(nu_map_inverse(m, k, nu_map(m, k, x)), x, rtol=1e-12, atol=1e-15)
