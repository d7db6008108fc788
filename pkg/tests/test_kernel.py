import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cuspwalk.errors import ValidationError
from cuspwalk.geometry import Box, DomainSpec, ModelCusp, contains, unit_ball_volume
from cuspwalk.kernel import (
    AnisotropicScale,
    anisotropic_dirichlet_form,
    apply_operator,
    assemble_operator,
    chain_step,
    dirichlet_form,
    dirichlet_form_double_sum,
    kernel_density,
    lattice_ball_volume,
    rejection_mass,
    run_chains,
)
from cuspwalk.measure import DensitySpec

UNIT = DomainSpec(1, (Box((0.0,), (1.0,)),))
SQUARE = DomainSpec(2, (Box((0.0, 0.0), (1.0, 1.0)),))
UNIFORM = DensitySpec("constant")


def test_kernel_density_profile():
    h = 0.1
    assert kernel_density([0.5, 0.5], [0.55, 0.5], h, UNIFORM) == pytest.approx(1 / (math.pi * h * h))
    assert kernel_density([0.5, 0.5], [0.61, 0.5], h, UNIFORM) == 0.0
    rho = DensitySpec("affine", {"c0": 1.0, "slope": (1.0,)})
    # uphill moves are always accepted, downhill ones with probability rho(y)/rho(x)
    assert kernel_density([0.2], [0.25], h, rho) == pytest.approx(1 / (2 * h))
    assert kernel_density([0.25], [0.2], h, rho) == pytest.approx(1.2 / 1.25 / (2 * h))
    with pytest.raises(ValidationError):
        kernel_density([2.0], [2.01], h, UNIFORM, domain=UNIT)


def test_rejection_mass_1d_oracle():
    # uniform density: m(x) = 1 - |(x-h, x+h) meet (0, 1)| / (2h)
    h = 0.1
    assert rejection_mass([0.5], h, UNIT, UNIFORM) == pytest.approx(0.0, abs=1e-12)
    assert rejection_mass([0.0], h, UNIT, UNIFORM) == pytest.approx(0.5, abs=1e-12)
    assert rejection_mass([0.04], h, UNIT, UNIFORM) == pytest.approx(0.3, abs=1e-12)


def test_rejection_mass_2d_corner():
    assert rejection_mass([0.0, 0.0], 0.1, SQUARE, UNIFORM) == pytest.approx(0.75, abs=1e-8)


@given(st.floats(0.12, 0.4), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_detailed_balance_and_stochasticity(h, s0, s1):
    dens = DensitySpec("affine", {"c0": 1.0, "slope": (s0, s1)})
    op = assemble_operator(SQUARE, dens, h, grid_ratio=5)
    P = op.matrix()
    np.testing.assert_allclose(np.asarray(P.sum(axis=1)).ravel(), 1.0, atol=1e-12)
    assert np.all(op.m >= 0)
    D = op.rho * op.weights
    flux = P.multiply(D[:, None]).tocsr()
    assert abs(flux - flux.T).max() <= 1e-15


def test_interior_full_cells_have_zero_rejection():
    op = assemble_operator(SQUARE, UNIFORM, 0.1, grid_ratio=10)
    lo, hi = 0.1 + 1e-9, 0.9 - 1e-9
    interior = np.all((op.nodes > lo) & (op.nodes < hi), axis=1)
    assert interior.sum() > 0
    np.testing.assert_allclose(op.m[interior], 0.0, atol=1e-12)


def test_lattice_ball_volume_1d():
    # offsets -10..10 strictly inside plus the two ties counted one half
    assert lattice_ball_volume(0.1, 0.01, 1) == pytest.approx(20 * 0.01)


def test_grid_ratio_guard():
    with pytest.raises(ValidationError, match="below 5"):
        assemble_operator(UNIT, UNIFORM, 0.1, grid_ratio=4)


@given(st.lists(st.floats(-3, 3), min_size=50, max_size=50))
def test_dirichlet_form_two_ways(vals):
    op = assemble_operator(UNIT, DensitySpec("affine", {"c0": 1.0, "slope": (0.7,)}), 0.1, grid_ratio=5)
    f = np.resize(np.array(vals), op.size)
    a = dirichlet_form(op, f)
    b = dirichlet_form_double_sum(op, f)
    assert a == pytest.approx(b, rel=1e-10, abs=1e-12)
    assert a >= -1e-12
    assert dirichlet_form(op, np.ones(op.size)) == pytest.approx(0.0, abs=1e-13)


def test_apply_operator_shapes():
    op = assemble_operator(UNIT, UNIFORM, 0.1, grid_ratio=5)
    U = np.random.default_rng(0).normal(size=(op.size, 3))
    np.testing.assert_allclose(apply_operator(op, U)[:, 1], apply_operator(op, U[:, 1]))
    with pytest.raises(ValidationError):
        apply_operator(op, np.ones(op.size + 1))


def test_chains_deterministic_and_inside():
    dom = ModelCusp(1.5).domain()
    a, tr = run_chains(dom, UNIFORM, 0.1, 200, 300, seed=5, x0=[0.5, 0.0], record_chain=7, batch=128)
    b, _ = run_chains(dom, UNIFORM, 0.1, 200, 300, seed=5, x0=[0.5, 0.0], batch=128)
    np.testing.assert_array_equal(a, b)
    assert np.all(contains(dom, a))
    steps, coords, acc = tr
    assert coords.shape == (201, 2) and np.all(contains(dom, coords))
    # rejected steps leave the chain in place
    moved = np.any(coords[1:] != coords[:-1], axis=1)
    np.testing.assert_array_equal(moved, acc[1:])
    with pytest.raises(ValidationError):
        run_chains(dom, UNIFORM, 0.1, 1, 1, seed=0, x0=[0.5, 0.9])


def test_chain_step_rejects_outside():
    rng = np.random.default_rng(1)
    x = np.array([1e-6])
    for _ in range(50):
        y, acc, rng = chain_step(x, 0.1, UNIT, UNIFORM, rng)
        assert contains(UNIT, y)
        assert acc == (y[0] != x[0])
        x = y


def test_anisotropic_form_constant_and_linear():
    n = 40
    x = (np.arange(n) + 0.5) / n
    scale = AnisotropicScale(0.25, 0.25, 0.25)
    assert anisotropic_dirichlet_form(np.ones((n, n)), 1 / n, scale) == 0.0
    # f = x_1 on the unit square with the product window: with u = x - y distributed as
    # (1 - |u|) on (-1, 1), E = A B / (2 V_2 h^2), A = 2 (h^3/3 - h^4/4), B = 2 (h - h^2/2)
    h = 0.25
    f = np.repeat(x[:, None], n, axis=1)
    exact = 2 * (h**3 / 3 - h**4 / 4) * 2 * (h - h * h / 2) / (2 * math.pi * h * h)
    assert anisotropic_dirichlet_form(f, 1 / n, scale) == pytest.approx(exact, rel=1e-2)
    with pytest.raises(ValidationError, match="too coarse"):
        anisotropic_dirichlet_form(f, 1 / n, AnisotropicScale(0.1, 0.1, 0.1))


def test_uniform_operator_volume_identity():
    # sum_j K_ij = |B(x_i, h) meet grid| / c, which is at most 1
    op = assemble_operator(UNIT, UNIFORM, 0.1, grid_ratio=10)
    assert op.ball_volume == pytest.approx(lattice_ball_volume(0.1, 0.01, 1))
    assert unit_ball_volume(1) * 0.1 == pytest.approx(op.ball_volume)
