import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cuspwalk.errors import ValidationError
from cuspwalk.geometry import Box, DomainSpec, ModelCusp, cell_quadrature
from cuspwalk.measure import DensitySpec, audit_bounds, normalize, weighted_inner_product

SQUARE = DomainSpec(2, (Box((0.0, 0.0), (1.0, 1.0)),))


@given(st.floats(1.0, 3.0), st.floats(-0.4, 0.4), st.floats(-0.4, 0.4))
def test_normalized_mass_is_one(c0, s0, s1):
    dens = normalize(DensitySpec("affine", {"c0": c0, "slope": (s0, s1)}), SQUARE, spacing=0.05)
    q = cell_quadrature(SQUARE, 0.05)
    assert float(np.sum(dens(q.nodes) * q.weights)) == pytest.approx(1.0, rel=1e-12)
    # affine densities integrate exactly at cell centres: Z = c0 + (s0 + s1)/2
    assert dens.Z == pytest.approx(c0 + 0.5 * (s0 + s1), rel=1e-12)


def test_normalize_leaves_original_untouched():
    d = DensitySpec("constant", {"value": 3.0})
    n = normalize(d, ModelCusp(1.5).domain(), spacing=0.01)
    assert d.Z == 1.0 and not d.normalized
    assert n.normalized and n.Z == pytest.approx(3.0 * 0.8, rel=1e-10)


def test_gaussian_and_piecewise_values():
    g = DensitySpec("gaussian", {"mean": (0.0, 0.0), "sigma": 0.5})
    assert g(np.array([0.5, 0.0])) == pytest.approx(np.exp(-0.5))
    p = DensitySpec("piecewise", {"axis": 1, "threshold": 0.0, "below": 0.5, "above": 2.0}, smoothness="Measurable")
    np.testing.assert_allclose(p(np.array([[0.1, -0.1], [0.1, 0.1]])), [0.5, 2.0])


@pytest.mark.parametrize(
    "kwargs, path",
    [
        ({"family": "lognormal"}, "density.family"),
        ({"smoothness": "C2"}, "density.smoothness"),
        ({"lower": 0.5}, "density.m"),
        ({"lower": 2.0, "upper": 1.0}, "density.m"),
        ({"family": "piecewise", "params": {"below": 1.0, "above": 2.0}}, "density.smoothness"),
    ],
)
def test_density_validation_paths(kwargs, path):
    with pytest.raises(ValidationError) as exc:
        DensitySpec(**kwargs)
    assert exc.value.path == path


def test_audit_bounds():
    d = DensitySpec("affine", {"c0": 1.0, "slope": (1.0,)}, lower=1.0, upper=1.5)
    audit_bounds(d, np.array([[0.0], [0.5]]))
    with pytest.raises(ValidationError, match="leaves declared bounds"):
        audit_bounds(d, np.array([[0.0], [0.9]]))


def test_to_dict_round_trip():
    d = DensitySpec("affine", {"c0": 1.0, "slope": (0.5, 0.0)}, lower=0.5, upper=2.0)
    dd = d.to_dict()
    again = DensitySpec(dd["family"], dd["params"], dd["m"], dd["M"], dd["smoothness"])
    assert again == d


@given(st.lists(st.floats(-5, 5), min_size=4, max_size=4), st.lists(st.floats(-5, 5), min_size=4, max_size=4))
def test_weighted_inner_product_symmetric(u, v):
    rho = np.array([0.5, 1.0, 1.5, 2.0])
    w = np.array([0.1, 0.2, 0.3, 0.4])
    a = weighted_inner_product(np.array(u), np.array(v), rho, w)
    b = weighted_inner_product(np.array(v), np.array(u), rho, w)
    assert a == pytest.approx(b, abs=1e-12)
    with pytest.raises(ValidationError):
        weighted_inner_product(np.array(u), np.array(v[:3]), rho, w)
