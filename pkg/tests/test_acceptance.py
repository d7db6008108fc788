"""Acceptance criteria 1 to 10, each at its stated tolerance.

Every test records one PASS/FAIL line (shown in the terminal summary) before
asserting, so a failing criterion still reports what it measured.
"""

import math
import time

import numpy as np
import pytest

from cuspwalk.cli import sample_histograms
from cuspwalk.decomposition import (
    AnisotropicSobolevParams,
    TraceField,
    decompose_low_energy,
    glue_from_theta,
    glue_h1,
    random_glue_inputs,
)
from cuspwalk.geometry import Box, DomainSpec, ModelCusp
from cuspwalk.kernel import assemble_operator, dirichlet_form, run_chains
from cuspwalk.measure import DensitySpec
from cuspwalk.spectral import (
    eigen_top,
    gap_with_error,
    rescaled_spectrum,
    spectral_gap,
    spectrum_localization_check,
    tv_decay,
)
from cuspwalk.torus import g_multiplier, quadratic_coefficient

UNIFORM = DensitySpec("constant")
UNIT = DomainSpec(1, (Box((0.0,), (1.0,)),))
SQUARE = DomainSpec(2, (Box((0.0, 0.0), (1.0, 1.0)),))
CUSP = ModelCusp(1.5)


def test_criterion_01_gap_constant_1d(record_criterion):
    t0 = time.perf_counter()
    h = 0.02
    g, err, _ = gap_with_error(UNIT, UNIFORM, h, grid_ratio=20)
    elapsed = time.perf_counter() - t0
    target = math.pi**2 / 6
    val = g / h**2
    ok = abs(val / target - 1) <= 0.05 and elapsed < 60
    record_criterion(1, ok, f"g/h^2 = {val:.5f} +- {err / h**2:.1e} (target {target:.5f}), {elapsed:.1f}s")
    assert ok


def test_criterion_02_multiplicity_square(record_criterion):
    t0 = time.perf_counter()
    op = assemble_operator(SQUARE, UNIFORM, 0.1, grid_ratio=10)
    resc, clusters = rescaled_spectrum(op, R=4.0)
    elapsed = time.perf_counter() - t0
    target = math.pi**2 / 8
    window = resc[np.abs(resc / target - 1) <= 0.10]
    beyond = resc[resc > target * 1.10]
    ok = len(window) == 2 and len(beyond) > 0 and beyond[0] > 1.5 * window.max() and elapsed < 300
    record_criterion(2, ok, f"{len(window)} values in the window ({np.round(window, 4).tolist()}), "
                            f"next {beyond[0]:.4f} (target {target:.4f}), {elapsed:.1f}s")
    assert ok


def test_criterion_03_cusp_localization(record_criterion):
    ops = [assemble_operator(CUSP.domain(), UNIFORM, h, grid_ratio=5) for h in (0.2, 0.1, 0.05, 0.025)]
    res = spectrum_localization_check(ops, gamma=0.5)
    ok = 0.4 <= res["slope"] <= 0.6 and res["c_min"] > 0
    record_criterion(3, ok, f"slope {res['slope']:.4f} in [0.4, 0.6]; min eig >= -1 + c h^0.5 with c = {res['c_min']:.3f}")
    assert ok


def test_criterion_04_cusp_gap_scaling(record_criterion):
    dens = DensitySpec("piecewise", {"axis": 1, "threshold": 0.0, "below": 0.5, "above": 2.0},
                       lower=0.5, upper=2.0, smoothness="Measurable")
    # the cusp has area 0.8 split evenly by x_2 = 0, so the exact mass is 0.4 * 2 + 0.4 * 0.5 = 1;
    # pinning Z = 1 keeps the declared bounds exact instead of off by the grid's mass error
    dens = dens.with_Z(1.0)
    vals = []
    for h in (0.1, 0.07, 0.05):
        op = assemble_operator(CUSP.domain(), dens, h, grid_ratio=10)
        vals.append(spectral_gap(op) / h**2)
    ratio = max(vals) / min(vals)
    ok = ratio <= 1.5
    record_criterion(4, ok, f"g/h^2 = {np.round(vals, 4).tolist()}, band factor {ratio:.3f} <= 1.5")
    assert ok


@pytest.mark.slow
def test_criterion_05_tv_law(record_criterion):
    details, ok = [], True
    for name, dom, ratio in (("1D", UNIT, 10), ("cusp", CUSP.domain(), 5)):
        reps = [tv_decay(assemble_operator(dom, UNIFORM, h, grid_ratio=ratio)) for h in (0.1, 0.05)]
        rate_err = max(abs(r.fitted_rate - r.gap) / r.gap for r in reps)
        cs = [r.bound_constant for r in reps]
        c_ratio = max(cs) / min(cs)
        ok &= rate_err <= 0.10 and c_ratio <= 3.0
        details.append(f"{name}: rate err {rate_err:.3f}, C = {cs[0]:.4f}/{cs[1]:.4f} (ratio {c_ratio:.2f})")
    record_criterion(5, ok, "; ".join(details))
    assert ok


def test_criterion_06_multiplier_expansion(record_criterion):
    errs = {n: abs(quadratic_coefficient(n) / (math.pi**2 / (2 * (n + 2))) - 1) for n in (1, 2, 3)}
    g11 = abs(g_multiplier(1, 1.0))
    xi = np.linspace(0.0, 30.0, 601)
    gmax = max(float(np.max(np.abs(g_multiplier(n, xi)))) for n in (1, 2, 3, 4))
    ok = max(errs.values()) <= 1e-3 and g11 <= 1e-10 and gmax <= 1.0 + 1e-12
    record_criterion(6, ok, f"max rel err {max(errs.values()):.1e}, |G_1(1)| = {g11:.1e}, max|G_n| = {gmax:.6f}")
    assert ok


def test_criterion_07_dirichlet_form_limit(record_criterion):
    h = 0.01
    op = assemble_operator(UNIT, UNIFORM, h, grid_ratio=20)
    val = dirichlet_form(op, np.cos(math.pi * op.nodes[:, 0])) / h**2
    target = math.pi**2 / 12
    ok = abs(val / target - 1) <= 0.02
    record_criterion(7, ok, f"h^-2 E_h(cos pi x) = {val:.5f} (target {target:.5f}, rel {val / target - 1:+.2%})")
    assert ok


def test_criterion_08_gluing_suite(record_criterion):
    lam = AnisotropicSobolevParams(4.0, 4.0, 1.0)
    rng = np.random.default_rng(8)
    per_h, resid, lin = {}, 0.0, 0.0
    for h in (0.05, 0.025, 0.0125):
        worst = 0.0
        thetas = []
        for _ in range(20):
            phi0, phi1, phi2, r2 = random_glue_inputs(rng, h, lam)
            g = glue_h1(phi0, phi1, phi2, r2, lam=lam, h=h, normalize=True)
            worst = max(worst, g.h1_ratio, g.l2_ratio)
            resid = max(resid, g.trace_residual)
            thetas.append(g.theta)
        per_h[h] = worst
        # linearity in theta: psi(a t1 + b t2) = a psi(t1) + b psi(t2)
        x1 = (np.arange(32) + 0.5) / 32
        t1, t2 = thetas[0], thetas[1]
        a, b = 0.7, -1.9
        mix = TraceField(a * t1.coeffs + b * t2.coeffs, t1.dims)
        p_mix = glue_from_theta(mix, x1, 0.0, h, lam)[0]
        p_sum = a * glue_from_theta(t1, x1, 0.0, h, lam)[0] + b * glue_from_theta(t2, x1, 0.0, h, lam)[0]
        lin = max(lin, float(np.max(np.abs(p_mix - p_sum))))
    upsilon = max(per_h.values())
    ok = resid < 1e-8 and upsilon <= 1.0 and lin < 1e-12
    record_criterion(8, ok, f"trace residual {resid:.1e}, Upsilon = {upsilon:.4f} "
                            f"(per h {[round(v, 4) for v in per_h.values()]}), linearity {lin:.1e}")
    assert ok


def test_criterion_09_decomposition_suite(record_criterion):
    c0, collar, recon, counts = [], [], 0.0, []
    hs = (0.1, 0.05)
    for h in hs:
        op = assemble_operator(CUSP.domain(), UNIFORM, h, grid_ratio=5)
        vals, vecs, _ = eigen_top(op, 24)
        keep = [i for i in range(1, len(vals)) if vals[i] >= 1 - 10 * h * h]
        assert keep and keep[-1] < len(vals) - 1, "raise the eigenpair count"
        reps = [decompose_low_energy(op, vecs[:, i]) for i in keep]
        c0.append(max(max(r.l2_fH / h, r.grad_fL) for r in reps))
        collar.append(reps[0].collar_max_x1)
        recon = max(recon, max(r.reconstruction_residual for r in reps))
        counts.append(len(keep))
    c_ratio = max(c0) / min(c0)
    slope = math.log(collar[0] / collar[1]) / math.log(hs[0] / hs[1])
    ok = c_ratio <= 2.0 and abs(slope - 1 / CUSP.alpha) <= 0.1 and recon < 1e-8
    record_criterion(9, ok, f"{counts} eigenvectors, C0 = {np.round(c0, 3).tolist()} (ratio {c_ratio:.2f}), "
                            f"collar slope {slope:.3f} vs 1/alpha = {1 / CUSP.alpha:.3f}, reconstruction {recon:.1e}")
    assert ok


def test_criterion_10_chain_sampler(record_criterion):
    h = 0.1
    op = assemble_operator(UNIT, UNIFORM, h, grid_ratio=10)
    n_steps = int(math.ceil(50 / spectral_gap(op)))
    runs = [run_chains(UNIT, UNIFORM, h, n_steps, 10_000, seed=1234)[0] for _ in range(2)]
    _, emp, stat = sample_histograms(op, runs[0], bins=20)
    tv = 0.5 * float(np.abs(emp - stat).sum())
    same = np.array_equal(runs[0], runs[1])
    ok = tv < 0.05 and same
    record_criterion(10, ok, f"TV = {tv:.4f} < 0.05 after {n_steps} steps x 10^4 chains, deterministic: {same}")
    assert ok
