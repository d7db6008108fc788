"""Constructive analysis on the model cusp.

Four pieces live here:

* the dyadic norm identities, computed on both sides by quadrature;
* anisotropic Sobolev norms and the trace operator on the torus;
* the H^1 gluing construction that removes a trace jump at an interface;
* the low-energy decomposition f = f_C + f_L + f_H of a grid field.

Frequency convention: a torus mode exp(i pi k x) has angular frequency
pi k, and the Sobolev weight is <lambda . pi k>.  With this choice the
H^1_lambda norm equals ||f||^2 + sum_i lambda_i^2 ||d_i f||^2 exactly.

Slab fields are sampled at cell centres of (a, b) x (0, 1)^{d-1}.  Every
norm reported for them is over that cube slab; the torus version of the
same norm is larger by 2^{(d-1)/2}.
"""

from __future__ import annotations

import csv
import functools
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, ndimage
from scipy.interpolate import RegularGridInterpolator

from .errors import AssumptionViolation, ValidationError
from .geometry import CellQuadrature, DomainSpec, ModelCusp
from .kernel import AnisotropicScale, DiscretizedOperator, dirichlet_form
from .torus import TorusField, low_high_split, reflect_extend, restrict, split_constants

__all__ = [
    "AnisotropicSobolevParams",
    "TraceField",
    "TraceResult",
    "CutoffProfile",
    "GlueResult",
    "DyadicNormRecord",
    "DecompositionConfig",
    "DecompositionReport",
    "sobolev_norm",
    "trace",
    "slab_h1_norm",
    "glue_h1",
    "dyadic_norm_identity_check",
    "decompose_low_energy",
    "pipeline_threshold",
    "random_glue_inputs",
    "glue_from_theta",
]


# ---------------------------------------------------------------------------
# anisotropic Sobolev norms and traces


@dataclass(frozen=True)
class AnisotropicSobolevParams:
    """Weights lambda = (lambda_1, lambda', lambda'') and the order s."""

    lambda1: float
    lambda_prime: float
    lambda_doubleprime: float = 1.0
    s: float = 1.0

    def __post_init__(self):
        for name in ("lambda1", "lambda_prime", "lambda_doubleprime"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive", name)

    def axis_weights(self, dims: tuple[int, int, int]) -> np.ndarray:
        """lambda_i for each coordinate axis of a (1, d', d'') field."""
        return np.array([self.lambda1] + [self.lambda_prime] * dims[1] + [self.lambda_doubleprime] * dims[2])


def _bracket_sq(freqs: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    """<lambda . pi k>^2 on a frequency mesh."""
    out = np.ones_like(np.asarray(freqs[0], dtype=float))
    for k, lam in zip(freqs, weights):
        out = out + (lam * math.pi * k) ** 2
    return out


def sobolev_norm(field: TorusField, params: AnisotropicSobolevParams) -> float:
    """|| <lambda . pi k>^s hat f(k) ||_{l^2} on the torus."""
    w2 = _bracket_sq(field.freq_mesh(), params.axis_weights(field.dims))
    return float(np.sqrt(np.sum(w2**params.s * np.abs(field.coeffs) ** 2)))


@dataclass(frozen=True)
class TraceField:
    """Coefficients of a field on the transverse torus Pi^{d-1}, FFT order.

    ``dims`` is the transverse split (d', d'').  The basis is
    2^{-(d-1)/2} exp(i pi <k~, x~>) as for :class:`TorusField`.
    """

    coeffs: np.ndarray
    dims: tuple[int, int]

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        object.__setattr__(self, "coeffs", c)
        if c.ndim != sum(self.dims):
            raise ValidationError(f"transverse dims {self.dims} do not match {c.ndim} axes")

    def freq_mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*[np.fft.fftfreq(s, 1.0 / s) for s in self.coeffs.shape], indexing="ij")

    def axis_weights(self, lam_prime: float, lam_doubleprime: float) -> list[float]:
        return [lam_prime] * self.dims[0] + [lam_doubleprime] * self.dims[1]

    def bracket(self, lam_prime: float, lam_doubleprime: float) -> np.ndarray:
        """<(lambda' pi k', lambda'' pi k'')> on the coefficient mesh."""
        return np.sqrt(_bracket_sq(self.freq_mesh(), self.axis_weights(lam_prime, lam_doubleprime)))

    def sobolev_norm(self, lam_prime: float, lam_doubleprime: float, s: float) -> float:
        w = self.bracket(lam_prime, lam_doubleprime) ** (2.0 * s)
        return float(np.sqrt(np.sum(w * np.abs(self.coeffs) ** 2)))

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.coeffs) ** 2)))

    def to_cube_grid(self) -> np.ndarray:
        """Real samples at the cell centres of (0, 1)^{d-1}."""
        return restrict(TorusField(self.coeffs, None))


@dataclass(frozen=True)
class TraceResult:
    """Trace on {x_1 = a} plus the measured trace-bound constant.

    ``bound_constant`` is ||gamma_a phi||_{H^{s-1/2}} lambda_1^{1/2} / ||phi||_{H^s};
    it is only evaluated for fields whose x_1-mean vanishes.
    """

    field: TraceField
    a: float
    bound_constant: float | None


def trace(field: TorusField, a: float, params: AnisotropicSobolevParams | None = None,
          mean_tol: float = 1e-12) -> TraceResult:
    """gamma_a phi = 2^{-1/2} sum_{k_1} exp(i pi k_1 a) hat phi(k_1, k~), as transverse coefficients."""
    params = params or AnisotropicSobolevParams(1.0, 1.0, 1.0, 1.0)
    if params.s <= 0.5:
        raise ValidationError(f"the trace needs s > 1/2, got s = {params.s:g}", "params.s")
    if not (0.0 <= a < 2.0):
        raise ValidationError("the trace position must lie in [0, 2)", "a")
    if field.dim < 2:
        raise ValidationError("the trace needs at least two dimensions")
    c = field.coeffs
    k1 = np.fft.fftfreq(c.shape[0], 1.0 / c.shape[0])
    ph = np.exp(1j * math.pi * k1 * a).reshape([-1] + [1] * (c.ndim - 1))
    coeffs = np.sum(ph * c, axis=0) / math.sqrt(2.0)
    tf = TraceField(coeffs, (field.dims[1], field.dims[2]))
    const = None
    total = float(np.sqrt(np.sum(np.abs(c) ** 2)))
    if total > 0 and float(np.sqrt(np.sum(np.abs(c[0]) ** 2))) <= mean_tol * total:
        num = tf.sobolev_norm(params.lambda_prime, params.lambda_doubleprime, params.s - 0.5)
        const = num * math.sqrt(params.lambda1) / sobolev_norm(field, params)
    return TraceResult(tf, float(a), const)


def slab_h1_norm(values, a: float, b: float, lam: AnisotropicSobolevParams, dims=None) -> float:
    """H^1_lambda norm over the cube slab (a, b) x (0, 1)^{d-1}.

    The samples are extended evenly and differentiated spectrally, so the
    result is the norm of the cosine interpolant.
    """
    v = np.asarray(values, dtype=float)
    fld = reflect_extend(v, dims)
    L = b - a
    w = lam.axis_weights(fld.dims).astype(float)
    w[0] = w[0] / L
    br = _bracket_sq(fld.freq_mesh(), w)
    return float(np.sqrt(L * np.sum(br * np.abs(fld.coeffs) ** 2) / 2.0**fld.dim))


# ---------------------------------------------------------------------------
# the gluing construction


@dataclass(frozen=True)
class CutoffProfile:
    """rho(t) = exp(1 - 1/(1 - (2t)^p)) on [0, 1/2), zero beyond; rho(0) = 1.

    ``p`` is an even integer; p = 2 is the default bump.
    """

    p: int = 2

    def __post_init__(self):
        if self.p < 2 or self.p % 2:
            raise ValidationError("the profile exponent must be an even integer >= 2", "profile.p")

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        u = (2.0 * t) ** self.p
        inside = (t >= 0) & (t < 0.5)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            val = np.exp(1.0 - 1.0 / (1.0 - u))
        return np.where(inside, val, 0.0)

    def derivative(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        inside = (t > 0) & (t < 0.5)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            u = (2.0 * t) ** self.p
            du = 2.0 * self.p * (2.0 * t) ** (self.p - 1)
            val = np.exp(1.0 - 1.0 / (1.0 - u)) * (-du / (1.0 - u) ** 2)
        return np.where(inside, val, 0.0)

    @functools.cached_property
    def norms_sq(self) -> tuple[float, float]:
        """(||rho||^2, ||rho'||^2) over [0, 1/2]."""
        a = integrate.quad(lambda t: float(self(t)) ** 2, 0.0, 0.5, epsabs=1e-14, limit=200)[0]
        b = integrate.quad(lambda t: float(self.derivative(t)) ** 2, 0.0, 0.5, epsabs=1e-14, limit=200)[0]
        return a, b


@dataclass(frozen=True)
class GlueResult:
    """Output of :func:`glue_h1`.

    ``psi`` holds samples on the A_1 grid.  ``l2`` and ``h1`` are exact norms
    of the construction over the cube slab; ``scale`` is the homogeneity
    factor s and ``l2_ratio = l2 / (s h)``, ``h1_ratio = h1 / s`` are the
    quantities bounded by Upsilon.
    """

    psi: np.ndarray
    theta: TraceField
    psi_hat_at_b: np.ndarray
    support: tuple[float, float]
    l2: float
    h1: float
    scale: float
    l2_ratio: float
    h1_ratio: float
    trace_residual: float
    low_modes: int
    high_modes: int
    audited: tuple[str, ...]


def _slab_trace(values, at_end: bool, dims=None) -> TraceField:
    fld = reflect_extend(np.asarray(values, dtype=float), dims)
    return trace(fld, 1.0 if at_end else 0.0).field


def _psi_scales(theta: TraceField, h: float, lam: AnisotropicSobolevParams) -> tuple[np.ndarray, np.ndarray]:
    """Per-mode profile width s_k and the low-mode mask."""
    br = theta.bracket(lam.lambda_prime, lam.lambda_doubleprime)
    low = br < 1.0 / h
    s = np.where(low, h * lam.lambda1, lam.lambda1 / br)
    return s, low


def _psi_norms(theta: TraceField, s: np.ndarray, lam: AnisotropicSobolevParams, profile: CutoffProfile):
    """Exact cube-slab norms of psi from the separable construction."""
    r2, dr2 = profile.norms_sq
    a2 = np.abs(theta.coeffs) ** 2
    cube = 2.0 ** (-theta.coeffs.ndim)
    K = theta.freq_mesh()
    tw = theta.axis_weights(lam.lambda_prime, lam.lambda_doubleprime)
    trans = sum((w * math.pi * k) ** 2 for k, w in zip(K, tw))
    l2 = cube * np.sum(a2 * s * r2)
    d1 = cube * np.sum(a2 * lam.lambda1**2 * dr2 / s)
    dt = cube * np.sum(a2 * trans * s * r2)
    return math.sqrt(l2), math.sqrt(l2 + d1 + dt)


def _psi_on_grid(theta: TraceField, s: np.ndarray, x1: np.ndarray, b: float, profile: CutoffProfile) -> np.ndarray:
    rows = []
    for x in x1:
        coef = profile((x - b) / s) * theta.coeffs
        rows.append(TraceField(coef, theta.dims).to_cube_grid() if np.any(coef) else
                    np.zeros([n // 2 for n in theta.coeffs.shape]))
    return np.stack(rows, 0)


def _cell_centres(a: float, b: float, n: int) -> np.ndarray:
    return a + (b - a) * (np.arange(n) + 0.5) / n


def glue_h1(phi0, phi1, phi2=None, r2=None, *, lam: AnisotropicSobolevParams, h: float,
            a: float = -1.0, b: float = 0.0, c: float = 1.0, dims=None,
            profile: CutoffProfile | None = None, normalize: bool = False,
            audit: bool = True, tol: float = 1e-9) -> GlueResult:
    """Build psi on A_1 = (b, c) with psi|_{x_1=b} = phi0|_{x_1=b} - phi1|_{x_1=b}.

    ``phi0`` is sampled on A_0 = (a, b) and ``phi1`` on A_1, both at cell
    centres with the cube (0, 1)^{d-1} as transverse section.  ``phi2`` and
    ``r2`` live on the concatenated A_0 then A_1 grid; when given, the
    identity 1_{A_0} phi0 + 1_{A_1} phi1 = phi2 + r2 is audited.

    Hypotheses: ||phi_j||_{H^1_lambda} <= 1, ||r2|| <= h and lambda_1 h < c - b
    (so the profile support, at most h lambda_1 / 2, stays inside A_1).
    With ``normalize`` the inputs are divided by
    s = max(||phi_j||_{H^1_lambda}, ||r2|| / h) before the audit; psi is
    linear in the jump, so the construction itself does not change.
    """
    profile = profile or CutoffProfile()
    phi0 = np.asarray(phi0, dtype=float)
    phi1 = np.asarray(phi1, dtype=float)
    if phi0.ndim < 2 or phi0.shape[1:] != phi1.shape[1:]:
        raise ValidationError("phi0 and phi1 need matching transverse grids and d >= 2")
    if not (a < b < c):
        raise ValidationError("slab endpoints must satisfy a < b < c")
    if not h > 0:
        raise ValidationError("h must be positive", "h")
    if lam.lambda1 * h >= (c - b):
        raise AssumptionViolation(
            f"lambda_1 h = {lam.lambda1 * h:.4g} is not below the threshold h_1 = {c - b:.4g}", "h")

    norms = {"phi0": slab_h1_norm(phi0, a, b, lam, dims), "phi1": slab_h1_norm(phi1, b, c, lam, dims)}
    audited = ["phi0", "phi1"]
    if (phi2 is None) != (r2 is None):
        raise ValidationError("give both phi2 and r2 or neither")
    if phi2 is not None:
        phi2 = np.asarray(phi2, dtype=float)
        r2 = np.asarray(r2, dtype=float)
        whole = np.concatenate([phi0, phi1], 0)
        if phi2.shape != whole.shape or r2.shape != whole.shape:
            raise ValidationError("phi2 and r2 must be sampled on the concatenated A_0, A_1 grid")
        if not np.allclose(phi2 + r2, whole, rtol=tol, atol=tol * max(1.0, float(np.abs(whole).max()))):
            raise AssumptionViolation("f = 1_{A0} phi0 + 1_{A1} phi1 differs from phi2 + r2", "r2")
        # phi2 on the non-uniform concatenated grid: measure it on the two halves
        norms["phi2"] = math.hypot(slab_h1_norm(phi2[: len(phi0)], a, b, lam, dims),
                                   slab_h1_norm(phi2[len(phi0):], b, c, lam, dims))
        n_t = np.prod(whole.shape[1:])
        wts = np.concatenate([np.full(len(phi0), (b - a) / len(phi0)), np.full(len(phi1), (c - b) / len(phi1))])
        norms["r2"] = math.sqrt(float(np.sum(wts[:, None] * r2.reshape(len(wts), -1) ** 2)) / n_t)
        audited += ["phi2", "r2"]

    s = max([v for k, v in norms.items() if k != "r2"] + ([norms["r2"] / h] if "r2" in norms else []))
    if audit and not normalize:
        for k in ("phi0", "phi1", "phi2"):
            if k in norms and norms[k] > 1.0 + tol:
                raise AssumptionViolation(f"||{k}||_H1_lambda = {norms[k]:.6g} exceeds 1", k)
        if "r2" in norms and norms["r2"] > h * (1.0 + tol):
            raise AssumptionViolation(f"||r2|| = {norms['r2']:.6g} exceeds h = {h:g}", "r2")
    if not normalize:
        s = 1.0

    t0 = _slab_trace(phi0, True, dims)
    t1 = _slab_trace(phi1, False, dims)
    theta = TraceField(t0.coeffs - t1.coeffs, t0.dims)
    widths, low = _psi_scales(theta, h, lam)
    x1 = _cell_centres(b, c, phi1.shape[0])
    psi = _psi_on_grid(theta, widths, x1, b, profile)
    l2, h1 = _psi_norms(theta, widths, lam, profile)
    at_b = profile(np.zeros_like(widths)) * theta.coeffs
    ref = max(theta.l2_norm(), 1e-300)
    resid = float(np.sqrt(np.sum(np.abs(t1.coeffs + at_b - t0.coeffs) ** 2))) / ref if theta.l2_norm() > 0 else 0.0
    s_eff = s if s > 0 else 1.0
    return GlueResult(
        psi=psi,
        theta=theta,
        psi_hat_at_b=at_b,
        support=(b, b + 0.5 * float(widths.max()) if widths.size else b),
        l2=l2,
        h1=h1,
        scale=s,
        l2_ratio=l2 / (s_eff * h),
        h1_ratio=h1 / s_eff,
        trace_residual=resid,
        low_modes=int(low.sum()),
        high_modes=int((~low).sum()),
        audited=tuple(audited),
    )


def glue_from_theta(theta: TraceField, x1, b: float, h: float, lam: AnisotropicSobolevParams,
                    profile: CutoffProfile | None = None) -> tuple[np.ndarray, float, float]:
    """psi samples at x_1 nodes for a given jump theta, plus its exact (L^2, H^1_lambda) norms."""
    profile = profile or CutoffProfile()
    widths, _ = _psi_scales(theta, h, lam)
    psi = _psi_on_grid(theta, widths, np.asarray(x1, dtype=float), b, profile)
    l2, h1 = _psi_norms(theta, widths, lam, profile)
    return psi, l2, h1


def random_glue_inputs(rng: np.random.Generator, h: float, lam: AnisotropicSobolevParams, d: int = 3,
                       n1: int = 32, nt: int = 16, modes: int = 4):
    """Random inputs satisfying the gluing hypotheses on A_0 = (-1, 0), A_1 = (0, 1).

    phi2 is a random low-frequency cosine field on A_2; r2 vanishes on A_0
    and is x_1-independent on A_1 with ||r2|| drawn in (0.2 h, h), so f jumps
    at x_1 = 0.  Everything is divided by the largest H^1_lambda norm when it
    exceeds one.  Returns (phi0, phi1, phi2, r2).
    """
    if d < 2:
        raise ValidationError("gluing inputs need d >= 2")
    x = np.concatenate([_cell_centres(-1.0, 0.0, n1), _cell_centres(0.0, 1.0, n1)])
    t = _cell_centres(0.0, 1.0, nt)
    shape = (2 * n1,) + (nt,) * (d - 1)
    P = np.zeros(shape)
    for _ in range(modes):
        k = rng.integers(0, 3, size=d)
        term = np.cos(0.5 * math.pi * k[0] * x + rng.uniform(0.0, 2.0 * math.pi)).reshape((-1,) + (1,) * (d - 1))
        for ax in range(1, d):
            term = term * np.cos(math.pi * k[ax] * t).reshape([1] * ax + [-1] + [1] * (d - 1 - ax))
        P = P + rng.normal() * term
    g = np.ones((nt,) * (d - 1))
    for ax in range(d - 1):
        g = g * np.cos(math.pi * rng.integers(0, 4) * t).reshape([1] * ax + [-1] + [1] * (d - 2 - ax))
    R = np.zeros(shape)
    R[n1:] = g
    R *= rng.uniform(0.2, 1.0) * h / math.sqrt(float(np.mean(R[n1:] ** 2)))
    F = P + R
    s = max(slab_h1_norm(F[:n1], -1.0, 0.0, lam), slab_h1_norm(F[n1:], 0.0, 1.0, lam),
            math.hypot(slab_h1_norm(P[:n1], -1.0, 0.0, lam), slab_h1_norm(P[n1:], 0.0, 1.0, lam)), 1.0)
    return F[:n1] / s, F[n1:] / s, P / s, R / s


# ---------------------------------------------------------------------------
# dyadic norm identities


@dataclass(frozen=True)
class DyadicNormRecord:
    """Both sides of the dyadic L^2 and gradient identities up to ``depth``.

    ``l2_direct`` and ``grad_direct`` integrate over
    {2^{-depth-1} < x_1 < 1} by adaptive quadrature; the ``*_dyadic`` sums
    use f o tau_k^{-1} on Omega_0.  ``h1_ratio`` lists, per depth, the
    straightened (sigma_k on B_0) H^1 sum divided by the direct H^1 norm.
    """

    depth: int
    l2_direct: float
    l2_dyadic: float
    l2_residual: float
    grad_direct: float
    grad_dyadic: float
    grad_residual: float
    h1_ratio: tuple[float, ...]
    slab_l2: tuple[float, ...]


def _gl(n: int, lo: float, hi: float):
    t, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (hi - lo) * t + 0.5 * (hi + lo), 0.5 * (hi - lo) * w


def _fd_gradient(f: Callable, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    g = np.empty_like(x)
    for i in range(x.shape[1]):
        e = np.zeros(x.shape[1])
        e[i] = step
        g[:, i] = (f(x + e) - f(x - e)) / (2.0 * step)
    return g


def _b0_rule(model: ModelCusp, order: int):
    """Gauss-Legendre nodes and weights on B_0 = (1/2, 1) x (-1, 1)^{d-1}."""
    axes = [_gl(order, 0.5, 1.0)] + [_gl(order, -1.0, 1.0)] * (model.dim - 1)
    pts = np.stack(np.meshgrid(*[a[0] for a in axes], indexing="ij"), -1).reshape(-1, model.dim)
    w = np.ones(len(pts))
    for i, W in enumerate(np.meshgrid(*[a[1] for a in axes], indexing="ij")):
        w = w * W.ravel()
    return pts, w


def _direct_integral(model: ModelCusp, g: Callable, lo: float, tol: float) -> float:
    """Adaptive integral of g over the cusp part with x_1 in (lo, 1)."""
    a, dp, dpp = model.alpha, model.d_prime, model.d_doubleprime

    def integrand(*args):
        # nquad passes the x'' components first, then x', then x_1
        pt = [args[-1], args[-2]] + list(args[:dpp])
        return float(g(np.array([pt]))[0])

    ranges = [(lambda *r: (-1.0, 1.0))] * dpp + [lambda *r: (-r[-1] ** a, r[-1] ** a), (lo, 1.0)]
    # nquad orders ranges innermost first and passes outer variables at the end
    return integrate.nquad(lambda *v: integrand(*v), ranges, opts={"epsabs": tol, "epsrel": tol, "limit": 200})[0]


def dyadic_norm_identity_check(model: ModelCusp, f: Callable, depth: int = 6, grad: Callable | None = None,
                               order: int = 24, tol: float = 1e-11,
                               quadrature: CellQuadrature | None = None) -> DyadicNormRecord:
    """Compute both sides of the dyadic L^2 identity and the gradient identity.

    ``f`` maps points (N, d) to values; ``grad`` to gradients (N, d) and
    defaults to central differences.  When ``quadrature`` is given, ``f`` is
    understood as sampled on its nodes and the requested depth is checked
    against the grid: the cusp must be at least four cells wide at
    x_1 = 2^{-depth-1}.
    """
    if model.d_prime != 1:
        raise ValidationError("the dyadic checks are implemented for d' = 1", "d_prime")
    if depth < 0:
        raise ValidationError("depth must be nonnegative", "depth")
    if quadrature is not None:
        width = 2.0 * 2.0 ** (-(depth + 1) * model.alpha)
        if width < 4.0 * quadrature.spacing:
            ok = int(math.floor(math.log2(2.0 / (4.0 * quadrature.spacing)) / model.alpha)) - 1
            raise ValidationError(
                f"grid spacing {quadrature.spacing:g} resolves the cusp only down to depth {max(ok, -1)}; "
                f"depth {depth} needs spacing <= {width / 4.0:.3g}", "depth")
    grad = grad or (lambda x: _fd_gradient(f, x))
    a, dp = model.alpha, model.d_prime
    expo = a * dp + 1.0
    lo = 2.0 ** (-(depth + 1))

    l2_direct = _direct_integral(model, lambda x: np.asarray(f(x)) ** 2, lo, tol)
    grad_direct = _direct_integral(model, lambda x: np.sum(np.asarray(grad(x)) ** 2, axis=1), lo, tol)

    # Omega_0 by Gauss-Legendre in straightened variables, pushed through tau_k^{-1}
    yb, wb = _b0_rule(model, order)
    z = yb.copy()
    z[:, 1 : 1 + dp] *= yb[:, :1] ** a
    jac = wb * yb[:, 0] ** (a * dp)
    l2_dy, grad_dy, slabs, ratios = 0.0, 0.0, [], []
    acc_h1_sigma = 0.0
    acc_h1_direct = 0.0
    for k in range(depth + 1):
        x = z.copy()
        x[:, 0] *= 2.0 ** (-k)
        x[:, 1 : 1 + dp] *= 2.0 ** (-k * a)
        fv = np.asarray(f(x), dtype=float)
        gv = np.asarray(grad(x), dtype=float)
        wk = 2.0 ** (-k * expo)
        sl = float(np.sum(jac * fv**2))
        slabs.append(sl)
        l2_dy += wk * sl
        # N_{2^k, 2^{k alpha}, 1}(f o tau_k^{-1}, Omega_0)^2 equals the plain gradient energy of f on the slab
        g_tau = gv.copy()
        gk = float(np.sum(jac * np.sum(g_tau**2, axis=1)))
        grad_dy += wk * gk
        # straightened version on B_0: g(y) = f(tau_k^{-1} theta^{-1} y)
        y1, yp = yb[:, 0], yb[:, 1 : 1 + dp]
        d1 = 2.0 ** (-k) * gv[:, 0] + 2.0 ** (-k * a) * a * y1 ** (a - 1) * np.sum(yp * gv[:, 1 : 1 + dp], axis=1)
        dpv = 2.0 ** (-k * a) * (y1**a)[:, None] * gv[:, 1 : 1 + dp]
        dppv = gv[:, 1 + dp :]
        N2 = (2.0**k * d1) ** 2 + np.sum((2.0 ** (k * a) * dpv) ** 2, axis=1) + np.sum(dppv**2, axis=1)
        acc_h1_sigma += wk * float(np.sum(wb * (fv**2 + N2)))
        acc_h1_direct += wk * (sl + gk)
        ratios.append(acc_h1_sigma / acc_h1_direct if acc_h1_direct > 0 else float("nan"))

    def rel(p, q):
        return abs(p - q) / max(abs(p), abs(q), 1e-300)

    return DyadicNormRecord(
        depth=depth,
        l2_direct=l2_direct,
        l2_dyadic=l2_dy,
        l2_residual=rel(l2_direct, l2_dy),
        grad_direct=grad_direct,
        grad_dyadic=grad_dy,
        grad_residual=rel(grad_direct, grad_dy),
        h1_ratio=tuple(ratios),
        slab_l2=tuple(slabs),
    )


# ---------------------------------------------------------------------------
# the low-energy decomposition


@dataclass(frozen=True)
class DecompositionConfig:
    """Tunables of :func:`decompose_low_energy`.

    ``n_x1`` and ``n_t`` are the per-level grid sizes along x_1 and the
    transverse axes; ``h2`` overrides the measured pipeline threshold;
    ``normalize`` rescales f by max(||f||_rho, sqrt(E_h(f)) / h) so that the
    energy precondition holds, otherwise the precondition is audited.
    ``collar_width`` sets the x_1-scale w = collar_width * x_cut of the
    profile that brings f_L to zero trace at the collar cut.
    """

    n_x1: int = 128
    n_t: int = 64
    h2: float | None = None
    profile_p: int = 2
    normalize: bool = True
    min_cells: float = 4.0
    collar_width: float = 0.5

    def __post_init__(self):
        for name in ("n_x1", "n_t"):
            v = getattr(self, name)
            if v < 8 or v % 2:
                raise ValidationError(f"{name} must be an even integer >= 8", name)


def pipeline_threshold(model: ModelCusp) -> float:
    """h_2 = 0.95 * 2^{-alpha} * min(1, delta) with delta from the torus split scan.

    Level-j torus scales are (2^j h, 2^{j alpha} h, h); every retained level
    needs them below one, which the deepest level 2K(h)+1 enforces through
    4^{alpha K} h <= 2^{-alpha}.
    """
    delta = split_constants((1, model.d_prime, model.d_doubleprime)).delta
    return 0.95 * 2.0 ** (-model.alpha) * min(1.0, delta)


@dataclass
class DecompositionReport:
    """f = f_C + f_L + f_H on the operator's nodes, with measured norms.

    Norms are Lebesgue L^2 norms of the pieces of the rescaled field f / scale.
    ``collar_max_x1`` is the largest x_1 with f_C != 0 and ``collar_constant``
    its ratio to h^{1/alpha}.  ``interface_residuals`` are relative trace
    mismatches of f_L at each glued interface (Fourier side).
    """

    h: float
    K_h: int
    levels: int
    h2: float
    delta: float
    x_cut: float
    collar_width: float
    collar_max_x1: float
    collar_constant: float
    scale: float
    energy: float
    l2_f: float
    l2_fC: float
    l2_fL: float
    grad_fL: float
    h1_fL: float
    l2_fH: float
    l2_fH_grid: float
    interpolation_residual: float
    reconstruction_residual: float
    interface_residuals: list
    per_level: list
    trivial: bool = False
    f_C: np.ndarray | None = field(default=None, repr=False)
    f_L: np.ndarray | None = field(default=None, repr=False)
    f_H: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("f_C", "f_L", "f_H"):
            d.pop(k)
        return d

    def per_level_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["level", "l2_fL", "h1_fL", "l2_fH", "trace_residual"])
        for row in self.per_level:
            w.writerow([row["level"], repr(row["l2_fL"]), repr(row["h1_fL"]), repr(row["l2_fH"]),
                        repr(row["trace_residual"])])
        return buf.getvalue()


def _model_from_domain(domain: DomainSpec) -> ModelCusp:
    if domain.lipschitz_pieces or len(domain.cusp_charts) != 1:
        raise ValidationError("the decomposition runs on the model cusp domain only", "domain")
    ch = domain.cusp_charts[0]
    if not (ch.epsilon == 1.0 and ch.r == 1.0 and np.allclose(ch.origin, 0.0)
            and tuple(ch.axes) == tuple(range(ch.dim)) and all(v > 0 for v in ch.signs)):
        raise ValidationError("the cusp chart is not the model cusp", "domain")
    return ModelCusp(ch.alpha, ch.d_prime, ch.d_doubleprime)


def _lattice_interpolator(op: DiscretizedOperator, values: np.ndarray) -> RegularGridInterpolator:
    """Linear interpolant of node values placed at their lattice cell centres.

    Cells outside the domain take the value of the nearest inside cell, so the
    interpolant is defined on the whole bounding box.
    """
    if op.cell_index is None:
        raise ValidationError("operator carries no cell index")
    lo, _ = op.domain.bounds()
    idx = np.asarray(op.cell_index)
    shape = tuple(int(v) for v in idx.max(axis=0) + 2)
    grid = np.zeros(shape)
    have = np.zeros(shape, dtype=bool)
    grid[tuple(idx.T)] = values
    have[tuple(idx.T)] = True
    _, nearest = ndimage.distance_transform_edt(~have, return_indices=True)
    grid = grid[tuple(nearest)]
    axes = [lo[i] + op.spacing * (np.arange(shape[i]) + 0.5) for i in range(len(shape))]
    return RegularGridInterpolator(axes, grid, method="linear", bounds_error=False, fill_value=None)


def _level_points(model: ModelCusp, j: int, n_x1: int, n_t: int) -> tuple[np.ndarray, list[np.ndarray]]:
    """Physical points of the level-j cube grid (cell centres of (0,1)^d)."""
    axes = [(np.arange(n_x1) + 0.5) / n_x1] + [(np.arange(n_t) + 0.5) / n_t] * (model.dim - 1)
    U = np.stack(np.meshgrid(*axes, indexing="ij"), -1)
    X = np.empty_like(U)
    X[..., 0] = 2.0 ** (-j - 1) * (1.0 + U[..., 0])
    X[..., 1:] = 2.0 * U[..., 1:] - 1.0
    X[..., 1 : 1 + model.d_prime] *= X[..., :1] ** model.alpha
    return X, axes


def _to_level_coords(model: ModelCusp, j: int, x: np.ndarray) -> np.ndarray:
    u = np.empty_like(x)
    u[:, 0] = 2.0 ** (j + 1) * x[:, 0] - 1.0
    u[:, 1:] = x[:, 1:]
    u[:, 1 : 1 + model.d_prime] /= x[:, :1] ** model.alpha
    u[:, 1:] = 0.5 * (u[:, 1:] + 1.0)
    return u


def _level_norms(model: ModelCusp, j: int, G: np.ndarray, mask: np.ndarray | None = None) -> tuple[float, float]:
    """(||g||_{L^2}, ||grad g||_{L^2}) over the physical level-j slab from cube samples.

    Derivatives are second-order finite differences in cube coordinates,
    converted by the chain rule of x_1 = 2^{-j-1}(1 + u_1),
    x' = x_1^alpha (2u' - 1), x'' = 2u'' - 1.
    """
    a, dp = model.alpha, model.d_prime
    n = G.shape
    hs = [1.0 / s for s in n]
    D = np.gradient(G, *hs, edge_order=2)
    X, axes = _level_points(model, j, n[0], n[1])
    x1 = X[..., 0]
    up = np.stack(np.meshgrid(*axes, indexing="ij"), -1)[..., 1 : 1 + dp]
    yp = 2.0 * up - 1.0
    d1 = 2.0 ** (j + 1) * D[0] - sum(D[1 + i] * a * yp[..., i] / (2.0 * x1) for i in range(dp))
    dprime = [D[1 + i] / (2.0 * x1**a) for i in range(dp)]
    dpp = [0.5 * D[i] for i in range(1 + dp, G.ndim)]
    jac = 2.0 ** (-(j + 1)) * (2.0 * x1**a) ** dp * 2.0 ** (G.ndim - 1 - dp) * np.prod(hs)
    if mask is not None:
        jac = jac * mask
    l2 = float(np.sum(jac * G**2))
    g2 = float(np.sum(jac * (d1**2 + sum(v**2 for v in dprime) + sum(v**2 for v in dpp))))
    return math.sqrt(l2), math.sqrt(g2)


def _block_lambda(model: ModelCusp, j: int) -> tuple[AnisotropicSobolevParams, float]:
    """Weights of quadriadic block k = j // 2 in (nu_k x_1, u', u'') coordinates and 4^k."""
    k = j // 2
    s = 4.0**k
    return AnisotropicSobolevParams(s, 0.5 * 4.0 ** (k * model.alpha), 0.5), s


def decompose_low_energy(op: DiscretizedOperator, f, model: ModelCusp | None = None,
                         config: DecompositionConfig | None = None) -> DecompositionReport:
    """Split a low-energy node field on the model cusp into f_C + f_L + f_H.

    Per dyadic level j the field is straightened, mapped to the unit cube,
    extended evenly to the torus and split into low and high frequencies at
    the torus scales (2^j h, 2^{j alpha} h, h).  Level fields are glued from
    the deepest level upwards: first a zero trace at the collar cut
    x_cut = (h / h_2)^{1/alpha}, then at every interface x_1 = 2^{-j-1} the
    upper level absorbs the jump with :func:`glue_h1`.  The corrections psi
    move from the high part to the low part.  Below x_cut the field is the
    collar piece f_C.
    """
    config = config or DecompositionConfig()
    model = model or _model_from_domain(op.domain)
    if model.d_prime != 1:
        raise ValidationError("the decomposition pipeline needs d' = 1 (cube cross-section)", "d_prime")
    f = np.asarray(f, dtype=float)
    if f.shape != (op.size,):
        raise ValidationError(f"field has shape {f.shape}, expected ({op.size},)")
    h = op.h
    alpha = model.alpha
    dims = (1, model.d_prime, model.d_doubleprime)
    profile = CutoffProfile(config.profile_p)
    h2 = config.h2 if config.h2 is not None else pipeline_threshold(model)
    delta = split_constants(dims).delta
    if h > h2:
        raise ValidationError(f"h = {h:g} exceeds the pipeline threshold h_2 = {h2:.4g}; K(h) is undefined", "h")
    K = int(math.floor(math.log(h2 / h) / (alpha * math.log(4.0)) + 1e-12))

    w = op.weights
    norm_rho = math.sqrt(float(np.sum(op.rho * w * f**2)))
    energy = dirichlet_form(op, f)
    if config.normalize:
        scale = max(norm_rho, math.sqrt(max(energy, 0.0)) / h)
        if scale == 0:
            raise ValidationError("the zero field has no decomposition to report")
    else:
        if norm_rho > 1.0 + 1e-9:
            raise AssumptionViolation(f"||f||_rho = {norm_rho:.6g} exceeds 1", "f")
        if energy > h * h * (1.0 + 1e-9):
            raise AssumptionViolation(f"E_h(f) = {energy:.6g} exceeds h^2 = {h * h:.6g}", "f")
        scale = 1.0
    g = f / scale
    energy_n = energy / scale**2
    l2 = lambda v: math.sqrt(float(np.sum(w * v**2)))  # noqa: E731

    x1n = op.nodes[:, 0]
    if energy_n <= 1e-13 * max(l2(g) ** 2, 1e-300):
        # the kernel null space: f is constant and needs no splitting
        zero = np.zeros_like(g)
        return DecompositionReport(
            h=h, K_h=K, levels=0, h2=h2, delta=delta, x_cut=0.0, collar_width=0.0, collar_max_x1=0.0,
            collar_constant=0.0, scale=scale, energy=energy_n, l2_f=l2(g), l2_fC=0.0, l2_fL=l2(g), grad_fL=0.0,
            h1_fL=l2(g), l2_fH=0.0, l2_fH_grid=0.0, interpolation_residual=0.0, reconstruction_residual=0.0,
            interface_residuals=[], per_level=[], trivial=True, f_C=zero, f_L=g.copy(), f_H=zero.copy(),
        )

    x_cut = (h / h2) ** (1.0 / alpha)
    J = max(int(math.floor(-math.log2(x_cut))), 0)
    width = 2.0 * x_cut**alpha
    if width < config.min_cells * op.spacing:
        need = width / config.min_cells
        raise ValidationError(
            f"grid spacing {op.spacing:g} is too coarse for the collar cut x_1 = {x_cut:.4g}; "
            f"level {J} needs spacing <= {need:.3g}", "grid")

    interp = _lattice_interpolator(op, g)
    n1, nt = config.n_x1, config.n_t
    low, high = {}, {}
    for j in range(J + 1):
        X, _ = _level_points(model, j, n1, nt)
        F = interp(X.reshape(-1, model.dim)).reshape(X.shape[:-1])
        sc = AnisotropicScale(2.0**j * h, 2.0 ** (j * alpha) * h, h)
        lo_f, hi_f = low_high_split(reflect_extend(F, dims), sc, delta)
        low[j] = restrict(lo_f)
        high[j] = restrict(hi_f)

    fL = {j: low[j].copy() for j in low}
    fH = {j: high[j].copy() for j in high}
    residuals = []
    level_trace = {}
    x1_grid = {j: 2.0 ** (-j - 1) * (1.0 + _cell_centres(0.0, 1.0, n1)) for j in low}
    bshape = [-1] + [1] * (model.dim - 1)

    # zero trace at the collar cut: f_L loses rho((x_1 - x_cut) / w) T(u~), which f_C takes over
    u_c = 2.0 ** (J + 1) * x_cut - 1.0
    tr = trace(reflect_extend(low[J], dims), u_c).field
    T_grid = tr.to_cube_grid()
    w_c = config.collar_width * x_cut
    for j in range(J + 1):
        prof = profile((x1_grid[j] - x_cut) / w_c).reshape(bshape)
        if np.any(prof):
            fL[j] = fL[j] - prof * T_grid[None, ...]
    keep = (x1_grid[J] > x_cut).astype(float).reshape(bshape)
    fL[J] = fL[J] * keep
    fH[J] = fH[J] * keep
    zres = float(np.sqrt(np.sum(np.abs(tr.coeffs - profile(0.0) * tr.coeffs) ** 2)))
    zres = zres / tr.l2_norm() if tr.l2_norm() > 0 else 0.0
    residuals.append({"x1": x_cut, "kind": "collar", "residual": zres})
    level_trace[J] = zres

    # interfaces x_1 = 2^{-j-1}, glued onto the bottom of level j
    for j in range(J - 1, -1, -1):
        lam, _ = _block_lambda(model, j)
        s = 4.0 ** (j // 2)
        b = s * 2.0 ** (-j - 1)
        res = glue_h1(fL[j + 1], fL[j], lam=lam, h=h, a=s * 2.0 ** (-j - 2), b=b, c=s * 2.0 ** (-j),
                      dims=dims, profile=profile, normalize=True)
        fL[j] = fL[j] + res.psi
        fH[j] = fH[j] - res.psi
        residuals.append({"x1": 2.0 ** (-j - 1), "kind": "interface", "residual": res.trace_residual,
                          "psi_l2_ratio": res.l2_ratio, "psi_h1_ratio": res.h1_ratio})
        level_trace[j] = res.trace_residual

    # back to the nodes
    ret = x1n > x_cut
    axes_t = [(np.arange(nt) + 0.5) / nt] * (model.dim - 1)
    u_nodes = _to_level_coords(model, 0, op.nodes)[:, 1:]
    T_nodes = RegularGridInterpolator(axes_t, T_grid, bounds_error=False, fill_value=None)(np.clip(u_nodes, 0, 1))
    corr = profile((x1n - x_cut) / w_c) * T_nodes
    f_C = np.where(ret, corr, g)
    f_L = np.zeros_like(g)
    f_Hgrid = np.zeros_like(g)
    lev = np.clip(np.floor(-np.log2(np.where(ret, x1n, 1.0))).astype(int), 0, J)
    axes_u = [(np.arange(n1) + 0.5) / n1] + [(np.arange(nt) + 0.5) / nt] * (model.dim - 1)
    per_level = []
    grad2 = 0.0
    l2L_grid = 0.0
    l2H_grid = 0.0
    for j in range(J + 1):
        sel = ret & (lev == j)
        mask = None
        if j == J:
            mask = np.broadcast_to(keep, fL[j].shape)
        l2L, gL = _level_norms(model, j, fL[j], mask)
        l2H, _ = _level_norms(model, j, fH[j], mask)
        grad2 += gL**2
        l2L_grid += l2L**2
        l2H_grid += l2H**2
        per_level.append({"level": j, "l2_fL": l2L, "h1_fL": math.hypot(l2L, gL), "l2_fH": l2H,
                          "trace_residual": level_trace.get(j, 0.0)})
        if np.any(sel):
            u = _to_level_coords(model, j, op.nodes[sel])
            u = np.clip(u, 0.0, 1.0)
            f_L[sel] = RegularGridInterpolator(axes_u, fL[j], bounds_error=False, fill_value=None)(u)
            f_Hgrid[sel] = RegularGridInterpolator(axes_u, fH[j], bounds_error=False, fill_value=None)(u)
    f_H = np.where(ret, g - f_L - f_C, 0.0)
    recon = g - (f_C + f_L + f_H)
    rec_res = l2(recon) / max(l2(g), 1e-300)
    interp_res = l2(np.where(ret, g - f_L - f_C - f_Hgrid, 0.0))
    supp = x1n[np.abs(f_C) > 0]
    cmax = float(supp.max()) if supp.size else 0.0
    grad_fL = math.sqrt(grad2)
    return DecompositionReport(
        h=h, K_h=K, levels=J + 1, h2=h2, delta=delta, x_cut=x_cut, collar_width=w_c,
        collar_max_x1=cmax, collar_constant=cmax / h ** (1.0 / alpha), scale=scale, energy=energy_n,
        l2_f=l2(g), l2_fC=l2(f_C), l2_fL=l2(f_L), grad_fL=grad_fL, h1_fL=math.hypot(l2(f_L), grad_fL),
        l2_fH=l2(f_H), l2_fH_grid=math.sqrt(l2H_grid), interpolation_residual=interp_res,
        reconstruction_residual=rec_res, interface_residuals=residuals, per_level=per_level,
        f_C=f_C, f_L=f_L, f_H=f_H,
    )
