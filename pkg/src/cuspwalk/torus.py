"""Fourier side on the torus (R/2Z)^d.

Conventions: e_k(x) = 2^{-d/2} exp(i pi <k, x>) is the orthonormal basis
and hat f(k) = <f, e_k>.  A cube field sampled at cell centres
x_j = (j + 1/2)/n of (0, 1) is extended evenly across {x_i = 1} to the
2n-point grid of (0, 2), then transformed.  The discrete coefficients are

    hat g(k) = 2^{-d/2} n^{-d} sum_j g(x_j) exp(-i pi <k, x_j>),

so Parseval holds exactly against the grid L^2 norm and restriction after
extension is the identity.

The anisotropic Metropolis operator on the torus acts as the multiplier
G_1(h_bar k_1) G_{d'}(h_tilde |k'|) G_{d''}(h |k''|) with

    G_n(s) = V_n^{-1} int_{|z| < 1} exp(i pi s z_1) dz
           = (2 V_{n-1} / V_n) int_0^1 cos(pi s t) (1 - t^2)^{(n-1)/2} dt.
"""

from __future__ import annotations

import csv
import functools
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate

from .errors import ValidationError
from .geometry import unit_ball_volume
from .kernel import AnisotropicScale, anisotropic_dirichlet_form

__all__ = [
    "TorusField",
    "g_multiplier",
    "one_minus_g",
    "quadratic_coefficient",
    "multiplier",
    "reflect_extend",
    "restrict",
    "torus_metropolis_apply",
    "torus_dirichlet_energy",
    "low_high_split",
    "split_constants",
    "split_bound_ratios",
    "cube_torus_sandwich",
    "torus_convolution_oracle",
    "gn_table",
]


# ---------------------------------------------------------------------------
# the radial functions G_n


@functools.lru_cache(maxsize=200_000)
def _g_scalar(n: int, s: float, complement: bool) -> float:
    """G_n(s) (or 1 - G_n(s) when ``complement``) by adaptive quadrature."""
    if s == 0.0:
        return 0.0 if complement else 1.0
    pref = 2.0 * unit_ball_volume(n - 1) / unit_ball_volume(n)
    w = lambda t: (1.0 - t * t) ** ((n - 1) / 2.0)  # noqa: E731
    if complement:
        # 1 - cos(x) = 2 sin^2(x/2) keeps relative accuracy near s = 0
        f = lambda t: 2.0 * math.sin(0.5 * math.pi * s * t) ** 2 * w(t)  # noqa: E731
        val, _ = integrate.quad(f, 0.0, 1.0, epsabs=1e-14, epsrel=1e-12, limit=400)
    else:
        val, _ = integrate.quad(w, 0.0, 1.0, weight="cos", wvar=math.pi * s, epsabs=1e-13, limit=400)
    return pref * val


def _closed_form(n: int, s: np.ndarray, complement: bool) -> np.ndarray | None:
    """Elementary closed forms for n = 1 and n = 3 (the literal integral, evaluated)."""
    x = math.pi * s
    small = np.abs(x) < 1e-3
    xs = np.where(small, 1.0, x)
    if n == 1:
        # sin(x)/x; 1 - sin(x)/x = (x - sin x)/x
        series = x**2 / 6 - x**4 / 120 + x**6 / 5040
        if complement:
            return np.where(small, series, (xs - np.sin(xs)) / xs)
        return np.where(small, 1.0 - series, np.sin(xs) / xs)
    if n == 3:
        series = x**2 / 10 - x**4 / 280 + x**6 / 15120
        val = 3.0 * (np.sin(xs) - xs * np.cos(xs)) / xs**3
        if complement:
            return np.where(small, series, 1.0 - val)
        return np.where(small, 1.0 - series, val)
    return None


def _g_array(n: int, xi, complement: bool) -> np.ndarray:
    if int(n) != n or n < 1:
        raise ValidationError("G_n needs an integer n >= 1")
    n = int(n)
    s = np.abs(np.asarray(xi, dtype=float))
    cf = _closed_form(n, s, complement)
    if cf is not None:
        return cf
    uniq, inv = np.unique(s.ravel(), return_inverse=True)
    vals = np.array([_g_scalar(n, float(u), complement) for u in uniq])
    return vals[inv].reshape(s.shape)


def g_multiplier(n: int, xi) -> np.ndarray | float:
    """G_n(|xi|), the Fourier transform of the normalized unit-ball indicator at pi xi."""
    out = _g_array(n, xi, False)
    return float(out) if np.ndim(xi) == 0 else out


def one_minus_g(n: int, xi) -> np.ndarray | float:
    """1 - G_n(|xi|) computed without cancellation."""
    out = _g_array(n, xi, True)
    return float(out) if np.ndim(xi) == 0 else out


def quadratic_coefficient(n: int, eps: float = 0.02) -> float:
    """Measured c in G_n(xi) = 1 - c xi^2 + O(xi^4), by Richardson over (eps, eps/2).

    Evaluated with the adaptive quadrature path for every n, so closed forms
    do not leak into the measurement.
    """
    c1 = _g_scalar(int(n), eps, True) / eps**2
    c2 = _g_scalar(int(n), eps / 2, True) / (eps / 2) ** 2
    return (4.0 * c2 - c1) / 3.0


def gn_table(ns: Sequence[int], xis: Sequence[float]) -> list[tuple[int, float, float]]:
    """(n, xi, G_n(xi)) triples."""
    return [(int(n), float(x), float(g_multiplier(n, x))) for n in ns for x in xis]


# ---------------------------------------------------------------------------
# fields


def _split_dims(d: int, dims) -> tuple[int, int, int]:
    if dims is None:
        dims = (1, d - 1, 0)
    dims = tuple(int(v) for v in dims)
    if len(dims) != 3 or dims[0] != 1 or dims[1] < 0 or dims[2] < 0 or sum(dims) != d:
        raise ValidationError(f"dims {dims} do not split dimension {d} as (1, d', d'')")
    return dims


@dataclass(frozen=True)
class TorusField:
    """Coefficients hat g(k) on an FFT-ordered frequency grid.

    ``coeffs`` has one axis per dimension, each of even length 2n; the
    frequency of index j along an axis is ``fftfreq(2n, 1/2n)[j]``.
    ``dims`` is the (1, d', d'') split.  ``band_limit`` is n, so modes with
    |k_i| < n are represented.
    """

    coeffs: np.ndarray
    dims: tuple[int, int, int]

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "dims", _split_dims(c.ndim, self.dims))
        if any(s % 2 for s in c.shape):
            raise ValidationError("coefficient grids must have even length along every axis")

    @property
    def dim(self) -> int:
        return self.coeffs.ndim

    @property
    def shape(self) -> tuple[int, ...]:
        return self.coeffs.shape

    @property
    def band_limit(self) -> tuple[int, ...]:
        return tuple(s // 2 for s in self.shape)

    def freqs(self) -> list[np.ndarray]:
        return [np.fft.fftfreq(s, 1.0 / s) for s in self.shape]

    def freq_mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*self.freqs(), indexing="ij")

    def block_norms(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """|k_1|, |k'| and |k''| on the frequency mesh."""
        K = self.freq_mesh()
        d1, dp, dpp = self.dims
        k1 = np.abs(K[0])
        kp = np.sqrt(sum(K[i] ** 2 for i in range(1, 1 + dp))) if dp else np.zeros_like(k1)
        kpp = np.sqrt(sum(K[i] ** 2 for i in range(1 + dp, 1 + dp + dpp))) if dpp else np.zeros_like(k1)
        return k1, kp, kpp

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.coeffs) ** 2)))

    def inner(self, other: "TorusField") -> complex:
        return complex(np.sum(self.coeffs * np.conj(other.coeffs)))

    def __add__(self, other: "TorusField") -> "TorusField":
        return TorusField(self.coeffs + other.coeffs, self.dims)

    def __sub__(self, other: "TorusField") -> "TorusField":
        return TorusField(self.coeffs - other.coeffs, self.dims)

    def scale(self, t: complex) -> "TorusField":
        return TorusField(self.coeffs * t, self.dims)

    @classmethod
    def zeros(cls, shape, dims=None) -> "TorusField":
        return cls(np.zeros(shape, dtype=complex), _split_dims(len(shape), dims))

    @classmethod
    def from_torus_grid(cls, values, dims=None) -> "TorusField":
        """Transform samples at the torus cell centres (j + 1/2)/n, j < 2n."""
        v = np.asarray(values)
        d = v.ndim
        n = [s // 2 for s in v.shape]
        F = np.fft.fftn(v)
        for ax, s in enumerate(v.shape):
            k = np.fft.fftfreq(s, 1.0 / s)
            ph = np.exp(-1j * math.pi * k / (2.0 * n[ax]))
            F = F * ph.reshape([-1 if a == ax else 1 for a in range(d)])
        F = F * (2.0 ** (-d / 2.0)) / float(np.prod(n))
        return cls(F, _split_dims(d, dims))

    def to_torus_grid(self) -> np.ndarray:
        """Samples at the torus cell centres (inverse of :meth:`from_torus_grid`)."""
        d = self.dim
        n = self.band_limit
        F = self.coeffs / (2.0 ** (-d / 2.0)) * float(np.prod(n))
        for ax, s in enumerate(self.shape):
            k = np.fft.fftfreq(s, 1.0 / s)
            ph = np.exp(1j * math.pi * k / (2.0 * n[ax]))
            F = F * ph.reshape([-1 if a == ax else 1 for a in range(d)])
        return np.fft.ifftn(F)

    def evaluate(self, points) -> np.ndarray:
        """Trigonometric sum at arbitrary points (N, d); real part for real fields is up to the caller."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        K = np.stack([k.ravel() for k in self.freq_mesh()], 1)
        c = self.coeffs.ravel()
        nz = np.abs(c) > 0
        K, c = K[nz], c[nz]
        out = np.empty(len(pts), dtype=complex)
        step = max(1, 4_000_000 // max(len(c), 1))
        for a in range(0, len(pts), step):
            ph = np.exp(1j * math.pi * pts[a : a + step] @ K.T)
            out[a : a + step] = ph @ c
        return out * 2.0 ** (-self.dim / 2.0)

    def derivative(self, axis: int) -> "TorusField":
        """Coefficients of d/dx_axis (multiplier i pi k_axis)."""
        K = self.freq_mesh()[axis]
        return TorusField(self.coeffs * (1j * math.pi * K), self.dims)

    def to_csv(self, path_or_buf=None) -> str:
        """Rows (k components..., re, im) for nonzero coefficients, FFT order."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"k{i}" for i in range(self.dim)] + ["re", "im"])
        K = self.freq_mesh()
        for idx in zip(*np.nonzero(self.coeffs)):
            c = self.coeffs[idx]
            w.writerow([int(K[a][idx]) for a in range(self.dim)] + [repr(float(c.real)), repr(float(c.imag))])
        text = buf.getvalue()
        if path_or_buf is not None:
            with open(path_or_buf, "w", newline="") as fh:
                fh.write(text)
        return text


def reflect_extend(f, dims=None) -> TorusField:
    """Even extension across {x_i = 1} of cube samples at cell centres, then transform."""
    g = np.asarray(f)
    for ax in range(g.ndim):
        g = np.concatenate([g, np.flip(g, axis=ax)], axis=ax)
    field = TorusField.from_torus_grid(g, dims)
    return field


def restrict(field: TorusField, real: bool = True) -> np.ndarray:
    """Cube samples (first half along every axis) of a torus field."""
    g = field.to_torus_grid()
    sl = tuple(slice(0, s // 2) for s in field.shape)
    out = g[sl]
    return out.real if real else out


# ---------------------------------------------------------------------------
# multiplier, energy and split


def _check_scale(scale: AnisotropicScale) -> None:
    for name, v in zip(("h_bar", "h_tilde", "h"), scale.as_tuple()):
        if not (0.0 < v < 1.0):
            raise ValidationError(f"scale component {name} = {v:g} must lie in (0, 1)", f"scale.{name}")


def _block_product(field_dims, norms, scale: AnisotropicScale, complement: bool) -> np.ndarray:
    d1, dp, dpp = field_dims
    k1, kp, kpp = norms
    g = g_multiplier(1, scale.h_bar * k1)
    if dp:
        g = g * g_multiplier(dp, scale.h_tilde * kp)
    if dpp:
        g = g * g_multiplier(dpp, scale.h * kpp)
    if not complement:
        return g
    # 1 - prod G_i = sum_i (1 - G_i) prod_{j < i} G_j, each term cancellation free
    parts = [(1, scale.h_bar * k1)]
    if dp:
        parts.append((dp, scale.h_tilde * kp))
    if dpp:
        parts.append((dpp, scale.h * kpp))
    out = np.zeros_like(k1, dtype=float)
    run = np.ones_like(k1, dtype=float)
    for n, x in parts:
        out = out + one_minus_g(n, x) * run
        run = run * g_multiplier(n, x)
    return out


def multiplier(field: TorusField, scale: AnisotropicScale) -> np.ndarray:
    """G_1(h_bar k_1) G_{d'}(h_tilde |k'|) G_{d''}(h |k''|) on the field's frequency mesh."""
    _check_scale(scale)
    return _block_product(field.dims, field.block_norms(), scale, False)


def torus_metropolis_apply(field: TorusField, scale: AnisotropicScale) -> TorusField:
    """Apply the anisotropic torus Metropolis operator as a Fourier multiplier."""
    return TorusField(field.coeffs * multiplier(field, scale), field.dims)


def torus_dirichlet_energy(field: TorusField, scale: AnisotropicScale) -> float:
    """sum_k (1 - G-product(k)) |hat g(k)|^2."""
    _check_scale(scale)
    sym = _block_product(field.dims, field.block_norms(), scale, True)
    return float(np.sum(sym * np.abs(field.coeffs) ** 2))


def _scaled_xi(field: TorusField, scale: AnisotropicScale) -> np.ndarray:
    k1, kp, kpp = field.block_norms()
    return np.sqrt((scale.h_bar * k1) ** 2 + (scale.h_tilde * kp) ** 2 + (scale.h * kpp) ** 2)


def low_high_split(field: TorusField, scale: AnisotropicScale, delta: float) -> tuple[TorusField, TorusField]:
    """Low part keeps |(h_bar k_1, h_tilde k', h k'')| < delta; high keeps the rest."""
    if not delta > 0:
        raise ValidationError("delta must be positive", "delta")
    low_mask = _scaled_xi(field, scale) < delta
    low = np.where(low_mask, field.coeffs, 0.0)
    high = np.where(low_mask, 0.0, field.coeffs)
    return TorusField(low, field.dims), TorusField(high, field.dims)


@dataclass(frozen=True)
class SplitConstants:
    """Measured constants of the low/high split.

    ``delta``: largest radius on which 1 - G-product >= |xi|^2 / upsilon1.
    ``upsilon2``: 1 / min_{|xi| >= delta} (1 - G-product) on the scan.
    """

    dims: tuple[int, int, int]
    upsilon1: float
    delta: float
    upsilon2: float
    scan_radius: float


def _symbol_on_directions(dims, radii: np.ndarray, n_dir: int = 48) -> np.ndarray:
    """1 - G-product along a fan of directions in the (|xi_1|, |xi'|, |xi''|) octant; shape (dirs, radii)."""
    d1, dp, dpp = dims
    blocks = [1] + ([dp] if dp else []) + ([dpp] if dpp else [])
    nb = len(blocks)
    if nb == 1:
        dirs = np.ones((1, 1))
    elif nb == 2:
        t = np.linspace(0.0, 0.5 * math.pi, n_dir)
        dirs = np.stack([np.cos(t), np.sin(t)], 1)
    else:
        t = np.linspace(0.0, 0.5 * math.pi, n_dir // 4 + 2)
        a, b = np.meshgrid(t, t, indexing="ij")
        dirs = np.stack([np.cos(a), np.sin(a) * np.cos(b), np.sin(a) * np.sin(b)], -1).reshape(-1, 3)
    out = np.zeros((len(dirs), len(radii)))
    for i, u in enumerate(dirs):
        run = np.ones(len(radii))
        acc = np.zeros(len(radii))
        for n, c in zip(blocks, u):
            x = radii * c
            acc += one_minus_g(n, x) * run
            run = run * g_multiplier(n, x)
        out[i] = acc
    return out


@functools.lru_cache(maxsize=64)
def split_constants(dims: tuple[int, int, int], scan_radius: float = 40.0, points: int = 4000) -> SplitConstants:
    """Measure delta, Upsilon_1 and Upsilon_2 for the (1, d', d'') split.

    Upsilon_1 = 4 / min_n (1/(2(n+2))) over the active blocks, so that
    |xi|^2 / Upsilon_1 sits below a quarter of the smallest quadratic
    coefficient; delta is the largest radius where the minorization holds in
    every scanned direction.
    """
    dims = _split_dims(sum(dims), dims)
    blocks = [1] + ([dims[1]] if dims[1] else []) + ([dims[2]] if dims[2] else [])
    a_min = min(1.0 / (2.0 * (n + 2.0)) for n in blocks)
    ups1 = 4.0 / a_min
    radii = np.linspace(0.0, scan_radius, points + 1)[1:]
    sym = _symbol_on_directions(dims, radii)
    ok = np.all(sym >= radii[None, :] ** 2 / ups1, axis=0)
    bad = np.nonzero(~ok)[0]
    delta = float(radii[bad[0] - 1]) if len(bad) and bad[0] > 0 else float(radii[-1])
    far = radii >= delta
    ups2 = float(1.0 / np.min(sym[:, far]))
    return SplitConstants(dims, ups1, delta, ups2, scan_radius)


def split_bound_ratios(field: TorusField, scale: AnisotropicScale, delta: float | None = None) -> dict:
    """Both sides of the split bounds, as ratios to the torus Dirichlet energy.

    Returns ||g_H||^2 / E and sum_low |xi|^2 |hat g|^2 / E with the energy E.
    """
    c = split_constants(field.dims)
    delta = c.delta if delta is None else delta
    low, high = low_high_split(field, scale, delta)
    E = torus_dirichlet_energy(field, scale)
    xi2 = _scaled_xi(field, scale) ** 2
    h1_low = float(np.sum(xi2 * np.abs(low.coeffs) ** 2))
    hi2 = high.l2_norm() ** 2
    return {
        "energy": E,
        "high_l2_sq": hi2,
        "low_h1_sq": h1_low,
        "high_ratio": hi2 / E if E > 0 else 0.0,
        "low_ratio": h1_low / E if E > 0 else 0.0,
        "upsilon1": c.upsilon1,
        "upsilon2": c.upsilon2,
        "delta": delta,
    }


def cube_torus_sandwich(f, scale: AnisotropicScale, dims=None) -> dict:
    """Cube form of f against the torus form of its even extension.

    The cube form uses the Euclidean-ball normalization V_d and the torus
    form the product-window normalization V_1 V_{d'} V_{d''}; the returned
    ``lower`` and ``upper`` are E_cube / E_torus and E_torus / E_cube.
    """
    f = np.asarray(f, dtype=float)
    dims = _split_dims(f.ndim, dims)
    spacings = [1.0 / s for s in f.shape]
    e_cube = anisotropic_dirichlet_form(f, spacings, scale, dims)
    e_torus = torus_dirichlet_energy(reflect_extend(f, dims), scale)
    vol_ratio = unit_ball_volume(f.ndim) / (
        unit_ball_volume(1) * unit_ball_volume(dims[1]) * unit_ball_volume(dims[2])
    )
    return {
        "cube": e_cube,
        "torus": e_torus,
        "lower": e_cube / e_torus if e_torus > 0 else float("nan"),
        "upper": e_torus / e_cube if e_cube > 0 else float("nan"),
        "volume_ratio": vol_ratio,
    }


def torus_convolution_oracle(values: np.ndarray, scale: AnisotropicScale, dims=None,
                             order: int = 48) -> np.ndarray:
    """Window average of a band-limited torus field computed in physical space.

    ``values`` are torus cell-centre samples; the field is their
    trigonometric interpolant.  For every sample point x the average of the
    field over the window {|z_1| < h_bar, |z'| < h_tilde, |z''| < h} is
    computed with tensor Gauss-Legendre quadrature, evaluating the field at
    x + z.  Only product-of-interval windows (blocks of size at most one)
    are supported; meant for small grids in tests.
    """
    v = np.asarray(values)
    d = v.ndim
    dims = _split_dims(d, dims)
    if dims[1] > 1 or dims[2] > 1:
        raise ValidationError("the physical-space oracle supports blocks of size at most one")
    field = TorusField.from_torus_grid(v, dims)
    n = [s // 2 for s in v.shape]
    axes_pts = [(np.arange(s) + 0.5) / n_ for s, n_ in zip(v.shape, n)]
    X = np.stack([g.ravel() for g in np.meshgrid(*axes_pts, indexing="ij")], 1)
    t, w = np.polynomial.legendre.leggauss(order)
    scales = np.array([scale.h_bar] + [scale.h_tilde] * dims[1] + [scale.h] * dims[2])
    Zs = np.stack([g.ravel() for g in np.meshgrid(*([t] * d), indexing="ij")], 1) * scales
    Ws = np.prod(np.stack([g.ravel() for g in np.meshgrid(*([w] * d), indexing="ij")], 1), axis=1) / 2.0**d
    out = np.empty(len(X))
    for i, x in enumerate(X):
        out[i] = float(np.real(np.sum(Ws * field.evaluate(x + Zs))))
    return out.reshape(v.shape)
