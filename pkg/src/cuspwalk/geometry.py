"""Domains with cusp singularities.

A domain is a finite union of interior-disjoint pieces: axis-aligned boxes,
two-dimensional polynomial graph regions, and placed cusp charts

    {0 < x_1 < eps, |x'| < x_1**alpha, |x''| < r}

with x' of dimension d' and x'' of dimension d''.  A chart is placed by an
origin and a signed permutation frame, so chart-local boxes stay axis
aligned in global coordinates.  This keeps the quadrature exact where it is
cheap (two dimensions) and honest elsewhere.

The sharpness index of the domain is gamma = max (alpha - 1) d' over the
charts, and 0 when there is no chart.  Only 0 < gamma < 2 is accepted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy import integrate, special

from .errors import AssumptionViolation, ValidationError

__all__ = [
    "unit_ball_volume",
    "Box",
    "GraphPiece",
    "CuspChart",
    "DomainSpec",
    "ModelCusp",
    "DyadicSlab",
    "CellQuadrature",
    "contains",
    "in_closure",
    "gamma_exponent",
    "boundary_distance",
    "cell_moments_2d",
    "cell_quadrature",
    "ball_volume_theta",
    "box_volume_W",
    "dyadic_map_tau",
    "dyadic_map_tau_inverse",
    "dyadic_jacobian",
    "straighten_theta",
    "straighten_theta_inverse",
    "sigma_map",
    "sigma_hat_map",
    "sigma_check_1",
    "nu_map",
    "nu_map_inverse",
]


def unit_ball_volume(n: int) -> float:
    """Volume of the Euclidean unit ball in R^n (1 for n = 0)."""
    if n < 0:
        raise ValidationError("dimension must be nonnegative")
    return math.pi ** (n / 2.0) / math.gamma(n / 2.0 + 1.0)


def _as_points(x, dim: int) -> tuple[np.ndarray, bool]:
    """Return x as an (N, dim) float array plus a flag telling if it was a single point."""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValidationError(f"expected points of dimension {dim}, got shape {np.shape(x)}")
    return arr, single


# ---------------------------------------------------------------------------
# pieces


@dataclass(frozen=True)
class Box:
    """Open axis-aligned box (lo, hi)."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        if len(self.lo) != len(self.hi) or not self.lo:
            raise ValidationError("box corners must have equal, positive length")
        if any(b <= a for a, b in zip(self.lo, self.hi)):
            raise ValidationError("box must satisfy lo < hi componentwise")

    @property
    def dim(self) -> int:
        return len(self.lo)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self.lo), np.array(self.hi)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        lo, hi = self.bounds()
        return np.all((pts > lo) & (pts < hi), axis=1)

    def distance_to_boundary(self, pts: np.ndarray) -> np.ndarray:
        lo, hi = self.bounds()
        return np.min(np.minimum(pts - lo, hi - pts), axis=1)


@dataclass(frozen=True)
class GraphPiece:
    """Planar region {a < x_0 < b, lower(x_0) < x_1 < upper(x_0)}.

    ``lower`` and ``upper`` are polynomial coefficients in increasing degree.
    """

    x_range: tuple[float, float]
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "x_range", tuple(float(v) for v in self.x_range))
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        a, b = self.x_range
        if not b > a:
            raise ValidationError("graph piece needs a < b")
        xs = np.linspace(a, b, 257)
        if np.any(self.U(xs) - self.L(xs) < 0):
            raise ValidationError("graph piece needs lower <= upper on its range")

    dim = 2

    def L(self, x):
        return np.polynomial.polynomial.polyval(x, self.lower)

    def U(self, x):
        return np.polynomial.polynomial.polyval(x, self.upper)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        a, b = self.x_range
        xs = np.linspace(a, b, 2049)
        return np.array([a, self.L(xs).min()]), np.array([b, self.U(xs).max()])

    def contains(self, pts: np.ndarray) -> np.ndarray:
        a, b = self.x_range
        x, y = pts[:, 0], pts[:, 1]
        return (x > a) & (x < b) & (y > self.L(x)) & (y < self.U(x))

    def distance_to_boundary(self, pts: np.ndarray) -> np.ndarray:
        a, b = self.x_range
        xs = np.linspace(a, b, 4001)
        curve = np.concatenate(
            [
                np.stack([xs, self.L(xs)], 1),
                np.stack([xs, self.U(xs)], 1),
                np.stack([np.full(401, a), np.linspace(self.L(a), self.U(a), 401)], 1),
                np.stack([np.full(401, b), np.linspace(self.L(b), self.U(b), 401)], 1),
            ]
        )
        from scipy.spatial import cKDTree

        dist, _ = cKDTree(curve).query(pts)
        return dist

    def _crossings(self, levels: np.ndarray) -> np.ndarray:
        """x positions in (a, b) where lower or upper equals a level, nan padded."""
        a, b = self.x_range
        uniq, inv = np.unique(levels, return_inverse=True)
        rows = []
        for lev in uniq:
            pts = []
            for coeffs in (self.lower, self.upper):
                c = np.array(coeffs, dtype=float).copy()
                c[0] -= lev
                if np.allclose(c[1:], 0.0):
                    continue
                for r in np.polynomial.polynomial.polyroots(c):
                    if abs(r.imag) < 1e-12 and a < r.real < b:
                        pts.append(r.real)
            diff = np.polynomial.polynomial.polysub(self.upper, self.lower)
            if not np.allclose(np.atleast_1d(diff)[1:], 0.0):
                for r in np.polynomial.polynomial.polyroots(diff):
                    if abs(r.imag) < 1e-12 and a < r.real < b:
                        pts.append(r.real)
            rows.append(pts)
        width = max(1, max(len(p) for p in rows))
        out = np.full((len(uniq), width), np.nan)
        for i, p in enumerate(rows):
            out[i, : len(p)] = p
        return out[inv]


@dataclass(frozen=True)
class CuspChart:
    """Cusp chart {0 < x_1 < epsilon, |x'| < x_1**alpha, |x''| < r}, placed by origin and frame.

    ``axes[i]`` is the global axis carrying local coordinate i and ``signs[i]``
    its orientation; the default is the identity placement at the origin.
    """

    alpha: float
    d_prime: int = 1
    d_doubleprime: int = 0
    epsilon: float = 1.0
    r: float = 1.0
    origin: tuple[float, ...] | None = None
    axes: tuple[int, ...] | None = None
    signs: tuple[int, ...] | None = None

    def __post_init__(self):
        d = 1 + int(self.d_prime) + int(self.d_doubleprime)
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "epsilon", float(self.epsilon))
        object.__setattr__(self, "r", float(self.r))
        if not self.alpha > 1:
            raise ValidationError("cusp exponent alpha must exceed 1", "alpha")
        if int(self.d_prime) < 1 or int(self.d_doubleprime) < 0:
            raise ValidationError("need d' >= 1 and d'' >= 0")
        if not self.epsilon > 0:
            raise ValidationError("chart length epsilon must be positive", "epsilon")
        if self.d_doubleprime > 0 and not self.r > 0:
            raise ValidationError("tangential radius r must be positive", "r")
        origin = tuple(float(v) for v in (self.origin if self.origin is not None else [0.0] * d))
        axes = tuple(int(v) for v in (self.axes if self.axes is not None else range(d)))
        signs = tuple(int(v) for v in (self.signs if self.signs is not None else [1] * d))
        if len(origin) != d or len(axes) != d or len(signs) != d:
            raise ValidationError(f"placement must have length {d}")
        if sorted(axes) != list(range(d)) or any(s not in (-1, 1) for s in signs):
            raise ValidationError("frame must be a signed permutation")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "signs", signs)

    @property
    def dim(self) -> int:
        return 1 + self.d_prime + self.d_doubleprime

    @property
    def gamma(self) -> float:
        return (self.alpha - 1.0) * self.d_prime

    def to_local(self, pts: np.ndarray) -> np.ndarray:
        o = np.array(self.origin)
        return (pts[:, self.axes] - o[list(self.axes)]) * np.array(self.signs)

    def to_global(self, loc: np.ndarray) -> np.ndarray:
        out = np.empty_like(loc)
        out[:, self.axes] = loc * np.array(self.signs) + np.array(self.origin)[list(self.axes)]
        return out

    def local_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        w = self.epsilon ** self.alpha
        lo = [0.0] + [-w] * self.d_prime + [-self.r] * self.d_doubleprime
        hi = [self.epsilon] + [w] * self.d_prime + [self.r] * self.d_doubleprime
        return np.array(lo), np.array(hi)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.local_bounds()
        corners = self.to_global(np.stack([lo, hi]))
        return corners.min(axis=0), corners.max(axis=0)

    def contains_local(self, loc: np.ndarray) -> np.ndarray:
        x1 = loc[:, 0]
        xp = loc[:, 1 : 1 + self.d_prime]
        xpp = loc[:, 1 + self.d_prime :]
        ok = (x1 > 0) & (x1 < self.epsilon)
        with np.errstate(invalid="ignore"):
            ok &= np.linalg.norm(xp, axis=1) < np.where(x1 > 0, x1, 0.0) ** self.alpha
        if self.d_doubleprime:
            ok &= np.linalg.norm(xpp, axis=1) < self.r
        return ok

    def contains(self, pts: np.ndarray) -> np.ndarray:
        return self.contains_local(self.to_local(pts))

    def distance_to_boundary(self, pts: np.ndarray) -> np.ndarray:
        """Euclidean distance from points inside the chart to the chart boundary."""
        loc = self.to_local(pts)
        out = np.empty(len(loc))
        a = self.alpha
        for i, p in enumerate(loc):
            x1 = p[0]
            rho = float(np.linalg.norm(p[1 : 1 + self.d_prime]))
            rr = float(np.linalg.norm(p[1 + self.d_prime :])) if self.d_doubleprime else 0.0
            cand = [self.epsilon - x1]
            if self.d_doubleprime:
                cand.append(self.r - rr)
            # distance to the lateral surface |y'| = y_1**alpha in the (x_1, |x'|) half plane
            ts = np.linspace(0.0, self.epsilon, 2001)
            dd = np.hypot(ts - x1, ts**a - rho)
            j = int(np.argmin(dd))
            lo_t, hi_t = ts[max(j - 1, 0)], ts[min(j + 1, len(ts) - 1)]
            from scipy.optimize import minimize_scalar

            res = minimize_scalar(
                lambda t: math.hypot(t - x1, t**a - rho), bounds=(lo_t, hi_t), method="bounded",
                options={"xatol": 1e-13},
            )
            cand.append(min(float(res.fun), float(dd[j])))
            out[i] = min(cand)
        return out

    # exact planar moments -------------------------------------------------
    def moments_local_2d(self, ax, bx, cy, dy):
        """Exact area and first moments of boxes [ax,bx]x[cy,dy] meet the planar cusp (local coords)."""
        a = self.alpha
        p0 = np.maximum(ax, 0.0)
        q0 = np.minimum(bx, self.epsilon)
        pts = [p0, q0]
        for lev in (cy, dy):
            root = np.abs(lev) ** (1.0 / a)
            pts.append(np.clip(root, p0, q0))
        P = np.sort(np.stack(pts, axis=1), axis=1)
        area = np.zeros_like(p0)
        mx = np.zeros_like(p0)
        my = np.zeros_like(p0)
        valid_cell = q0 > p0

        def pw(e, p, q):
            return (q ** (e + 1.0) - p ** (e + 1.0)) / (e + 1.0)

        for k in range(P.shape[1] - 1):
            p, q = P[:, k], P[:, k + 1]
            ok = valid_cell & (q > p)
            m = 0.5 * (p + q)
            w = m**a
            top_is_curve = w < dy
            bot_is_curve = -w > cy
            top_mid = np.where(top_is_curve, w, dy)
            bot_mid = np.where(bot_is_curve, -w, cy)
            ok &= top_mid > bot_mid
            length = q - p
            iT = np.where(top_is_curve, pw(a, p, q), dy * length)
            iB = np.where(bot_is_curve, -pw(a, p, q), cy * length)
            ixT = np.where(top_is_curve, pw(a + 1, p, q), dy * pw(1, p, q))
            ixB = np.where(bot_is_curve, -pw(a + 1, p, q), cy * pw(1, p, q))
            iT2 = np.where(top_is_curve, pw(2 * a, p, q), dy * dy * length)
            iB2 = np.where(bot_is_curve, pw(2 * a, p, q), cy * cy * length)
            area += np.where(ok, iT - iB, 0.0)
            mx += np.where(ok, ixT - ixB, 0.0)
            my += np.where(ok, 0.5 * (iT2 - iB2), 0.0)
        return area, mx, my

    def slice_bounds_local(self, x):
        """Lower/upper transverse bounds of the planar chart at local abscissa x."""
        w = np.where((x > 0) & (x < self.epsilon), np.abs(x) ** self.alpha, np.nan)
        return -w, w


Piece = Union[Box, GraphPiece]


@dataclass(frozen=True)
class DomainSpec:
    """Bounded domain given as a union of interior-disjoint pieces and cusp charts."""

    dim: int
    lipschitz_pieces: tuple[Piece, ...] = ()
    cusp_charts: tuple[CuspChart, ...] = ()
    bounding_box: tuple[tuple[float, ...], tuple[float, ...]] | None = None
    gamma: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "lipschitz_pieces", tuple(self.lipschitz_pieces))
        object.__setattr__(self, "cusp_charts", tuple(self.cusp_charts))
        if self.dim < 1:
            raise ValidationError("dimension must be positive", "dim")
        if not self.lipschitz_pieces and not self.cusp_charts:
            raise ValidationError("domain needs at least one piece")
        for i, p in enumerate(self.lipschitz_pieces):
            if p.dim != self.dim:
                raise ValidationError(f"piece dimension {p.dim} differs from {self.dim}", f"pieces[{i}]")
        for i, c in enumerate(self.cusp_charts):
            if c.dim != self.dim:
                raise ValidationError(
                    f"1 + d' + d'' = {c.dim} differs from ambient dimension {self.dim}", f"charts[{i}]"
                )
        g = max((c.gamma for c in self.cusp_charts), default=0.0)
        object.__setattr__(self, "gamma", g)
        if self.cusp_charts and not (0.0 < g < 2.0):
            raise AssumptionViolation(f"cusp sharpness gamma = {g:g} must satisfy 0 < gamma < 2")
        if self.bounding_box is not None:
            lo = np.array(self.bounding_box[0], dtype=float)
            hi = np.array(self.bounding_box[1], dtype=float)
            object.__setattr__(self, "bounding_box", (tuple(lo), tuple(hi)))
            for i, part in enumerate(self.parts):
                plo, phi = part.bounds()
                if np.any(plo < lo - 1e-12) or np.any(phi > hi + 1e-12):
                    raise ValidationError("piece leaves the declared bounding box", f"parts[{i}]")

    @property
    def parts(self) -> tuple:
        return tuple(self.lipschitz_pieces) + tuple(self.cusp_charts)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if self.bounding_box is not None:
            return np.array(self.bounding_box[0]), np.array(self.bounding_box[1])
        los, his = zip(*(p.bounds() for p in self.parts))
        return np.min(los, axis=0), np.max(his, axis=0)

    def contains(self, x) -> np.ndarray | bool:
        return contains(self, x)


@dataclass(frozen=True)
class ModelCusp:
    """The model cusp {0 < x_1 < 1, |x'| < x_1**alpha, |x''| < 1}."""

    alpha: float
    d_prime: int = 1
    d_doubleprime: int = 0

    def __post_init__(self):
        if not self.alpha > 1:
            raise ValidationError("alpha must exceed 1", "alpha")

    @property
    def dim(self) -> int:
        return 1 + self.d_prime + self.d_doubleprime

    @property
    def chart(self) -> CuspChart:
        return CuspChart(self.alpha, self.d_prime, self.d_doubleprime, 1.0, 1.0)

    def domain(self) -> DomainSpec:
        return DomainSpec(self.dim, (), (self.chart,))

    @property
    def volume(self) -> float:
        """Lebesgue volume V_{d'} V_{d''} / (alpha d' + 1)."""
        return unit_ball_volume(self.d_prime) * unit_ball_volume(self.d_doubleprime) / (
            self.alpha * self.d_prime + 1.0
        )

    def split(self, x):
        x = np.asarray(x, dtype=float)
        return x[..., 0], x[..., 1 : 1 + self.d_prime], x[..., 1 + self.d_prime :]


@dataclass(frozen=True)
class DyadicSlab:
    """Omega_k = Omega meet {2^-(k+1) < x_1 < 2^-k}."""

    k: int
    parent: ModelCusp

    def __post_init__(self):
        if self.k < 0:
            raise ValidationError("slab level must be nonnegative")

    @property
    def x1_range(self) -> tuple[float, float]:
        return 2.0 ** (-(self.k + 1)), 2.0 ** (-self.k)

    def contains(self, x) -> np.ndarray:
        pts, single = _as_points(x, self.parent.dim)
        a, b = self.x1_range
        ok = self.parent.chart.contains_local(pts) & (pts[:, 0] > a) & (pts[:, 0] < b)
        return bool(ok[0]) if single else ok


# ---------------------------------------------------------------------------
# membership and gamma


def contains(domain: DomainSpec, x) -> np.ndarray | bool:
    """Membership test: exact inequality evaluation, no tolerance."""
    pts, single = _as_points(x, domain.dim)
    ok = np.zeros(len(pts), dtype=bool)
    for part in domain.parts:
        ok |= part.contains(pts)
    return bool(ok[0]) if single else ok


def in_closure(domain: DomainSpec, x, tol: float = 1e-9) -> bool:
    """True when x lies in the closure of the domain, probed at distance ``tol``.

    Used where boundary points such as the cusp tip are legitimate inputs.
    """
    p = np.asarray(x, dtype=float).reshape(-1)
    if contains(domain, p[None, :])[0]:
        return True
    d = domain.dim
    dirs = np.concatenate([np.eye(d), -np.eye(d)])
    if d > 1:
        g = np.random.default_rng(12345).standard_normal((64, d))
        dirs = np.concatenate([dirs, g / np.linalg.norm(g, axis=1, keepdims=True)])
    # radial probes plus probes tilted toward the first axis (cusp tips open along it)
    probes = [p + tol * dirs, p + tol * np.eye(d)[:1] + tol**1.5 * dirs]
    return bool(np.any(contains(domain, np.concatenate(probes))))


def gamma_exponent(domain: DomainSpec) -> float:
    """max over charts of (alpha - 1) d', and 0 without charts."""
    return domain.gamma


def boundary_distance(domain: DomainSpec, x) -> np.ndarray | float:
    """Distance to the boundary of the piece containing x.

    For a single-piece domain this is the distance to the boundary of the
    domain; for unions it is a lower bound (interfaces between pieces count
    as boundary).  Points outside the domain are rejected.
    """
    pts, single = _as_points(x, domain.dim)
    if not np.all(contains(domain, pts)):
        raise ValidationError("boundary distance requested for a point outside the domain")
    out = np.zeros(len(pts))
    for part in domain.parts:
        inside = part.contains(pts)
        if np.any(inside):
            out[inside] = np.maximum(out[inside], part.distance_to_boundary(pts[inside]))
    return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# exact cell quadrature


def _graph_moments(piece: GraphPiece, ax, bx, cy, dy, order: int = 16):
    """Area and first moments of boxes meet a polynomial graph region (Gauss-Legendre is exact here)."""
    a, b = piece.x_range
    p0 = np.maximum(ax, a)
    q0 = np.minimum(bx, b)
    cr = np.concatenate([piece._crossings(cy), piece._crossings(dy)], axis=1)
    cr = np.where(np.isnan(cr), p0[:, None], cr)
    P = np.sort(np.concatenate([p0[:, None], q0[:, None], np.clip(cr, p0[:, None], q0[:, None])], 1), 1)
    t, w = np.polynomial.legendre.leggauss(order)
    area = np.zeros_like(p0)
    mx = np.zeros_like(p0)
    my = np.zeros_like(p0)
    valid = q0 > p0
    for k in range(P.shape[1] - 1):
        p, q = P[:, k : k + 1], P[:, k + 1 : k + 2]
        x = 0.5 * (p + q) + 0.5 * (q - p) * t
        wx = 0.5 * (q - p) * w
        top = np.minimum(dy[:, None], piece.U(x))
        bot = np.maximum(cy[:, None], piece.L(x))
        ln = np.clip(top - bot, 0.0, None)
        area += np.where(valid, np.sum(wx * ln, 1), 0.0)
        mx += np.where(valid, np.sum(wx * x * ln, 1), 0.0)
        my += np.where(valid, np.sum(wx * 0.5 * np.where(ln > 0, top**2 - bot**2, 0.0), 1), 0.0)
    return area, mx, my


def cell_moments_2d(domain: DomainSpec, lo, hi) -> tuple[np.ndarray, np.ndarray]:
    """Exact area and centroid of axis boxes meet a planar domain.

    ``lo`` and ``hi`` are (N, 2) arrays of box corners.  Returns ``(area,
    centroid)``; the centroid of an empty intersection is the box center.
    """
    if domain.dim != 2:
        raise ValidationError("exact cell moments are available in two dimensions only")
    lo = np.atleast_2d(np.asarray(lo, dtype=float))
    hi = np.atleast_2d(np.asarray(hi, dtype=float))
    area = np.zeros(len(lo))
    m0 = np.zeros(len(lo))
    m1 = np.zeros(len(lo))
    for part in domain.parts:
        if isinstance(part, Box):
            plo, phi = part.bounds()
            l = np.maximum(lo, plo)
            u = np.minimum(hi, phi)
            ext = np.clip(u - l, 0.0, None)
            ar = ext[:, 0] * ext[:, 1]
            area += ar
            m0 += ar * 0.5 * (l[:, 0] + u[:, 0])
            m1 += ar * 0.5 * (l[:, 1] + u[:, 1])
        elif isinstance(part, GraphPiece):
            ar, mx, my = _graph_moments(part, lo[:, 0], hi[:, 0], lo[:, 1], hi[:, 1])
            area += ar
            m0 += mx
            m1 += my
        else:  # planar cusp chart under a signed permutation frame
            corners = np.stack([part.to_local(lo), part.to_local(hi)])
            llo, lhi = corners.min(0), corners.max(0)
            ar, mx, my = part.moments_local_2d(llo[:, 0], lhi[:, 0], llo[:, 1], lhi[:, 1])
            cen_loc = np.stack([mx, my], 1)
            glob = np.zeros_like(cen_loc)
            o = np.array(part.origin)
            for i, (ax_, s) in enumerate(zip(part.axes, part.signs)):
                glob[:, ax_] = s * cen_loc[:, i] + ar * o[ax_]
            area += ar
            m0 += glob[:, 0]
            m1 += glob[:, 1]
    with np.errstate(invalid="ignore", divide="ignore"):
        cen = np.where(area[:, None] > 0, np.stack([m0, m1], 1) / area[:, None], 0.5 * (lo + hi))
    return area, cen


@dataclass(frozen=True)
class CellQuadrature:
    """Nodes and weights of a regular cell grid restricted to a domain.

    ``index`` holds integer cell coordinates, so cell i is
    ``origin + spacing * [index_i, index_i + 1]``.  ``exact`` records whether
    the weights are exact cell meet domain volumes.
    """

    nodes: np.ndarray
    weights: np.ndarray
    index: np.ndarray
    origin: np.ndarray
    spacing: float
    shape: tuple[int, ...]
    exact: bool

    @property
    def size(self) -> int:
        return len(self.weights)

    def cell_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = self.origin + self.spacing * self.index
        return lo, lo + self.spacing


def cell_quadrature(domain: DomainSpec, spacing: float, min_fraction: float = 1e-12) -> CellQuadrature:
    """Cell quadrature of the domain on a grid anchored at the bounding-box corner.

    Weights are exact cell meet domain volumes in dimensions 1 and 2 and the
    node is the centroid of that intersection (the cell center for full
    cells).  In higher dimension cells are kept by center membership with the
    full cell volume.  Cells whose intersection is below ``min_fraction`` of
    a cell are dropped.
    """
    if not spacing > 0:
        raise ValidationError("grid spacing must be positive")
    lo, hi = domain.bounds()
    shape = tuple(int(math.ceil((h - l) / spacing - 1e-9)) for l, h in zip(lo, hi))
    grids = np.meshgrid(*[np.arange(n) for n in shape], indexing="ij")
    index = np.stack([g.ravel() for g in grids], 1)
    clo = lo + spacing * index
    chi = clo + spacing
    cell_vol = spacing**domain.dim
    if domain.dim == 1:
        w = np.zeros(len(index))
        m = np.zeros(len(index))
        for part in domain.parts:
            plo, phi = part.bounds()
            l = np.maximum(clo[:, 0], plo[0])
            u = np.minimum(chi[:, 0], phi[0])
            ln = np.clip(u - l, 0.0, None)
            w += ln
            m += ln * 0.5 * (l + u)
        with np.errstate(invalid="ignore", divide="ignore"):
            cen = np.where(w > 0, m / w, 0.5 * (clo[:, 0] + chi[:, 0]))[:, None]
        exact = True
    elif domain.dim == 2:
        w, cen = cell_moments_2d(domain, clo, chi)
        exact = True
    else:
        cen = 0.5 * (clo + chi)
        w = np.where(contains(domain, cen), cell_vol, 0.0)
        exact = False
    keep = w > min_fraction * cell_vol
    if not np.any(keep):
        raise ValidationError("grid has no cell inside the domain; refine the spacing")
    # snap nodes of full cells to the exact center (avoids rounding in the centroid division)
    full = np.abs(w - cell_vol) <= 1e-12 * cell_vol
    cen = np.where(full[:, None], 0.5 * (clo + chi), cen)
    return CellQuadrature(
        nodes=cen[keep],
        weights=w[keep],
        index=index[keep],
        origin=lo,
        spacing=float(spacing),
        shape=shape,
        exact=exact,
    )


# ---------------------------------------------------------------------------
# ball and box volumes


def _planar_slices(part):
    """Return (to_local, lower(x), upper(x), x_lo, x_hi) for a planar piece."""
    if isinstance(part, Box):
        plo, phi = part.bounds()
        return (lambda p: p), (lambda x: np.full_like(x, plo[1])), (lambda x: np.full_like(x, phi[1])), plo[0], phi[0]
    if isinstance(part, GraphPiece):
        a, b = part.x_range
        return (lambda p: p), part.L, part.U, a, b
    lo_fn = lambda x: -np.abs(x) ** part.alpha  # noqa: E731
    hi_fn = lambda x: np.abs(x) ** part.alpha  # noqa: E731
    return (lambda p: part.to_local(p[None, :])[0]), lo_fn, hi_fn, 0.0, part.epsilon


def ball_volume_theta(
    domain: DomainSpec,
    x,
    h: float,
    method: str = "auto",
    norm: str = "euclidean",
    samples: int = 200_000,
    seed: int = 0,
) -> tuple[float, float]:
    """theta_h(x) = vol(Omega meet B(x, h)) with an error estimate.

    Returns ``(value, error)``.  In one dimension the value is exact.  In two
    dimensions the default path integrates slices adaptively (error is the
    quadrature estimate); ``norm='sup'`` uses the box |y - x|_inf < h and is
    exact there.  Otherwise Monte Carlo rejection is used and the error is
    one standard error.
    """
    if not h > 0:
        raise ValidationError("radius must be positive")
    pt, _ = _as_points(x, domain.dim)
    if not in_closure(domain, pt[0]):
        raise ValidationError("theta_h requested at a point outside the domain")
    p = pt[0]
    if method == "auto":
        method = "exact" if domain.dim <= 2 else "monte-carlo"
    if norm == "sup" and domain.dim == 2 and method == "exact":
        area, _ = cell_moments_2d(domain, (p - h)[None, :], (p + h)[None, :])
        return float(area[0]), 0.0
    if domain.dim == 1 and method == "exact":
        tot = 0.0
        for part in domain.parts:
            plo, phi = part.bounds()
            tot += max(0.0, min(p[0] + h, phi[0]) - max(p[0] - h, plo[0]))
        return tot, 0.0
    if domain.dim == 2 and method == "exact" and norm == "euclidean":
        tot, err = 0.0, 0.0
        for part in domain.parts:
            to_local, L, U, xlo, xhi = _planar_slices(part)
            c = np.asarray(to_local(p), dtype=float)
            a = max(xlo, c[0] - h)
            b = min(xhi, c[0] + h)
            if b <= a:
                continue

            def slice_len(t, c=c, L=L, U=U):
                s = math.sqrt(max(h * h - (t - c[0]) ** 2, 0.0))
                top = min(float(U(np.array(t))), c[1] + s)
                bot = max(float(L(np.array(t))), c[1] - s)
                return max(top - bot, 0.0)

            pts = sorted({a, b, min(max(c[0], a), b)})
            val, e = integrate.quad(slice_len, a, b, points=pts[1:-1] or None, limit=400, epsabs=1e-14, epsrel=1e-12)
            tot += val
            err += e
        return tot, err
    # Monte Carlo rejection
    rng = np.random.default_rng(seed)
    d = domain.dim
    if norm == "sup":
        u = rng.uniform(-1.0, 1.0, size=(samples, d))
        vol = (2.0 * h) ** d
    else:
        g = rng.standard_normal((samples, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        u = g * rng.uniform(size=(samples, 1)) ** (1.0 / d)
        vol = unit_ball_volume(d) * h**d
    hit = contains(domain, p + h * u).astype(float)
    frac = hit.mean()
    se = math.sqrt(max(frac * (1 - frac), 0.0) / samples)
    return vol * frac, vol * se


def _lens_volume(n: int, r1: float, r2: float, dist: float) -> float:
    """Volume of the intersection of two n-balls of radii r1, r2 at center distance dist."""
    if dist >= r1 + r2:
        return 0.0
    if dist <= abs(r1 - r2):
        return unit_ball_volume(n) * min(r1, r2) ** n
    if n == 1:
        return max(0.0, min(r1, dist + r2) - max(-r1, dist - r2))
    # cap heights measured from each center along the axis
    a1 = (dist * dist + r1 * r1 - r2 * r2) / (2 * dist)
    a2 = dist - a1

    def cap(r, a):
        # volume of {|y| < r, y_1 > a} for |a| < r
        full = unit_ball_volume(n) * r**n
        frac = 0.5 * special.betainc((n + 1) / 2.0, 0.5, 1.0 - (a / r) ** 2)
        return full * frac if a >= 0 else full - full * frac

    return cap(r1, a1) + cap(r2, a2)


def box_volume_W(model: ModelCusp, x1: float, xprime, h: float) -> float:
    """W_h(x_1, x') = vol{(y_1, y') : |y'| < y_1**alpha, 0 < y_1 < 1, |y_1 - x_1| < h, |y' - x'| < h}.

    The x' window is the Euclidean d'-ball; the (x_1, x') section of the
    model cusp is used (d'' plays no role).  Exact for d' = 1.
    """
    xp = np.atleast_1d(np.asarray(xprime, dtype=float))
    if xp.shape != (model.d_prime,):
        raise ValidationError(f"x' must have dimension {model.d_prime}")
    if not h > 0:
        raise ValidationError("h must be positive")
    if not (0.0 <= x1 <= 1.0 and np.linalg.norm(xp) <= max(x1, 0.0) ** model.alpha):
        raise ValidationError("(x_1, x') is outside the cusp section")
    if model.d_prime == 1:
        section = DomainSpec(2, (), (CuspChart(model.alpha, 1, 0, 1.0),))
        area, _ = cell_moments_2d(section, np.array([[x1 - h, xp[0] - h]]), np.array([[x1 + h, xp[0] + h]]))
        return float(area[0])
    dist = float(np.linalg.norm(xp))
    f = lambda t: _lens_volume(model.d_prime, t**model.alpha, h, dist)  # noqa: E731
    a, b = max(0.0, x1 - h), min(1.0, x1 + h)
    val, _ = integrate.quad(f, a, b, limit=400, epsabs=1e-15, epsrel=1e-12)
    return val


# ---------------------------------------------------------------------------
# dyadic changes of variables on the model cusp


def _split(model: ModelCusp, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.dim:
        raise ValidationError(f"expected points of dimension {model.dim}")
    return x


def dyadic_jacobian(model: ModelCusp, k: int) -> float:
    """Jacobian 2^{k(alpha d' + 1)} of tau_k."""
    return 2.0 ** (k * (model.alpha * model.d_prime + 1.0))


def _scale_map(model: ModelCusp, x, s1: float, sp: float):
    x = _split(model, x).copy()
    x[..., 0] *= s1
    x[..., 1 : 1 + model.d_prime] *= sp
    return x


def dyadic_map_tau(model: ModelCusp, k: int, x, check: bool = True):
    """tau_k(x) = (2^k x_1, 2^{k alpha} x', x''), mapping Omega_k onto Omega_0."""
    if check and not np.all(DyadicSlab(k, model).contains(np.atleast_2d(x))):
        raise ValidationError(f"point outside the dyadic slab Omega_{k}")
    return _scale_map(model, x, 2.0**k, 2.0 ** (k * model.alpha))


def dyadic_map_tau_inverse(model: ModelCusp, k: int, x):
    return _scale_map(model, x, 2.0 ** (-k), 2.0 ** (-k * model.alpha))


def straighten_theta(model: ModelCusp, x):
    """theta(x) = (x_1, x_1^{-alpha} x', x'')."""
    x = _split(model, x).copy()
    if np.any(x[..., 0] <= 0):
        raise ValidationError("straightening needs x_1 > 0")
    x[..., 1 : 1 + model.d_prime] *= x[..., :1] ** (-model.alpha)
    return x


def straighten_theta_inverse(model: ModelCusp, y):
    y = _split(model, y).copy()
    y[..., 1 : 1 + model.d_prime] *= y[..., :1] ** model.alpha
    return y


def sigma_map(model: ModelCusp, k: int, x):
    """sigma_k = theta o tau_k : Omega_k -> B_0."""
    return straighten_theta(model, _scale_map(model, x, 2.0**k, 2.0 ** (k * model.alpha)))


def sigma_hat_map(model: ModelCusp, k: int, x):
    """hat sigma_k = theta o hat tau_k : Omega_k -> B_1, with hat tau_k = tau_{k-1}."""
    return straighten_theta(model, _scale_map(model, x, 2.0 ** (k - 1), 2.0 ** ((k - 1) * model.alpha)))


def sigma_check_1(model: ModelCusp, y):
    """check sigma_1(y) = (2 y_1, y', y''), mapping B_1 onto B_0."""
    y = _split(model, y).copy()
    y[..., 0] *= 2.0
    return y


def nu_map(model: ModelCusp, k: int, x):
    """nu_k(x) = theta(4^k x_1, 4^{alpha k} x', x''), mapping D_k onto B_0 u B_1."""
    return straighten_theta(model, _scale_map(model, x, 4.0**k, 4.0 ** (k * model.alpha)))


def nu_map_inverse(model: ModelCusp, k: int, y):
    return _scale_map(model, straighten_theta_inverse(model, y), 4.0 ** (-k), 4.0 ** (-k * model.alpha))
