"""The ball-proposal Metropolis kernel and its grid discretization.

Continuum objects
    k(x, y) = h^{-d} V_d^{-1} 1{|x - y| < h} min(rho(y)/rho(x), 1),
    m(x)    = 1 - int k(x, y) dy,
    T u     = m u + int k(., y) u(y) dy.

Discrete surrogate
    Nodes are cell (meet domain) centroids with exact weights where
    available; whether two nodes interact is decided by the distance of
    their cell centres.  K[i, j] = k(x_i, x_j) w_j, m_i = 1 - sum_j K[i, j].  Detailed
    balance holds exactly because rho_i K[i, j] / w_j = min(rho_i, rho_j) / c
    is symmetric; weights never enter the symmetry.

The normalizing ball volume ``c`` defaults to the lattice ball volume
(number of grid offsets inside the ball times the cell volume, ties at
distance h counted one half).  With it, interior full cells have m_i = 0
exactly, as in the continuum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, sparse
from scipy.spatial import cKDTree

from .errors import AssemblyError, ValidationError
from .geometry import (
    CellQuadrature,
    DomainSpec,
    _planar_slices,
    cell_quadrature,
    contains,
    in_closure,
    unit_ball_volume,
)
from .measure import DensitySpec, audit_bounds, normalize

__all__ = [
    "AnisotropicScale",
    "DiscretizedOperator",
    "kernel_density",
    "rejection_mass",
    "chain_step",
    "run_chains",
    "assemble_operator",
    "apply_operator",
    "dirichlet_form",
    "dirichlet_form_double_sum",
    "anisotropic_dirichlet_form",
    "lattice_ball_volume",
]

TIE_RTOL = 1e-9
NEG_MASS_TOL = 1e-12


@dataclass(frozen=True)
class AnisotropicScale:
    """Scales (h_bar, h_tilde, h) along x_1, x' and x''."""

    h_bar: float
    h_tilde: float
    h: float

    def __post_init__(self):
        if not (self.h_bar > 0 and self.h_tilde > 0 and self.h > 0):
            raise ValidationError("anisotropic scales must be positive")

    def volume(self, d_prime: int, d_doubleprime: int) -> float:
        """Composite h^d = h_bar h_tilde^{d'} h^{d''}."""
        return self.h_bar * self.h_tilde**d_prime * self.h**d_doubleprime

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.h_bar, self.h_tilde, self.h)


# ---------------------------------------------------------------------------
# continuum kernel


def kernel_density(x, y, h: float, density: DensitySpec, domain: DomainSpec | None = None) -> float:
    """k_{h,rho}(x, y) with the normalized ball indicator profile."""
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.shape != y.shape:
        raise ValidationError("x and y must have the same dimension")
    if not h > 0:
        raise ValidationError("h must be positive")
    if domain is not None and not contains(domain, x):
        raise ValidationError("kernel evaluated at a base point outside the domain")
    d = len(x)
    if np.linalg.norm(x - y) >= h:
        return 0.0
    ratio = float(density(y)) / float(density(x))
    return min(ratio, 1.0) / (unit_ball_volume(d) * h**d)


def rejection_mass(x, h: float, domain: DomainSpec, density: DensitySpec,
                   samples: int = 400_000, seed: int = 0) -> float:
    """m_{h,rho}(x) = 1 - int_Omega k(x, y) dy.

    One dimension: adaptive quadrature on the ball meet the pieces.  Two
    dimensions: nested adaptive quadrature over slices.  Otherwise Monte
    Carlo with the given seed.
    """
    p = np.asarray(x, dtype=float).reshape(-1)
    if len(p) != domain.dim:
        raise ValidationError("dimension mismatch")
    if not in_closure(domain, p):
        raise ValidationError("rejection mass requested outside the domain")
    if not h > 0:
        raise ValidationError("h must be positive")
    d = domain.dim
    rx = float(density(p))
    acc = lambda y: min(float(density(np.asarray(y, dtype=float))) / rx, 1.0)  # noqa: E731
    vol = unit_ball_volume(d) * h**d
    if d == 1:
        tot = 0.0
        for part in domain.parts:
            plo, phi = part.bounds()
            a, b = max(p[0] - h, plo[0]), min(p[0] + h, phi[0])
            if b > a:
                tot += integrate.quad(lambda t: acc([t]), a, b, limit=200, epsabs=1e-13, points=[p[0]] if a < p[0] < b else None)[0]
        return 1.0 - tot / vol
    if d == 2:
        tot = 0.0
        for part in domain.parts:
            to_local, L, U, xlo, xhi = _planar_slices(part)
            c = np.asarray(to_local(p), dtype=float)
            a, b = max(xlo, c[0] - h), min(xhi, c[0] + h)
            if b <= a:
                continue
            if hasattr(part, "to_global"):
                back = lambda s, t, part=part: part.to_global(np.array([[s, t]]))[0]  # noqa: E731
            else:
                back = lambda s, t: np.array([s, t])  # noqa: E731

            def inner(s, c=c, L=L, U=U, back=back):
                r = math.sqrt(max(h * h - (s - c[0]) ** 2, 0.0))
                lo = max(float(L(np.array(s))), c[1] - r)
                hi = min(float(U(np.array(s))), c[1] + r)
                if hi <= lo:
                    return 0.0
                return integrate.quad(lambda t: acc(back(s, t)), lo, hi, limit=100, epsabs=1e-12)[0]

            tot += integrate.quad(inner, a, b, limit=200, epsabs=1e-12, epsrel=1e-10)[0]
        return 1.0 - tot / vol
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((samples, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    y = p + h * g * rng.uniform(size=(samples, 1)) ** (1.0 / d)
    inside = contains(domain, y)
    val = np.zeros(samples)
    val[inside] = np.minimum(density(y[inside]) / rx, 1.0)
    return 1.0 - float(val.mean())


# ---------------------------------------------------------------------------
# Monte Carlo chains


def _uniform_ball(rng: np.random.Generator, n: int, d: int, h: float) -> np.ndarray:
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return h * g * rng.uniform(size=(n, 1)) ** (1.0 / d)


def chain_step(x, h: float, domain: DomainSpec, density: DensitySpec, rng: np.random.Generator):
    """One Metropolis step from x.  Returns ``(new_x, accepted, rng)``.

    The proposal is uniform in B(x, h); proposals outside the domain are
    rejected; otherwise acceptance has probability min(rho(y)/rho(x), 1).
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    y = x + _uniform_ball(rng, 1, len(x), h)[0]
    u = rng.uniform()
    if not contains(domain, y):
        return x, False, rng
    if u < min(float(density(y)) / float(density(x)), 1.0):
        return y, True, rng
    return x, False, rng


def run_chains(domain: DomainSpec, density: DensitySpec, h: float, n_steps: int, n_chains: int,
               seed: int, x0=None, record_chain: int | None = None, batch: int = 2048):
    """Run independent chains in vectorized batches.

    Each batch draws from its own generator spawned from ``SeedSequence(seed)``
    so results do not depend on scheduling.  Returns ``(final, trace)`` where
    ``trace`` is ``(steps, coords, accepted)`` for chain ``record_chain`` or
    None.
    """
    d = domain.dim
    if x0 is None:
        lo, hi = domain.bounds()
        x0 = 0.5 * (lo + hi)
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if not contains(domain, x0):
        raise ValidationError("chain start point is outside the domain", "x0")
    nb = math.ceil(n_chains / batch)
    seqs = np.random.SeedSequence(seed).spawn(nb)
    final = np.empty((n_chains, d))
    trace = None
    for b, ss in enumerate(seqs):
        rng = np.random.default_rng(ss)
        lo_i = b * batch
        n = min(batch, n_chains - lo_i)
        x = np.tile(x0, (n, 1))
        rx = density(x)
        rec = None
        if record_chain is not None and lo_i <= record_chain < lo_i + n:
            rec = record_chain - lo_i
            coords = np.empty((n_steps + 1, d))
            acc_log = np.zeros(n_steps + 1, dtype=bool)
            coords[0] = x[rec]
        for t in range(n_steps):
            y = x + _uniform_ball(rng, n, d, h)
            u = rng.uniform(size=n)
            ok = contains(domain, y)
            ry = np.ones(n)
            if np.any(ok):
                ry[ok] = density(y[ok])
            ok &= u < np.minimum(ry / rx, 1.0)
            x[ok] = y[ok]
            rx[ok] = ry[ok]
            if rec is not None:
                coords[t + 1] = x[rec]
                acc_log[t + 1] = ok[rec]
        final[lo_i : lo_i + n] = x
        if rec is not None:
            trace = (np.arange(n_steps + 1), coords, acc_log)
    return final, trace


# ---------------------------------------------------------------------------
# discretized operator


def lattice_ball_volume(h: float, spacing: float, dim: int) -> float:
    """Cell volume times the number of lattice offsets o with |o| spacing < h (ties count 1/2)."""
    R = int(math.floor(h / spacing + 1e-6)) + 1
    rng = np.arange(-R, R + 1)
    grids = np.meshgrid(*([rng] * dim), indexing="ij")
    dist = spacing * np.sqrt(sum(g.astype(float) ** 2 for g in grids))
    tie = np.abs(dist - h) <= TIE_RTOL * h
    count = np.sum((dist < h) & ~tie) + 0.5 * np.sum(tie)
    return float(count) * spacing**dim


@dataclass(frozen=True)
class DiscretizedOperator:
    """Grid surrogate of T_{h,rho}.

    ``K`` is a CSR matrix with K[i, j] = k(x_i, x_j) w_j (diagonal included,
    zero beyond radius h); ``m`` is the rejection mass; ``rho`` the
    normalized density at the kernel evaluation points.
    """

    nodes: np.ndarray
    weights: np.ndarray
    h: float
    spacing: float
    K: sparse.csr_matrix
    m: np.ndarray
    rho: np.ndarray
    density: DensitySpec
    domain: DomainSpec
    ball_volume: float
    normalization: str = "lattice"
    clamped: int = 0
    cell_index: np.ndarray | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def grid_ratio(self) -> float:
        return self.h / self.spacing

    @property
    def mu(self) -> np.ndarray:
        """Stationary node measure rho_i w_i / sum."""
        v = self.rho * self.weights
        return v / v.sum()

    def apply(self, u):
        return apply_operator(self, u)

    def matrix(self) -> sparse.csr_matrix:
        """Full transition table P = diag(m) + K."""
        return (self.K + sparse.diags(self.m)).tocsr()

    def symmetrized(self) -> sparse.csr_matrix:
        """S = D^{1/2} P D^{-1/2} with D = diag(rho w); exactly symmetric."""
        r = np.sqrt(self.rho * self.weights)
        S = (sparse.diags(r) @ self.K @ sparse.diags(1.0 / r)).tocsr()
        # entries are symmetric up to rounding; average to make it exact
        S = 0.5 * (S + S.T)
        return (S + sparse.diags(self.m)).tocsr()

    def dense(self) -> np.ndarray:
        return self.matrix().toarray()


def assemble_operator(
    domain: DomainSpec,
    density: DensitySpec,
    h: float,
    grid_spacing: float | None = None,
    grid_ratio: float = 10.0,
    normalization: str = "lattice",
    quadrature: CellQuadrature | None = None,
    check_bounds: bool = True,
) -> DiscretizedOperator:
    """Assemble the discretized Metropolis operator.

    ``grid_spacing`` defaults to ``h / grid_ratio``.  Ratios below 5 are
    rejected.  The density is normalized on the same quadrature when it has
    not been normalized yet.  Measurable densities are evaluated at cell
    centers, smooth ones at the nodes.
    """
    if not h > 0:
        raise ValidationError("h must be positive", "h")
    if grid_spacing is None:
        grid_spacing = h / grid_ratio
    if h / grid_spacing < 5 - 1e-9:
        raise ValidationError(f"grid ratio h/delta = {h / grid_spacing:g} is below 5", "grid_ratio")
    if normalization not in ("lattice", "exact"):
        raise ValidationError("normalization must be 'lattice' or 'exact'")
    q = quadrature if quadrature is not None else cell_quadrature(domain, grid_spacing)
    if q.size == 0:
        raise ValidationError("empty node set")
    if not density.normalized:
        density = normalize(density, domain, quadrature=q)
    eval_pts = q.nodes
    if density.smoothness == "Measurable":
        lo, _ = q.cell_bounds()
        eval_pts = lo + 0.5 * q.spacing
    rho = np.asarray(density(eval_pts), dtype=float)
    if np.any(rho <= 0):
        raise ValidationError("density must be positive on nodes")
    if check_bounds:
        audit_bounds(density, eval_pts)
    d = domain.dim
    c = lattice_ball_volume(h, grid_spacing, d) if normalization == "lattice" else unit_ball_volume(d) * h**d

    # adjacency is decided on the cell-centre lattice: every neighbour set is
    # then a subset of the lattice ball, so sum_j w_j <= c and m_i >= 0
    centres = q.cell_bounds()[0] + 0.5 * q.spacing
    tree = cKDTree(centres)
    pairs = tree.query_pairs(h * (1 + TIE_RTOL), output_type="ndarray")
    i, j = pairs[:, 0], pairs[:, 1]
    dist = np.linalg.norm(centres[i] - centres[j], axis=1)
    tie = np.abs(dist - h) <= TIE_RTOL * h
    keep = (dist < h) | tie
    i, j, half = i[keep], j[keep], np.where(tie[keep], 0.5, 1.0)
    sym = half * np.minimum(rho[i], rho[j]) / c  # rho_i k_ij
    n = q.size
    rows = np.concatenate([i, j, np.arange(n)])
    cols = np.concatenate([j, i, np.arange(n)])
    vals = np.concatenate([sym / rho[i] * q.weights[j], sym / rho[j] * q.weights[i], q.weights / c])
    K = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    K.sum_duplicates()
    m = 1.0 - np.asarray(K.sum(axis=1)).ravel()
    bad = m < -NEG_MASS_TOL
    if np.any(bad):
        k = int(np.argmin(m))
        raise AssemblyError(
            f"negative rejection mass {m[k]:.3e} at node {k} (x = {q.nodes[k]}); "
            "the ball normalization is too small for this grid"
        )
    clamped = int(np.sum(m < 0))
    if clamped:
        # rescale the offending rows so that they sum to one with m = 0
        scale = np.ones(n)
        neg = m < 0
        scale[neg] = 1.0 / (1.0 - m[neg])
        K = sparse.diags(scale) @ K
        K = K.tocsr()
        m = np.where(neg, 0.0, m)
    return DiscretizedOperator(
        nodes=q.nodes,
        weights=q.weights,
        h=float(h),
        spacing=float(grid_spacing),
        K=K,
        m=m,
        rho=rho,
        density=density,
        domain=domain,
        ball_volume=c,
        normalization=normalization,
        clamped=clamped,
        cell_index=q.index,
    )


def apply_operator(op: DiscretizedOperator, u) -> np.ndarray:
    """(T u)_i = m_i u_i + sum_j K[i, j] u_j."""
    u = np.asarray(u)
    if u.shape[0] != op.size:
        raise ValidationError(f"vector length {u.shape[0]} differs from node count {op.size}")
    mu = op.m[:, None] * u if u.ndim == 2 else op.m * u
    return mu + op.K @ u


def dirichlet_form(op: DiscretizedOperator, f) -> float:
    """E_h(f) = <(1 - T) f, f>_rho with the normalized density."""
    f = np.asarray(f)
    r = f - apply_operator(op, f)
    return float(np.real(np.sum(op.rho * op.weights * r * np.conj(f))))


def dirichlet_form_double_sum(op: DiscretizedOperator, f) -> float:
    """The same form as 1/(2c) sum_ij 1{|x_i - x_j| < h} min(rho_i, rho_j) |f_i - f_j|^2 w_i w_j."""
    f = np.asarray(f)
    K = sparse.triu(op.K, k=1).tocoo()
    i, j = K.row, K.col
    # K_ij = half * min(rho_i, rho_j) w_j / (c rho_i)
    coef = K.data * op.rho[i] * op.weights[i]
    return float(np.sum(coef * np.abs(f[i] - f[j]) ** 2))


def _offset_weights(spacings, dims, scale: AnisotropicScale):
    """Integer offsets inside the anisotropic window with their tie weights."""
    d1, dp, dpp = dims
    blocks = [(0, 1, scale.h_bar), (1, 1 + dp, scale.h_tilde), (1 + dp, 1 + dp + dpp, scale.h)]
    R = [int(math.floor(blocks[0][2] / spacings[0] + 1e-6)) + 1]
    for a, b, s in blocks[1:]:
        R += [int(math.floor(s / spacings[k] + 1e-6)) + 1 for k in range(a, b)]
    ranges = [np.arange(-r, r + 1) for r in R]
    grids = np.meshgrid(*ranges, indexing="ij")
    off = np.stack([g.ravel() for g in grids], 1)
    wt = np.ones(len(off))
    for a, b, s in blocks:
        if b <= a:
            continue
        nrm = np.sqrt(np.sum((off[:, a:b] * np.asarray(spacings[a:b])) ** 2, axis=1))
        tie = np.abs(nrm - s) <= TIE_RTOL * s
        wt *= np.where(tie, 0.5, np.where(nrm < s, 1.0, 0.0))
    keep = wt > 0
    return off[keep], wt[keep]


def anisotropic_dirichlet_form(f, spacings, scale: AnisotropicScale, dims=None, rho=None,
                               check_resolution: bool = True) -> float:
    """Anisotropic form on a box sampled on a cell-centred tensor grid.

    E = 1/(2 V_d h^{d''} h_tilde^{d'} h_bar) int int 1{|x_1-y_1| < h_bar,
    |x'-y'| < h_tilde, |x''-y''| < h} |f(x)-f(y)|^2 dx dy, with Euclidean
    norms inside each block.  ``dims`` is (1, d', d''); the default puts all
    remaining axes in x'.  An optional ``rho`` grid inserts min(rho(x), rho(y)).
    """
    f = np.asarray(f)
    d = f.ndim
    if dims is None:
        dims = (1, d - 1, 0)
    if dims[0] != 1 or sum(dims) != d:
        raise ValidationError(f"dims {dims} do not split a {d}-dimensional grid")
    spacings = np.broadcast_to(np.asarray(spacings, dtype=float), (d,))
    scales = [scale.h_bar] + [scale.h_tilde] * dims[1] + [scale.h] * dims[2]
    if check_resolution:
        need = min(scales) / 10.0
        if np.max(spacings) > need * (1 + 1e-9):
            raise ValidationError(
                f"grid spacing {np.max(spacings):.4g} too coarse; need at most {need:.4g} (min scale / 10)"
            )
    off, wt = _offset_weights(spacings, dims, scale)
    dv = float(np.prod(spacings))
    tot = 0.0
    for o, w in zip(off, wt):
        # only half of the symmetric offsets; the pair (x, y) and (y, x) give a factor 2
        nz = np.nonzero(o)[0]
        if len(nz) == 0 or o[nz[0]] < 0:
            continue
        src = tuple(slice(0, f.shape[k] - o[k]) if o[k] >= 0 else slice(-o[k], f.shape[k]) for k in range(d))
        dst = tuple(slice(o[k], f.shape[k]) if o[k] >= 0 else slice(0, f.shape[k] + o[k]) for k in range(d))
        diff = np.abs(f[src] - f[dst]) ** 2
        if rho is not None:
            diff = diff * np.minimum(rho[src], rho[dst])
        tot += 2.0 * w * float(np.sum(diff))
    pref = 1.0 / (2.0 * unit_ball_volume(d) * scale.volume(dims[1], dims[2]))
    return pref * tot * dv * dv
