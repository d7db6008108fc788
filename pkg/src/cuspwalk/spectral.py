"""Spectral analysis of the discretized Metropolis operator.

Everything here works with the symmetrized matrix S = D^{1/2} T D^{-1/2},
D = diag(rho_i w_i), which is exactly symmetric and shares the spectrum of
T.  Eigenvectors are mapped back to the original coordinates and normalized
in L^2(rho).

The rescaled spectrum (1 - lambda)/h^2 is compared to the weighted Neumann
operator -(1/(2(d+2))) rho^{-1} div(rho grad u), whose constant comes from
the second moment of the uniform ball.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg, sparse
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh, splu

from .errors import ConvergenceError, NumericalError, ValidationError
from .geometry import DomainSpec, cell_quadrature, contains
from .kernel import DiscretizedOperator, assemble_operator
from .measure import DensitySpec, normalize

__all__ = [
    "SpectralReport",
    "TVReport",
    "Cluster",
    "limit_constant",
    "eigen_top",
    "eigen_bottom",
    "spectral_gap",
    "gap_with_error",
    "cluster_values",
    "rescaled_spectrum",
    "neumann_reference",
    "spectrum_localization_check",
    "tv_decay",
    "operator_splitting_diagnostic",
    "spectral_report",
]

DENSE_THRESHOLD = 2500


def limit_constant(d: int) -> float:
    """1/(2(d+2)), the second moment of the normalized ball indicator halved."""
    return 1.0 / (2.0 * (d + 2.0))


@dataclass
class Cluster:
    center: float
    multiplicity: int
    members: list

    def to_dict(self) -> dict:
        return {"center": self.center, "multiplicity": self.multiplicity, "members": list(self.members)}


@dataclass
class SpectralReport:
    h: float
    grid_spacing: float
    gap: float
    gap_error: float | None
    top_eigenvalues: list
    rescaled: list
    clusters: list
    min_eigenvalue: float
    sup_rejection: float
    reference_eigenvalues: list
    constant_used: float
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["clusters"] = [c.to_dict() if isinstance(c, Cluster) else c for c in self.clusters]
        return d

    def csv_row(self) -> dict:
        return {
            "h": self.h,
            "delta": self.grid_spacing,
            "gap": self.gap,
            "gap_over_h2": self.gap / self.h**2,
            "min_eig": self.min_eigenvalue,
            "sup_m": self.sup_rejection,
        }


@dataclass
class TVReport:
    h: float
    n_values: list
    tv_values: list
    fitted_rate: float
    fitted_prefactor: float
    gap: float
    bound_constant: float
    partial: bool = False
    start_nodes: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# ---------------------------------------------------------------------------
# eigen solvers


def _to_original(op: DiscretizedOperator, vecs: np.ndarray) -> np.ndarray:
    """Map eigenvectors of S back to T and normalize in L^2(rho)."""
    r = np.sqrt(op.rho * op.weights)
    u = vecs / r[:, None]
    nrm = np.sqrt(np.sum(op.rho[:, None] * op.weights[:, None] * u * u, axis=0))
    u = u / nrm
    # fix the sign: largest-magnitude entry positive (deterministic output)
    idx = np.argmax(np.abs(u), axis=0)
    sgn = np.sign(u[idx, np.arange(u.shape[1])])
    sgn[sgn == 0] = 1
    return u * sgn


def eigen_top(op: DiscretizedOperator, count: int, tol: float = 1e-10, method: str = "auto",
              dense_threshold: int = DENSE_THRESHOLD, maxiter: int | None = None):
    """Largest ``count`` eigenpairs of T, in decreasing order.

    Dense symmetric solve below ``dense_threshold`` nodes; otherwise Lanczos
    (ARPACK) on S with the constant mode sqrt(mu) deflated, and the pair
    (1, constant) prepended.  Returns ``(values, vectors, info)``.
    """
    if count < 1:
        raise ValidationError("count must be at least 1")
    n = op.size
    count = min(count, n)
    S = op.symmetrized()
    if method == "auto":
        method = "dense" if n <= dense_threshold else "iterative"
    if method == "dense" or count >= n - 1:
        w, v = linalg.eigh(S.toarray(), subset_by_index=[n - count, n - 1])
        order = np.argsort(w)[::-1]
        info = {"method": "dense", "iterations": 0, "residual": 0.0}
        return w[order], _to_original(op, v[:, order]), info
    q = np.sqrt(op.mu)
    A = LinearOperator(S.shape, matvec=lambda x: S @ x - q * (q @ x), dtype=float)
    k = count - 1
    if k == 0:
        vals, vecs = np.array([1.0]), q[:, None]
    else:
        try:
            w, v = eigsh(A, k=k, which="LA", tol=tol, maxiter=maxiter,
                         v0=np.ones(n) / math.sqrt(n) - q * (q.sum() / math.sqrt(n)) + 1e-3 * np.cos(np.arange(n)))
        except ArpackNoConvergence as exc:
            res = float("nan")
            raise ConvergenceError("Lanczos iteration did not converge", iterations=maxiter or 10 * n, residual=res) from exc
        order = np.argsort(w)[::-1]
        vals = np.concatenate([[1.0], w[order]])
        vecs = np.concatenate([q[:, None], v[:, order]], axis=1)
    resid = np.linalg.norm(S @ vecs - vecs * vals, axis=0)
    if np.max(resid) > max(1e3 * tol, 1e-7):
        raise ConvergenceError("eigenpairs fail the residual check", residual=float(np.max(resid)))
    info = {"method": "iterative", "iterations": None, "residual": float(np.max(resid))}
    return vals, _to_original(op, vecs), info


def eigen_bottom(op: DiscretizedOperator, tol: float = 1e-10) -> float:
    """Smallest eigenvalue of T."""
    S = op.symmetrized()
    if op.size <= DENSE_THRESHOLD:
        return float(linalg.eigh(S.toarray(), eigvals_only=True, subset_by_index=[0, 0])[0])
    try:
        w = eigsh(S, k=1, which="SA", tol=tol, return_eigenvectors=False)
    except ArpackNoConvergence as exc:
        raise ConvergenceError("Lanczos iteration for the bottom eigenvalue did not converge") from exc
    return float(w[0])


def spectral_gap(op: DiscretizedOperator, tol: float = 1e-10, simple_tol: float = 1e-9) -> float:
    """g = 1 - lambda_2.  Raises when 1 is not simple (disconnected grid graph)."""
    vals, _, _ = eigen_top(op, 2, tol=tol)
    if op.size > DENSE_THRESHOLD:
        # the iterative path prepends 1 by construction; check connectivity directly
        ncomp = sparse.csgraph.connected_components(op.K, directed=False)[0]
        if ncomp > 1:
            raise NumericalError(f"eigenvalue 1 is not simple: the grid graph has {ncomp} components")
    if vals[1] > 1 - simple_tol:
        raise NumericalError("eigenvalue 1 is not simple: the grid graph is disconnected")
    return float(1.0 - vals[1])


def gap_with_error(domain: DomainSpec, density: DensitySpec, h: float, grid_ratio: float = 10.0,
                   companion: float = 0.5, **kw) -> tuple[float, float, DiscretizedOperator]:
    """Gap on the grid delta = h/grid_ratio with a Richardson error bar.

    The error bar is |g_delta - g_{companion * delta}|.  ``companion = 0.5``
    refines the grid; 2.0 coarsens it (cheaper, needs grid_ratio >= 10).
    """
    op = assemble_operator(domain, density, h, grid_ratio=grid_ratio, **kw)
    g = spectral_gap(op)
    op2 = assemble_operator(domain, density, h, grid_ratio=grid_ratio / companion, **kw)
    g2 = spectral_gap(op2)
    return g, abs(g - g2), op


def cluster_values(values: Sequence[float], eps: float) -> list[Cluster]:
    """Group sorted values whose consecutive distance is at most eps."""
    vals = np.sort(np.asarray(values, dtype=float))
    out: list[Cluster] = []
    cur: list[float] = []
    for v in vals:
        if cur and v - cur[-1] > eps:
            out.append(Cluster(float(np.mean(cur)), len(cur), [float(t) for t in cur]))
            cur = []
        cur.append(float(v))
    if cur:
        out.append(Cluster(float(np.mean(cur)), len(cur), [float(t) for t in cur]))
    return out


def rescaled_spectrum(op: DiscretizedOperator, R: float, eps_cluster: float | None = None,
                      richardson_error: float = 0.0, start: int = 8):
    """Rescaled eigenvalues (1 - lambda)/h^2 in (0, R] and their clusters.

    The cluster tolerance defaults to max(0.05 nu_1, 3 * richardson_error),
    with nu_1 the first rescaled value.  Returns ``(values, clusters)``.
    """
    if not R > 0:
        raise ValidationError("R must be positive")
    k = start
    while True:
        vals, _, _ = eigen_top(op, min(k, op.size))
        resc = (1.0 - vals[1:]) / op.h**2
        if resc.size and (resc.max() > R or k >= op.size):
            break
        if k >= op.size:
            break
        k *= 2
    inside = np.sort(resc[(resc > 0) & (resc <= R)])
    if inside.size == 0:
        return inside, []
    if eps_cluster is None:
        eps_cluster = max(0.05 * inside[0], 3.0 * richardson_error)
    return inside, cluster_values(inside, eps_cluster)


# ---------------------------------------------------------------------------
# Neumann reference


def _face_fraction(domain: DomainSpec, centre: np.ndarray, axis: int, spacing: float, samples: int = 256) -> np.ndarray:
    """Fraction of each grid face (normal to ``axis``, centred at ``centre``) lying in the domain."""
    d = domain.dim
    if d == 1:
        return contains(domain, centre).astype(float)
    t = (np.arange(samples) + 0.5) / samples - 0.5
    others = [a for a in range(d) if a != axis]
    if d == 2:
        pts = np.repeat(centre[:, None, :], samples, axis=1)
        pts[:, :, others[0]] += spacing * t[None, :]
    else:
        side = int(round(samples ** (1.0 / (d - 1))))
        tt = (np.arange(side) + 0.5) / side - 0.5
        grid = np.stack(np.meshgrid(*([tt] * (d - 1)), indexing="ij"), -1).reshape(-1, d - 1)
        pts = np.repeat(centre[:, None, :], len(grid), axis=1)
        for k, a in enumerate(others):
            pts[:, :, a] += spacing * grid[None, :, k]
    shape = pts.shape
    inside = contains(domain, pts.reshape(-1, d)).reshape(shape[:2])
    return inside.mean(axis=1)


def _neumann_matrices(domain: DomainSpec, density: DensitySpec, spacing: float):
    q = cell_quadrature(domain, spacing)
    if not density.normalized:
        density = normalize(density, domain, quadrature=q)
    rho = density(q.nodes)
    n = q.size
    lookup = {tuple(ix): i for i, ix in enumerate(q.index)}
    rows, cols, vals = [], [], []
    lo, _ = q.cell_bounds()
    for axis in range(domain.dim):
        e = np.zeros(domain.dim, dtype=int)
        e[axis] = 1
        nb = np.array([lookup.get(tuple(ix + e), -1) for ix in q.index])
        have = nb >= 0
        i = np.nonzero(have)[0]
        j = nb[have]
        face_centre = lo[i] + 0.5 * spacing
        face_centre[:, axis] = lo[i, axis] + spacing
        frac = _face_fraction(domain, face_centre, axis, spacing)
        area = frac * spacing ** (domain.dim - 1)
        xf = face_centre
        rf = density(xf) if density.smoothness == "C1" else 0.5 * (rho[i] + rho[j])
        c = area / spacing * rf
        ok = c > 0
        rows += [i[ok], j[ok]]
        cols += [j[ok], i[ok]]
        vals += [-c[ok], -c[ok]]
    r = np.concatenate(rows)
    cc = np.concatenate(cols)
    v = np.concatenate(vals)
    L = sparse.csr_matrix((v, (r, cc)), shape=(n, n))
    L = L - sparse.diags(np.asarray(L.sum(axis=1)).ravel())
    W = rho * q.weights
    return L.tocsc(), W


def _neumann_eigs(domain, density, spacing, count):
    L, W = _neumann_matrices(domain, density, spacing)
    n = L.shape[0]
    if n <= DENSE_THRESHOLD:
        w = linalg.eigh(L.toarray(), np.diag(W), eigvals_only=True, subset_by_index=[0, min(count, n) - 1])
        return np.sort(w)
    # shift-invert about a small negative shift, generalized problem L u = nu W u
    Wm = sparse.diags(W).tocsc()
    sigma = -1e-3 * float(np.max(np.abs(L.diagonal())) / np.max(W)) * 1e-3
    w = eigsh(L, k=count, M=Wm, sigma=sigma, which="LM", return_eigenvectors=False, tol=1e-10)
    return np.sort(w)


def neumann_reference(domain: DomainSpec, density: DensitySpec, mode_count: int, spacing: float,
                      extrapolate: bool = True, order: float = 2.0):
    """Lowest eigenvalues nu_j of -(1/(2(d+2))) rho^{-1} div(rho grad u), Neumann conditions.

    Finite volumes on the cell grid (a weighted graph Laplacian): face
    conductances are the face measure inside the domain over the spacing,
    times rho at the face centre.  Values on ``spacing`` and ``spacing/2``
    are Richardson-extrapolated with the given order.  Returns ``(values,
    clusters, info)``.
    """
    if density.smoothness != "C1":
        raise ValidationError("the Neumann reference needs a C1 density", "density.smoothness")
    c = limit_constant(domain.dim)
    nu1 = c * _neumann_eigs(domain, density, spacing, mode_count)
    info = {"spacing": spacing, "extrapolated": False}
    vals = nu1
    if extrapolate:
        nu2 = c * _neumann_eigs(domain, density, spacing / 2, mode_count)
        f = 2.0**order
        vals = (f * nu2 - nu1) / (f - 1.0)
        info.update(extrapolated=True, error=np.abs(nu2 - nu1).tolist())
    vals = np.where(np.abs(vals) < 1e-10, 0.0, vals)
    eps = 0.05 * (vals[1] if len(vals) > 1 and vals[1] > 0 else 1.0)
    return vals, cluster_values(vals, eps), info


# ---------------------------------------------------------------------------
# localization and gap reports


def spectrum_localization_check(ops: Sequence[DiscretizedOperator], gamma: float) -> dict:
    """Fit log(1 - sup m) against log h and the bottom-of-spectrum constant.

    Returns slope and intercept of the fit, c_m = min (1 - sup m)/h^gamma and
    c_min = min (lambda_min + 1)/h^gamma over the sweep.
    """
    if len(ops) < 3:
        raise ValidationError("the localization fit needs at least three sweep points")
    hs = np.array([op.h for op in ops])
    sup_m = np.array([float(np.max(op.m)) for op in ops])
    lam_min = np.array([eigen_bottom(op) for op in ops])
    slope, intercept = np.polyfit(np.log(hs), np.log(1.0 - sup_m), 1)
    return {
        "h": hs.tolist(),
        "sup_m": sup_m.tolist(),
        "min_eig": lam_min.tolist(),
        "slope": float(slope),
        "intercept": float(intercept),
        "gamma": float(gamma),
        "c_m": float(np.min((1.0 - sup_m) / hs**gamma)),
        "c_min": float(np.min((lam_min + 1.0) / hs**gamma)),
    }


def spectral_report(op: DiscretizedOperator, R: float = 10.0, gap_error: float | None = None,
                    reference: Sequence[float] | None = None, seed: int | None = None) -> SpectralReport:
    """Collect gap, rescaled clusters, bottom eigenvalue and rejection mass of one operator."""
    resc, clusters = rescaled_spectrum(op, R, richardson_error=gap_error / op.h**2 if gap_error else 0.0)
    vals, _, info = eigen_top(op, min(len(resc) + 2, op.size))
    gap = float(1.0 - vals[1])
    return SpectralReport(
        h=op.h,
        grid_spacing=op.spacing,
        gap=gap,
        gap_error=gap_error,
        top_eigenvalues=[float(v) for v in vals],
        rescaled=[float(v) for v in resc],
        clusters=clusters,
        min_eigenvalue=eigen_bottom(op),
        sup_rejection=float(np.max(op.m)),
        reference_eigenvalues=[float(v) for v in reference] if reference is not None else [],
        constant_used=limit_constant(op.dim),
        provenance={"seed": seed, "solver": info["method"], "residual": info["residual"],
                    "grid_ratio": op.grid_ratio, "nodes": op.size, "normalization": op.normalization},
    )


# ---------------------------------------------------------------------------
# total variation


def _schedule(n_max: int, points: int = 40) -> np.ndarray:
    n = np.unique(np.round(np.geomspace(1, max(n_max, 1), points)).astype(int))
    return np.concatenate([[0], n])


def _fit_tail(ns: np.ndarray, tv: np.ndarray, floor: float = 1e-9) -> tuple[float, float]:
    """Fit tv ~ A exp(-r n) on the second half of the schedule above ``floor``."""
    ok = tv > floor
    ns, tv = ns[ok], tv[ok]
    if len(ns) < 3:
        raise NumericalError("not enough resolved TV values for a tail fit")
    cut = ns >= ns[-1] / 2
    if np.sum(cut) < 3:
        cut = np.arange(len(ns)) >= len(ns) - 3
    slope, icpt = np.polyfit(ns[cut], np.log(tv[cut]), 1)
    return float(-slope), float(math.exp(icpt))


def _start_nodes(op: DiscretizedOperator, vec2: np.ndarray | None, count: int) -> np.ndarray:
    n = op.size
    picks = set(np.argsort(op.m)[-count // 4 :].tolist())
    if vec2 is not None:
        picks |= set(np.argsort(vec2)[: count // 8].tolist()) | set(np.argsort(vec2)[-count // 8 :].tolist())
    stride = max(1, n // max(1, count - len(picks)))
    picks |= set(range(0, n, stride))
    return np.array(sorted(picks))[: max(count, 1) * 2]


def tv_decay(op: DiscretizedOperator, n_max: int | None = None, n_values: Sequence[int] | None = None,
             gamma: float | None = None, dense_limit: int = 4000, start_count: int = 48,
             horizon: float = 6.0) -> TVReport:
    """sup_x TV(t^n(x, .), mu) on a geometric schedule of n.

    Dense path (<= ``dense_limit`` nodes): all rows, through the eigen
    decomposition of S.  Sparse path: distributions started from a subset of
    nodes (highest rejection mass, extremes of the second eigenvector and a
    stride sample) are propagated step by step; the report is flagged
    partial since the supremum runs over a subset.
    """
    vals, vecs, _ = eigen_top(op, 2)
    g = float(1.0 - vals[1])
    if gamma is None:
        gamma = op.domain.gamma
    if n_values is None:
        if n_max is None:
            n_max = int(math.ceil(horizon / g))
        ns = _schedule(n_max)
    else:
        ns = np.unique(np.asarray(n_values, dtype=int))
    mu = op.mu
    tv = np.empty(len(ns))
    partial = False
    if op.size <= dense_limit:
        S = op.symmetrized().toarray()
        lam, V = linalg.eigh(S)
        sq = np.sqrt(mu)
        ratio = sq[None, :] / sq[:, None]
        for k, n in enumerate(ns):
            Tn = (V * lam**n) @ V.T * ratio
            tv[k] = 0.5 * np.max(np.sum(np.abs(Tn - mu[None, :]), axis=1))
        starts = op.size
    else:
        partial = True
        idx = _start_nodes(op, vecs[:, 1], start_count)
        PT = op.matrix().T.tocsr()
        X = np.zeros((op.size, len(idx)))
        X[idx, np.arange(len(idx))] = 1.0
        cur = 0
        for k, n in enumerate(ns):
            while cur < n:
                X = PT @ X
                cur += 1
            tv[k] = 0.5 * np.max(np.sum(np.abs(X - mu[:, None]), axis=0))
        starts = len(idx)
    tv = np.clip(tv, 0.0, 1.0)
    rate, pref = _fit_tail(ns.astype(float), tv)
    d = op.dim
    bound_c = float(np.max(tv * op.h ** (gamma + d / 2.0) * np.exp(ns * g)))
    return TVReport(
        h=op.h,
        n_values=[int(n) for n in ns],
        tv_values=[float(t) for t in tv],
        fitted_rate=rate,
        fitted_prefactor=pref,
        gap=g,
        bound_constant=bound_c,
        partial=partial,
        start_nodes=int(starts),
    )


def operator_splitting_diagnostic(op: DiscretizedOperator, p_max: int, gamma: float | None = None,
                                  rows: Sequence[int] | None = None, dense_limit: int = 4000) -> dict:
    """A_p = diag(m)^p and B_{p+1} = m B_p + K T^p, with T^p = A_p + B_p checked.

    Norms: ||A_p||_{inf->inf} = (sup m)^p and ||B_p||_{L^2(mu)->L^inf} =
    max_i sqrt(sum_j B_p[i,j]^2 / mu_j).  Rows default to all nodes when the
    operator is small enough; otherwise pass ``rows`` (result flagged partial).
    """
    if p_max < 1:
        raise ValidationError("p_max must be at least 1")
    n = op.size
    if rows is None:
        if n > dense_limit:
            raise ValidationError(f"{n} nodes exceed the dense regime ({dense_limit}); pass a row subset")
        rows = np.arange(n)
    rows = np.asarray(rows, dtype=int)
    gamma = op.domain.gamma if gamma is None else gamma
    mu = op.mu
    PT = op.matrix().T.tocsr()
    m_r = op.m[rows]
    # row blocks stored transposed (columns = selected rows)
    Z = np.zeros((n, len(rows)))
    Z[rows, np.arange(len(rows))] = 1.0  # T^0 rows
    Y = np.asarray(op.K[rows].toarray().T)  # rows of K T^0
    B = Y.copy()  # B_1 = K
    Z = PT @ Z  # T^1 rows
    sup_m = float(np.max(op.m))
    out_p, a_norm, b_norm, resid = [], [], [], []
    for p in range(1, p_max + 1):
        A_diag = m_r**p
        T_rows = Z
        r = T_rows - B
        r[rows, np.arange(len(rows))] -= A_diag
        resid.append(float(np.max(np.abs(r))))
        out_p.append(p)
        a_norm.append(sup_m**p)
        b_norm.append(float(np.max(np.sqrt(np.sum(B**2 / mu[:, None], axis=0)))))
        if p == p_max:
            break
        Y = PT @ Y  # rows of K T^p
        B = m_r[None, :] * B + Y
        Z = PT @ Z
    d = op.dim
    return {
        "h": op.h,
        "p": out_p,
        "A_norm": a_norm,
        "B_norm": b_norm,
        "residual": float(max(resid)),
        "sup_m": sup_m,
        "B_constant": float(max(b_norm) * op.h ** (gamma + d / 2.0)),
        "partial": len(rows) < n,
    }
