"""Target densities with two-sided bounds m <= rho <= M.

A density is a named builtin family plus parameters.  ``raw`` evaluates the
unnormalized family; ``__call__`` divides by the normalization ``Z`` so that
the density integrates to one over the attached domain once
:func:`normalize` has been applied.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np

from .errors import ValidationError
from .geometry import CellQuadrature, DomainSpec, cell_quadrature

FAMILIES = ("constant", "affine", "gaussian", "piecewise")
SMOOTHNESS = ("C1", "Measurable")

__all__ = ["DensitySpec", "normalize", "weighted_inner_product", "audit_bounds", "FAMILIES"]


def _freeze(params: Mapping[str, Any]) -> tuple:
    out = []
    for k in sorted(params):
        v = params[k]
        if isinstance(v, (list, tuple, np.ndarray)):
            v = tuple(float(t) for t in np.asarray(v, dtype=float).ravel())
        elif isinstance(v, (int, float, np.floating, np.integer)) and not isinstance(v, bool):
            v = float(v)
        out.append((k, v))
    return tuple(out)


@dataclass(frozen=True)
class DensitySpec:
    """Density rho on a domain.

    Families and their parameters:

    * ``constant``: ``value`` (default 1).
    * ``affine``: ``c0`` plus ``slope`` (one entry per axis), rho = c0 + slope . x.
    * ``gaussian``: ``mean``, ``sigma``; rho = exp(-|x - mean|^2 / (2 sigma^2)).
    * ``piecewise``: ``axis``, ``threshold``, ``below``, ``above``; rho equals
      ``below`` where x[axis] < threshold and ``above`` otherwise.

    ``lower`` and ``upper`` are the declared bounds m and M of the normalized
    density; they are audited on nodes, never inferred.  Leaving both unset
    skips the audit.
    """

    family: str = "constant"
    params: tuple = ()
    lower: float | None = None
    upper: float | None = None
    smoothness: str = "C1"
    Z: float = 1.0
    normalized: bool = False

    def __post_init__(self):
        if isinstance(self.params, Mapping):
            object.__setattr__(self, "params", _freeze(self.params))
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown density family {self.family!r}", "density.family")
        if self.smoothness not in SMOOTHNESS:
            raise ValidationError(f"smoothness must be one of {SMOOTHNESS}", "density.smoothness")
        if (self.lower is None) != (self.upper is None):
            raise ValidationError("declare both bounds m and M or neither", "density.m")
        if self.lower is not None and not (0.0 < self.lower <= self.upper):
            raise ValidationError("density bounds need 0 < m <= M", "density.m")
        if not self.Z > 0:
            raise ValidationError("normalization Z must be positive", "density.Z")
        if self.family == "piecewise" and self.smoothness == "C1":
            p = self.param_dict
            if p.get("below", 1.0) != p.get("above", 1.0):
                raise ValidationError("a piecewise density with a jump is not C1", "density.smoothness")

    @property
    def param_dict(self) -> dict:
        return dict(self.params)

    def raw(self, x) -> np.ndarray:
        """Unnormalized density at points of shape (N, d) or (d,)."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        p = self.param_dict
        if self.family == "constant":
            val = np.full(len(pts), float(p.get("value", 1.0)))
        elif self.family == "affine":
            slope = np.asarray(p.get("slope", (0.0,) * pts.shape[1]), dtype=float)
            if slope.shape != (pts.shape[1],):
                raise ValidationError("affine slope length must equal the dimension", "density.params.slope")
            val = float(p.get("c0", 1.0)) + pts @ slope
        elif self.family == "gaussian":
            mean = np.asarray(p.get("mean", (0.0,) * pts.shape[1]), dtype=float)
            sigma = float(p.get("sigma", 1.0))
            val = np.exp(-np.sum((pts - mean) ** 2, axis=1) / (2.0 * sigma * sigma))
        else:
            axis = int(p.get("axis", 0))
            thr = float(p.get("threshold", 0.0))
            val = np.where(pts[:, axis] < thr, float(p.get("below", 1.0)), float(p.get("above", 1.0)))
        return val[0] if single else val

    def __call__(self, x):
        return self.raw(x) / self.Z

    def with_Z(self, Z: float) -> "DensitySpec":
        return dataclasses.replace(self, Z=float(Z), normalized=True)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "params": {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.params},
            "m": self.lower,
            "M": self.upper,
            "smoothness": self.smoothness,
            "Z": self.Z,
        }


def normalize(density: DensitySpec, domain: DomainSpec, spacing: float | None = None,
              quadrature: CellQuadrature | None = None) -> DensitySpec:
    """Return a copy with Z chosen so the quadrature mass over the domain is 1.

    Uses the supplied cell quadrature or builds one with the given spacing.
    The original evaluator is untouched.
    """
    if quadrature is None:
        if spacing is None:
            lo, hi = domain.bounds()
            spacing = float(np.min(hi - lo)) / 200.0
        quadrature = cell_quadrature(domain, spacing)
    vals = density.raw(quadrature.nodes)
    if np.any(~np.isfinite(vals)) or np.any(vals <= 0):
        raise ValidationError("density must be positive on every node", "density")
    mass = float(np.sum(vals * quadrature.weights))
    if not (mass > 0 and np.isfinite(mass)):
        raise ValidationError(f"quadrature mass {mass!r} is not a positive number", "density")
    return density.with_Z(mass)


def audit_bounds(density: DensitySpec, nodes: np.ndarray, rtol: float = 1e-9) -> None:
    """Raise if the normalized density leaves [m, M] on any node."""
    if density.lower is None:
        return
    vals = density(nodes)
    lo, hi = float(np.min(vals)), float(np.max(vals))
    if lo < density.lower * (1 - rtol) or hi > density.upper * (1 + rtol):
        raise ValidationError(
            f"density range [{lo:.6g}, {hi:.6g}] on nodes leaves declared bounds "
            f"[{density.lower:g}, {density.upper:g}]",
            "density",
        )


def weighted_inner_product(u, v, rho, weights) -> complex | float:
    """Sum of u_i conj(v_i) rho_i w_i.

    ``rho`` may be a node vector or a :class:`DensitySpec` paired with node
    coordinates passed as ``(density, nodes)``.
    """
    u = np.asarray(u)
    v = np.asarray(v)
    if isinstance(rho, tuple):
        dens, nodes = rho
        rho = dens(nodes)
    rho = np.asarray(rho, dtype=float)
    w = np.asarray(weights, dtype=float)
    if not (u.shape == v.shape == rho.shape == w.shape):
        raise ValidationError(f"length mismatch: {u.shape}, {v.shape}, {rho.shape}, {w.shape}")
    out = np.sum(u * np.conj(v) * rho * w)
    return float(out.real) if np.isrealobj(u) and np.isrealobj(v) else complex(out)
