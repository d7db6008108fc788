"""Batch experiment runner.

``cuspwalk run CONFIG`` executes one experiment kind over the configured h
values.  Sweep points go to a bounded process pool; results come back in
submission order and a single writer in the parent process persists them, so
the bytes on disk do not depend on scheduling.  Every report embeds the
resolved config and the package version.

Exit codes: 0 success, 2 validation failure, 3 numerical failure.  A sweep in
which some points fail still writes the completed points and exits nonzero.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .config import ExperimentConfig, load_config
from .errors import CuspwalkError, NumericalError, ValidationError
from .io import format_csv, to_jsonable, write_json, write_text

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3

# Column order of the main CSV per experiment kind (documented in README).
CSV_COLUMNS: dict[str, tuple[str, ...]] = {
    "gap-sweep": ("h", "delta", "nodes", "gap", "gap_error", "gap_over_h2", "gap_error_over_h2", "limit"),
    "spectrum": ("h", "delta", "gap", "gap_over_h2", "min_eig", "sup_m"),
    "tv": ("h", "n", "tv"),
    "localization": ("h", "delta", "sup_m", "one_minus_sup_m", "min_eig"),
    "gn-table": ("n", "xi", "value"),
    "glue": ("h", "trial", "l2_ratio", "h1_ratio", "trace_residual"),
    "decompose": ("h", "index", "eigenvalue", "fH_over_h", "grad_fL", "C0", "collar_max_x1",
                  "reconstruction_residual", "interpolation_residual"),
    "sample": ("h", "bin", "lo", "hi", "empirical", "stationary"),
}


@dataclass
class PointResult:
    index: int
    h: float | None
    status: str = "ok"
    error: str | None = None
    result: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    summary: str = ""

    def to_dict(self) -> dict:
        d = {"index": self.index, "h": self.h, "status": self.status, "result": self.result}
        if self.error is not None:
            d["error"] = self.error
        return d


def point_seed(seed: int, index: int) -> int:
    """Independent 64-bit seed for sweep point ``index``."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0])


def check_kind(cfg: ExperimentConfig) -> None:
    """Kind-specific requirements on top of the generic config checks."""
    if cfg.kind != "gn-table" and not cfg.h_values:
        raise ValidationError("this experiment needs h_values", "h_values")
    if cfg.kind == "decompose":
        if cfg.domain.type != "model-cusp":
            raise ValidationError("decompose runs on the model cusp", "domain.type")
        if cfg.domain.d_prime != 1:
            raise ValidationError("decompose needs d_prime = 1", "domain.d_prime")
    if cfg.kind == "localization":
        if len(cfg.h_values) < 2:
            raise ValidationError("the localization fit needs at least two h values", "h_values")
        if not cfg.domain.build().cusp_charts:
            raise ValidationError("localization needs a cusp domain", "domain.type")
    if cfg.kind == "glue":
        lam = cfg.option("lam", [4.0, 4.0, 1.0])
        if not (isinstance(lam, list) and len(lam) == 3 and all(float(v) > 0 for v in lam)):
            raise ValidationError("lam must list three positive weights", "options.lam")


def _points(cfg: ExperimentConfig) -> list[tuple[int, float | None]]:
    if cfg.kind == "gn-table":
        return [(0, None)]
    return list(enumerate(cfg.h_values))


# ---------------------------------------------------------------------------
# per-point work (runs in worker processes)


def _operator(cfg: ExperimentConfig, h: float):
    from .kernel import assemble_operator

    return assemble_operator(cfg.domain.build(), cfg.density, h, grid_ratio=cfg.grid_ratio)


def _gap_sweep(cfg, index, h):
    from .spectral import gap_with_error, limit_constant

    dom = cfg.domain.build()
    g, err, op = gap_with_error(dom, cfg.density, h, cfg.grid_ratio, companion=float(cfg.option("companion", 0.5)))
    limit = None
    if cfg.domain.type == "box" and cfg.density.family == "constant":
        side = max(b - a for a, b in zip(cfg.domain.lo, cfg.domain.hi))
        limit = limit_constant(dom.dim) * math.pi**2 / side**2
    row = {"h": h, "delta": op.spacing, "nodes": op.size, "gap": g, "gap_error": err,
           "gap_over_h2": g / h**2, "gap_error_over_h2": err / h**2, "limit": limit}
    return dict(row), [row], f"gap={g:.6e} gap/h^2={g / h**2:.5f} +- {err / h**2:.1e}"


def _spectrum(cfg, index, h):
    from .spectral import spectral_report

    op = _operator(cfg, h)
    rep = spectral_report(op, R=float(cfg.option("R", 10.0)), seed=cfg.seed)
    mult = [c.multiplicity for c in rep.clusters]
    return rep.to_dict(), [rep.csv_row()], f"gap/h^2={rep.gap / h**2:.5f} clusters={mult} min_eig={rep.min_eigenvalue:.4f}"


def _tv(cfg, index, h):
    from .spectral import tv_decay

    op = _operator(cfg, h)
    rep = tv_decay(op, n_max=cfg.option("n_max"), gamma=op.domain.gamma,
                   horizon=float(cfg.option("horizon", 6.0)))
    rows = [{"h": h, "n": n, "tv": t} for n, t in zip(rep.n_values, rep.tv_values)]
    rel = abs(rep.fitted_rate - rep.gap) / rep.gap
    return rep.to_dict(), rows, f"rate={rep.fitted_rate:.5e} gap={rep.gap:.5e} rel={rel:.3f} C={rep.bound_constant:.4f}"


def _localization(cfg, index, h):
    from .spectral import eigen_bottom

    op = _operator(cfg, h)
    sup_m = float(np.max(op.m))
    lam = eigen_bottom(op)
    row = {"h": h, "delta": op.spacing, "sup_m": sup_m, "one_minus_sup_m": 1.0 - sup_m, "min_eig": lam}
    return dict(row), [row], f"1-sup m={1 - sup_m:.5f} min_eig={lam:.5f}"


def _gn_table(cfg, index, h):
    from .torus import g_multiplier, gn_table, quadratic_coefficient

    ns = [int(n) for n in cfg.option("n_values", [1, 2, 3])]
    xis = np.linspace(0.0, float(cfg.option("xi_max", 10.0)), int(cfg.option("xi_points", 101)))
    table = gn_table(ns, xis)
    rows = [{"n": n, "xi": x, "value": v} for n, x, v in table]
    coef = {str(n): quadratic_coefficient(n) for n in ns}
    expected = {str(n): math.pi**2 / (2.0 * (n + 2)) for n in ns}
    res = {"quadratic_coefficient": coef, "expected": expected,
           "max_abs": max(abs(v) for _, _, v in table), "G1_at_1": float(g_multiplier(1, 1.0))}
    worst = max(abs(coef[k] / expected[k] - 1) for k in coef)
    return res, rows, f"quadratic rel.err={worst:.2e} max|G|={res['max_abs']:.6f}"


def _glue(cfg, index, h):
    from .decomposition import AnisotropicSobolevParams, glue_h1, random_glue_inputs

    lam_v = [float(v) for v in cfg.option("lam", [4.0, 4.0, 1.0])]
    lam = AnisotropicSobolevParams(*lam_v)
    d = int(cfg.option("d", 3))
    rng = np.random.default_rng(point_seed(cfg.seed, index))
    rows = []
    for t in range(int(cfg.option("trials", 20))):
        phi0, phi1, phi2, r2 = random_glue_inputs(rng, h, lam, d=d)
        g = glue_h1(phi0, phi1, phi2, r2, lam=lam, h=h, normalize=True)
        rows.append({"h": h, "trial": t, "l2_ratio": g.l2_ratio, "h1_ratio": g.h1_ratio,
                     "trace_residual": g.trace_residual})
    res = {"max_l2_ratio": max(r["l2_ratio"] for r in rows), "max_h1_ratio": max(r["h1_ratio"] for r in rows),
           "max_trace_residual": max(r["trace_residual"] for r in rows), "lam": lam_v, "trials": len(rows)}
    return res, rows, (f"max l2/(s h)={res['max_l2_ratio']:.4f} max h1/s={res['max_h1_ratio']:.4f} "
                       f"trace={res['max_trace_residual']:.1e}")


def _decompose(cfg, index, h):
    from .decomposition import DecompositionConfig, decompose_low_energy
    from .spectral import eigen_top

    op = _operator(cfg, h)
    factor = float(cfg.option("energy_factor", 10.0))
    vals, vecs, _ = eigen_top(op, int(cfg.option("eig_count", 24)))
    dc = DecompositionConfig(n_x1=int(cfg.option("n_x1", 128)), n_t=int(cfg.option("n_t", 64)))
    rows, reports = [], []
    for i in range(1, len(vals)):
        if vals[i] < 1.0 - factor * h * h:
            break
        r = decompose_low_energy(op, vecs[:, i], config=dc)
        c0 = max(r.l2_fH / h, r.grad_fL)
        rows.append({"h": h, "index": i, "eigenvalue": float(vals[i]), "fH_over_h": r.l2_fH / h,
                     "grad_fL": r.grad_fL, "C0": c0, "collar_max_x1": r.collar_max_x1,
                     "reconstruction_residual": r.reconstruction_residual,
                     "interpolation_residual": r.interpolation_residual})
        reports.append(r.to_dict())
    if not rows:
        raise NumericalError(f"no eigenvalue above 1 - {factor:g} h^2")
    res = {"eigenvectors": len(rows), "C0": max(r["C0"] for r in rows),
           "collar_max_x1": rows[0]["collar_max_x1"],
           "max_reconstruction_residual": max(r["reconstruction_residual"] for r in rows),
           "reports": reports}
    return res, rows, f"vectors={len(rows)} C0={res['C0']:.4f} collar={res['collar_max_x1']:.4f}"


def sample_histograms(op, samples: np.ndarray, bins: int, axis: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Binned empirical marginal of ``samples`` and of the node measure mu along ``axis``."""
    lo, hi = op.domain.bounds()
    edges = np.linspace(lo[axis], hi[axis], bins + 1)
    emp, _ = np.histogram(samples[:, axis], bins=edges)
    stat, _ = np.histogram(op.nodes[:, axis], bins=edges, weights=op.mu)
    return edges, emp / emp.sum(), stat / stat.sum()


def _sample(cfg, index, h):
    from .kernel import run_chains
    from .spectral import spectral_gap

    op = _operator(cfg, h)
    g = spectral_gap(op)
    n_steps = int(math.ceil(float(cfg.option("steps_factor", 50.0)) / g))
    n_chains = int(cfg.option("chains", 10_000))
    final, _ = run_chains(op.domain, op.density, h, n_steps, n_chains, seed=point_seed(cfg.seed, index))
    edges, emp, stat = sample_histograms(op, final, int(cfg.option("bins", 20)))
    tv = 0.5 * float(np.abs(emp - stat).sum())
    rows = [{"h": h, "bin": b, "lo": edges[b], "hi": edges[b + 1], "empirical": emp[b], "stationary": stat[b]}
            for b in range(len(emp))]
    return {"tv": tv, "gap": g, "n_steps": n_steps, "chains": n_chains}, rows, f"steps={n_steps} TV={tv:.4f}"


KIND_RUNNERS: dict[str, Callable] = {
    "gap-sweep": _gap_sweep,
    "spectrum": _spectrum,
    "tv": _tv,
    "localization": _localization,
    "gn-table": _gn_table,
    "glue": _glue,
    "decompose": _decompose,
    "sample": _sample,
}


def run_point(cfg: ExperimentConfig, index: int, h: float | None) -> PointResult:
    """Run one sweep point; failures are captured, never raised."""
    pr = PointResult(index, h)
    try:
        pr.result, pr.rows, pr.summary = KIND_RUNNERS[cfg.kind](cfg, index, h)
    except ValidationError as exc:
        pr.status, pr.error = "validation-error", str(exc)
    except (NumericalError, ArithmeticError, np.linalg.LinAlgError) as exc:
        pr.status, pr.error = "numerical-error", f"{type(exc).__name__}: {exc}"
    return pr


# ---------------------------------------------------------------------------
# aggregates over the sweep (parent process)


def _fit_slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def aggregate(cfg: ExperimentConfig, points: list[PointResult]) -> dict:
    ok = [p for p in points if p.status == "ok"]
    if cfg.kind == "localization" and len(ok) >= 2:
        hs = np.array([p.h for p in ok])
        gap_m = np.array([p.result["one_minus_sup_m"] for p in ok])
        lam = np.array([p.result["min_eig"] for p in ok])
        gamma = cfg.domain.build().gamma
        return {"slope": _fit_slope(hs, gap_m), "gamma": gamma,
                "c_m": float(np.min(gap_m / hs**gamma)), "c_min": float(np.min((lam + 1.0) / hs**gamma))}
    if cfg.kind == "tv" and ok:
        cs = [p.result["bound_constant"] for p in ok]
        return {"bound_constants": cs, "constant_ratio": max(cs) / min(cs),
                "rate_rel_error": [abs(p.result["fitted_rate"] - p.result["gap"]) / p.result["gap"] for p in ok]}
    if cfg.kind == "decompose" and ok:
        c0 = [p.result["C0"] for p in ok]
        out = {"C0": c0, "C0_ratio": max(c0) / min(c0)}
        if len(ok) >= 2:
            out["collar_slope"] = _fit_slope([p.h for p in ok], [p.result["collar_max_x1"] for p in ok])
            out["expected_collar_slope"] = 1.0 / cfg.domain.alpha
        return out
    if cfg.kind == "glue" and ok:
        return {"upsilon": max(max(p.result["max_l2_ratio"], p.result["max_h1_ratio"]) for p in ok)}
    if cfg.kind == "gap-sweep" and ok:
        return {"gap_over_h2": [p.result["gap_over_h2"] for p in ok]}
    return {}


# ---------------------------------------------------------------------------
# orchestration


class ReportWriter:
    """The only code that touches the output directory."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.root = Path(cfg.output_dir)
        self.header = {"version": __version__, "config": cfg.to_dict()}

    def point(self, pr: PointResult) -> None:
        write_json(self.root / "points" / f"point_{pr.index:03d}.json", {**self.header, "point": pr.to_dict()})

    def finish(self, points: list[PointResult], agg: dict, status: str) -> None:
        rows = [r for p in points for r in p.rows]
        write_text(self.root / f"{self.cfg.kind}.csv", format_csv(CSV_COLUMNS[self.cfg.kind], rows))
        report = {**self.header, "kind": self.cfg.kind, "status": status,
                  "points": [p.to_dict() for p in points], "aggregate": agg}
        write_json(self.root / "report.json", report)


def _worker_count(cfg: ExperimentConfig, n_points: int) -> int:
    if cfg.workers is not None:
        avail = cfg.workers
    else:
        try:
            avail = len(os.sched_getaffinity(0))
        except AttributeError:  # pragma: no cover - non-Linux
            avail = os.cpu_count() or 1
    return max(1, min(avail, n_points))


def run(cfg: ExperimentConfig, out=None) -> int:
    """Execute ``cfg``; returns the exit status."""
    out = sys.stdout if out is None else out
    check_kind(cfg)
    pts = _points(cfg)
    writer = ReportWriter(cfg)
    results: list[PointResult] = []
    n_workers = _worker_count(cfg, len(pts))

    def collect(pr: PointResult, t0: float) -> None:
        writer.point(pr)
        results.append(pr)
        tag = "gn-table" if pr.h is None else f"h={pr.h:g}"
        msg = pr.summary if pr.status == "ok" else f"{pr.status}: {pr.error}"
        print(f"[{cfg.kind}] {tag} {pr.status} {msg} ({time.perf_counter() - t0:.1f}s)", file=out, flush=True)

    t0 = time.perf_counter()
    if n_workers == 1:
        for i, h in pts:
            collect(run_point(cfg, i, h), t0)
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as ex:
            futures = [ex.submit(run_point, cfg, i, h) for i, h in pts]
            for fut in futures:  # submission order keeps the output deterministic
                collect(fut.result(), t0)
    failed = [p for p in results if p.status != "ok"]
    status = "ok" if not failed else ("partial" if len(failed) < len(results) else "failed")
    agg = aggregate(cfg, results)
    writer.finish(results, agg, status)
    if agg:
        print(f"[{cfg.kind}] aggregate {json.dumps(to_jsonable(agg), sort_keys=True)}", file=out)
    if not failed:
        return EXIT_OK
    if all(p.status == "validation-error" for p in failed):
        return EXIT_VALIDATION
    return EXIT_NUMERICAL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cuspwalk", description="Ball-walk Metropolis experiments on cusp domains.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config", help="path to a TOML experiment config")
    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("config")
    sub.add_parser("version", help="print the package version")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "version":
        print(f"cuspwalk {__version__}")
        return EXIT_OK
    try:
        cfg = load_config(args.config)
        check_kind(cfg)
        if args.command == "validate":
            print(f"ok: kind={cfg.kind} points={len(_points(cfg))} output_dir={cfg.output_dir}")
            return EXIT_OK
        return run(cfg)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except CuspwalkError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
