"""Experiment configuration: TOML in, validated dataclasses out.

A config file is flat keys plus ``[domain]``, ``[density]``, ``[tolerances]``
and ``[options]`` tables::

    kind = "gap-sweep"
    h_values = [0.1, 0.05, 0.02]
    grid_ratio = 10
    seed = 1
    output_dir = "out/gap"

    [domain]
    type = "box"
    lo = [0.0]
    hi = [1.0]

    [density]
    family = "constant"

Only ``OUTPUT_DIR`` from the environment is honoured, and it replaces
``output_dir``.
"""

from __future__ import annotations

import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

from .errors import ValidationError
from .geometry import Box, DomainSpec, ModelCusp
from .measure import DensitySpec

KINDS = ("gap-sweep", "spectrum", "tv", "localization", "gn-table", "glue", "decompose", "sample")
DOMAIN_TYPES = ("box", "model-cusp")

__all__ = ["ExperimentConfig", "DomainConfig", "load_config", "parse_config", "dump_toml", "KINDS"]


@dataclass(frozen=True)
class DomainConfig:
    """Domain block: an axis-aligned box or the model cusp."""

    type: str = "box"
    lo: tuple[float, ...] = (0.0,)
    hi: tuple[float, ...] = (1.0,)
    alpha: float = 1.5
    d_prime: int = 1
    d_doubleprime: int = 0

    def build(self) -> DomainSpec:
        if self.type == "box":
            box = Box(tuple(self.lo), tuple(self.hi))
            return DomainSpec(box.dim, (box,), ())
        return self.model().domain()

    def model(self) -> ModelCusp:
        if self.type != "model-cusp":
            raise ValidationError("only the model cusp has a cusp model", "domain.type")
        return ModelCusp(self.alpha, self.d_prime, self.d_doubleprime)

    def to_dict(self) -> dict:
        if self.type == "box":
            return {"type": "box", "lo": list(self.lo), "hi": list(self.hi)}
        return {"type": "model-cusp", "alpha": self.alpha, "d_prime": self.d_prime,
                "d_doubleprime": self.d_doubleprime}


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    domain: DomainConfig
    density: DensitySpec
    h_values: tuple[float, ...]
    grid_ratio: int = 10
    seed: int = 0
    output_dir: str = "out"
    workers: int | None = None
    tolerances: Mapping[str, float] = field(default_factory=dict)
    options: Mapping[str, Any] = field(default_factory=dict)

    def option(self, key: str, default=None):
        return self.options.get(key, default)

    def to_dict(self) -> dict:
        dens = self.density.to_dict()
        dens.pop("Z", None)
        dens = {k: v for k, v in dens.items() if v is not None}
        return {
            "kind": self.kind,
            "h_values": list(self.h_values),
            "grid_ratio": self.grid_ratio,
            "seed": self.seed,
            "output_dir": self.output_dir,
            **({"workers": self.workers} if self.workers is not None else {}),
            "domain": self.domain.to_dict(),
            "density": dens,
            "tolerances": dict(self.tolerances),
            "options": dict(self.options),
        }


def _need(cond: bool, msg: str, path: str) -> None:
    if not cond:
        raise ValidationError(msg, path)


def _floats(v, path: str) -> tuple[float, ...]:
    _need(isinstance(v, (list, tuple)) and len(v) > 0, "expected a non-empty list of numbers", path)
    out = []
    for i, x in enumerate(v):
        _need(isinstance(x, (int, float)) and not isinstance(x, bool), "expected a number", f"{path}[{i}]")
        out.append(float(x))
    return tuple(out)


def _domain(raw: Mapping[str, Any]) -> DomainConfig:
    _need(isinstance(raw, Mapping), "missing [domain] table", "domain")
    typ = raw.get("type", "box")
    _need(typ in DOMAIN_TYPES, f"domain type must be one of {DOMAIN_TYPES}", "domain.type")
    if typ == "box":
        unknown = set(raw) - {"type", "lo", "hi"}
        _need(not unknown, f"unknown keys {sorted(unknown)}", "domain")
        lo = _floats(raw.get("lo", [0.0]), "domain.lo")
        hi = _floats(raw.get("hi", [1.0]), "domain.hi")
        _need(len(lo) == len(hi), "lo and hi need the same length", "domain.hi")
        _need(all(a < b for a, b in zip(lo, hi)), "need lo < hi on every axis", "domain.hi")
        dc = DomainConfig("box", lo, hi)
    else:
        unknown = set(raw) - {"type", "alpha", "d_prime", "d_doubleprime"}
        _need(not unknown, f"unknown keys {sorted(unknown)}", "domain")
        alpha = raw.get("alpha", 1.5)
        _need(isinstance(alpha, (int, float)) and not isinstance(alpha, bool), "expected a number", "domain.alpha")
        dp, dpp = raw.get("d_prime", 1), raw.get("d_doubleprime", 0)
        _need(isinstance(dp, int) and dp >= 1, "d_prime must be an integer >= 1", "domain.d_prime")
        _need(isinstance(dpp, int) and dpp >= 0, "d_doubleprime must be an integer >= 0", "domain.d_doubleprime")
        dc = DomainConfig("model-cusp", alpha=float(alpha), d_prime=dp, d_doubleprime=dpp)
    try:
        dc.build()
    except ValidationError as exc:
        raise type(exc)(str(exc).split(": ", 1)[-1], f"domain.{exc.path}" if exc.path else "domain") from None
    return dc


def _density(raw: Mapping[str, Any] | None) -> DensitySpec:
    raw = dict(raw or {})
    unknown = set(raw) - {"family", "params", "m", "M", "smoothness"}
    _need(not unknown, f"unknown keys {sorted(unknown)}", "density")
    params = raw.get("params", {})
    _need(isinstance(params, Mapping), "params must be a table", "density.params")
    try:
        return DensitySpec(
            family=raw.get("family", "constant"),
            params=dict(params),
            lower=raw.get("m"),
            upper=raw.get("M"),
            smoothness=raw.get("smoothness", "C1"),
        )
    except ValidationError as exc:
        raise ValidationError(str(exc).split(": ", 1)[-1], exc.path or "density") from None


def parse_config(raw: Mapping[str, Any], env: Mapping[str, str] | None = None) -> ExperimentConfig:
    """Validate a parsed TOML mapping into an :class:`ExperimentConfig`."""
    env = os.environ if env is None else env
    known = {"kind", "h_values", "grid_ratio", "seed", "output_dir", "workers", "domain", "density",
             "tolerances", "options"}
    unknown = set(raw) - known
    _need(not unknown, f"unknown keys {sorted(unknown)}", "")
    kind = raw.get("kind")
    _need(kind in KINDS, f"kind must be one of {KINDS}", "kind")
    if kind == "gn-table" and not raw.get("h_values"):
        hs: tuple[float, ...] = ()  # the multiplier table has no h axis
    else:
        hs = _floats(raw.get("h_values", []), "h_values")
    for i, h in enumerate(hs):
        _need(0.0 < h < 1.0, f"h = {h:g} must lie in (0, 1)", f"h_values[{i}]")
    for i in range(1, len(hs)):
        _need(hs[i] < hs[i - 1], "h_values must be strictly decreasing", f"h_values[{i}]")
    gr = raw.get("grid_ratio", 10)
    _need(isinstance(gr, int) and not isinstance(gr, bool), "grid_ratio must be an integer", "grid_ratio")
    _need(gr >= 5, "grid_ratio must be at least 5", "grid_ratio")
    seed = raw.get("seed", 0)
    _need(isinstance(seed, int) and not isinstance(seed, bool) and 0 <= seed < 2**64,
          "seed must be an integer in [0, 2^64)", "seed")
    out = raw.get("output_dir", "out")
    _need(isinstance(out, str), "output_dir must be a string", "output_dir")
    if env.get("OUTPUT_DIR"):
        out = env["OUTPUT_DIR"]
    workers = raw.get("workers")
    _need(workers is None or (isinstance(workers, int) and workers >= 1), "workers must be >= 1", "workers")
    tol = raw.get("tolerances", {})
    _need(isinstance(tol, Mapping), "tolerances must be a table", "tolerances")
    for k, v in tol.items():
        _need(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v),
              "tolerances must be finite numbers", f"tolerances.{k}")
    opts = raw.get("options", {})
    _need(isinstance(opts, Mapping), "options must be a table", "options")
    return ExperimentConfig(
        kind=kind,
        domain=_domain(raw.get("domain", {"type": "box"})),
        density=_density(raw.get("density")),
        h_values=hs,
        grid_ratio=gr,
        seed=seed,
        output_dir=out,
        workers=workers,
        tolerances={k: float(v) for k, v in tol.items()},
        options=dict(opts),
    )


def load_config(path: str | os.PathLike, env: Mapping[str, str] | None = None) -> ExperimentConfig:
    p = Path(path)
    try:
        raw = tomllib.loads(p.read_text())
    except OSError as exc:
        raise ValidationError(f"cannot read config: {exc}", "") from None
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"TOML syntax error: {exc}", "") from None
    return parse_config(raw, env)


# ---------------------------------------------------------------------------
# deterministic TOML emitter


def _scalar(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if not math.isfinite(v):
            raise ValidationError("cannot emit a non-finite number")
        return repr(v)
    if isinstance(v, str):
        esc = "".join(
            "\\\\" if c == "\\" else '\\"' if c == '"'
            else f"\\u{ord(c):04x}" if ord(c) < 0x20 or ord(c) == 0x7F else c
            for c in v
        )
        return f'"{esc}"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_scalar(x) for x in v) + "]"
    raise ValidationError(f"cannot emit value of type {type(v).__name__}")


def _key(k: str) -> str:
    ok = k and all(c.isalnum() or c in "-_" for c in k)
    return k if ok else _scalar(k)


def dump_toml(data: Mapping[str, Any]) -> str:
    """Emit nested mappings as TOML with sorted keys; tables after plain keys."""
    lines: list[str] = []

    def emit(table: Mapping[str, Any], prefix: str) -> None:
        plain = [k for k in sorted(table) if not isinstance(table[k], Mapping)]
        nested = [k for k in sorted(table) if isinstance(table[k], Mapping)]
        for k in plain:
            lines.append(f"{_key(k)} = {_scalar(table[k])}")
        for k in nested:
            name = f"{prefix}.{_key(k)}" if prefix else _key(k)
            if lines:
                lines.append("")
            lines.append(f"[{name}]")
            emit(table[k], name)

    emit(data, "")
    return "\n".join(lines) + "\n"
