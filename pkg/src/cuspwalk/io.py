"""Deterministic report writers.

JSON goes through :func:`to_jsonable` (numpy scalars and arrays become plain
Python, tuples become lists, non-finite floats become strings) and is dumped
with sorted keys.  CSV rows are written with ``repr`` floats so equal inputs
give equal bytes.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "to_jsonable", "dumps_json", "write_json", "format_csv", "write_csv", "write_text",
    "operator_triplets", "node_table_csv", "trajectory_csv", "export_operator",
]


def to_jsonable(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        obj = obj.to_dict() if hasattr(obj, "to_dict") else dataclasses.asdict(obj)
    if isinstance(obj, Mapping):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def dumps_json(obj: Any) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_text(path: str | Path, text: str) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text)
    return p


def write_json(path: str | Path, obj: Any) -> Path:
    return write_text(path, dumps_json(obj))


def _cell(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (np.integer, int)):
        return str(int(v))
    if isinstance(v, (np.floating, float)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def format_csv(columns: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])
    return buf.getvalue()


def write_csv(path: str | Path, columns: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> Path:
    return write_text(path, format_csv(columns, rows))


# ---------------------------------------------------------------------------
# operator and chain exports


def operator_triplets(op) -> str:
    """Transition table P = diag(m) + K as ``i j value`` lines, row-major."""
    P = op.matrix().tocoo()
    order = np.lexsort((P.col, P.row))
    lines = [f"{int(P.row[k])} {int(P.col[k])} {float(P.data[k])!r}" for k in order]
    return "\n".join(lines) + "\n"


def node_table_csv(op) -> str:
    """Columns index, x0..x{d-1}, weight, rho, m."""
    cols = ["index"] + [f"x{a}" for a in range(op.dim)] + ["weight", "rho", "m"]
    rows = (
        {"index": i, **{f"x{a}": float(op.nodes[i, a]) for a in range(op.dim)},
         "weight": float(op.weights[i]), "rho": float(op.rho[i]), "m": float(op.m[i])}
        for i in range(op.size)
    )
    return format_csv(cols, rows)


def trajectory_csv(trace) -> str:
    """Columns step, x0..x{d-1}, accepted, from the ``trace`` of ``run_chains``."""
    steps, coords, accepted = trace
    coords = np.asarray(coords).reshape(len(steps), -1)
    cols = ["step"] + [f"x{a}" for a in range(coords.shape[1])] + ["accepted"]
    rows = (
        {"step": int(t), **{f"x{a}": float(coords[k, a]) for a in range(coords.shape[1])},
         "accepted": bool(accepted[k])}
        for k, t in enumerate(steps)
    )
    return format_csv(cols, rows)


def export_operator(op, stem: str | Path) -> tuple[Path, Path]:
    """Write ``<stem>.triplets`` and ``<stem>.nodes.csv``."""
    stem = Path(stem)
    a = write_text(stem.with_name(stem.name + ".triplets"), operator_triplets(op))
    b = write_text(stem.with_name(stem.name + ".nodes.csv"), node_table_csv(op))
    return a, b
