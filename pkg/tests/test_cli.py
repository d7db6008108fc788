import json
import math

import numpy as np
import pytest

from cuspwalk import __version__
from cuspwalk.cli import CSV_COLUMNS, main, point_seed
from cuspwalk.io import dumps_json, format_csv, to_jsonable

GAP = """kind = "gap-sweep"
h_values = [0.2, 0.1]
output_dir = "{out}"
{extra}
[domain]
type = "box"
lo = [0.0]
hi = [1.0]
"""


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_version(capsys):
    assert main(["version"]) == 0
    assert __version__ in capsys.readouterr().out


def test_validate(tmp_path, capsys):
    good = _write(tmp_path, "g.toml", GAP.format(out=tmp_path / "o", extra=""))
    assert main(["validate", good]) == 0
    assert "points=2" in capsys.readouterr().out
    bad = _write(tmp_path, "b.toml", 'kind = "spectrum"\nh_values = [0.1]\n[domain]\ntype = "model-cusp"\nalpha = 3.5\n')
    assert main(["validate", bad]) == 2
    assert "domain: cusp sharpness" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_run_gap_sweep_is_byte_reproducible(tmp_path, capsys):
    trees = []
    for workers, sub in ((1, "a"), (1, "a"), (2, "c")):
        out = tmp_path / sub
        cfg = _write(tmp_path, f"{sub}.toml", GAP.format(out=out, extra=f"workers = {workers}"))
        assert main(["run", cfg]) == 0
        trees.append(_tree(out))
    log = capsys.readouterr().out
    assert log.count("[gap-sweep] h=") == 6
    header = trees[0]["gap-sweep.csv"].decode().splitlines()[0]
    assert header.split(",") == list(CSV_COLUMNS["gap-sweep"])
    assert set(trees[0]) == {"gap-sweep.csv", "report.json", "points/point_000.json", "points/point_001.json"}
    assert trees[0] == trees[1]
    # the config echo differs by the workers count and output_dir only
    for name in ("gap-sweep.csv",):
        assert trees[0][name] == trees[2][name]
    pts_a = [json.loads(trees[0][f"points/point_00{i}.json"])["point"] for i in (0, 1)]
    pts_c = [json.loads(trees[2][f"points/point_00{i}.json"])["point"] for i in (0, 1)]
    assert pts_a == pts_c
    rep = json.loads(trees[0]["report.json"])
    assert rep["status"] == "ok" and rep["kind"] == "gap-sweep" and rep["version"] == __version__
    g = [p["result"]["gap_over_h2"] for p in rep["points"]]
    assert all(abs(x / (math.pi**2 / 6) - 1) < 0.15 for x in g)


def test_partial_failure_keeps_finished_points(tmp_path):
    out = tmp_path / "dec"
    cfg = _write(tmp_path, "d.toml", f'kind = "decompose"\nh_values = [0.5, 0.1]\ngrid_ratio = 5\n'
                                     f'output_dir = "{out}"\n[domain]\ntype = "model-cusp"\nalpha = 1.5\n')
    assert main(["run", cfg]) == 2  # h = 0.5 is above the smallness threshold
    rep = json.loads((out / "report.json").read_text())
    assert rep["status"] == "partial"
    assert [p["status"] for p in rep["points"]] == ["validation-error", "ok"]
    assert (out / "points" / "point_001.json").exists()
    rows = (out / "decompose.csv").read_text().splitlines()
    assert rows[0].split(",") == list(CSV_COLUMNS["decompose"]) and len(rows) > 1


def test_run_kind_checks(tmp_path, capsys):
    cfg = _write(tmp_path, "l.toml", GAP.format(out=tmp_path / "o", extra="").replace("gap-sweep", "localization"))
    assert main(["run", cfg]) == 2
    assert "validation error" in capsys.readouterr().err


def test_point_seed_is_stable_and_distinct():
    seeds = [point_seed(7, i) for i in range(50)]
    assert len(set(seeds)) == 50
    assert seeds == [point_seed(7, i) for i in range(50)]
    assert point_seed(7, 0) != point_seed(8, 0)


def test_to_jsonable_and_csv():
    obj = {"a": np.float64(1.5), "b": np.arange(3), "c": float("nan"), "d": (np.bool_(True), np.int32(2))}
    assert to_jsonable(obj) == {"a": 1.5, "b": [0, 1, 2], "c": "nan", "d": [True, 2]}
    assert dumps_json({"b": 1, "a": float("inf")}) == '{\n  "a": "inf",\n  "b": 1\n}\n'
    text = format_csv(["x", "y", "z"], [{"x": 0.1, "y": True, "z": None}, {"x": 2}])
    assert text == "x,y,z\n0.1,true,\n2,,\n"


def test_csv_schema_table_covers_every_kind():
    from cuspwalk.config import KINDS
    assert set(CSV_COLUMNS) == set(KINDS)
    with pytest.raises(SystemExit):
        main(["frobnicate"])


def test_operator_and_trajectory_exports(tmp_path):
    from cuspwalk.geometry import Box, DomainSpec
    from cuspwalk.io import export_operator, trajectory_csv
    from cuspwalk.kernel import assemble_operator, run_chains
    from cuspwalk.measure import DensitySpec

    dom = DomainSpec(1, (Box((0.0,), (1.0,)),))
    op = assemble_operator(dom, DensitySpec("constant"), 0.2, grid_ratio=5)
    trip, nodes = export_operator(op, tmp_path / "op")
    ijv = np.loadtxt(trip)
    P = np.zeros((op.size, op.size))
    P[ijv[:, 0].astype(int), ijv[:, 1].astype(int)] = ijv[:, 2]
    np.testing.assert_array_equal(P, op.dense())  # repr floats round-trip exactly
    table = nodes.read_text().splitlines()
    assert table[0] == "index,x0,weight,rho,m" and len(table) == op.size + 1
    _, trace = run_chains(dom, DensitySpec("constant"), 0.2, 5, 3, seed=1, record_chain=1)
    lines = trajectory_csv(trace).splitlines()
    assert lines[0] == "step,x0,accepted" and len(lines) == 7
    assert lines[1].startswith("0,0.5,")
