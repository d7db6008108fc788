import sys

import pytest
from hypothesis import given
from hypothesis import strategies as st

from cuspwalk.config import dump_toml, load_config, parse_config
from cuspwalk.errors import AssumptionViolation, ValidationError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

BASE = {
    "kind": "gap-sweep",
    "h_values": [0.1, 0.05],
    "domain": {"type": "box", "lo": [0.0], "hi": [1.0]},
    "density": {"family": "constant"},
}


def _with(**kw):
    raw = {**BASE, **kw}
    return {k: v for k, v in raw.items() if v is not None}


def test_parse_valid():
    cfg = parse_config(_with(seed=4, output_dir="o"), env={})
    assert cfg.kind == "gap-sweep" and cfg.h_values == (0.1, 0.05)
    assert cfg.grid_ratio == 10 and cfg.seed == 4 and cfg.output_dir == "o"
    assert cfg.domain.build().dim == 1


@pytest.mark.parametrize("raw, path", [
    (_with(kind="nope"), "kind"),
    (_with(h_values=[0.1, 0.2]), "h_values[1]"),
    (_with(h_values=[0.1, 1.5]), "h_values[1]"),
    (_with(h_values=[0.1, "x"]), "h_values[1]"),
    (_with(grid_ratio=4), "grid_ratio"),
    (_with(seed=-1), "seed"),
    (_with(workers=0), "workers"),
    (_with(tolerances={"gap": float("nan")}), "tolerances.gap"),
    (_with(domain={"type": "disc"}), "domain.type"),
    (_with(domain={"type": "box", "lo": [0.0], "hi": [0.0]}), "domain.hi"),
    (_with(domain={"type": "model-cusp", "d_prime": 0}), "domain.d_prime"),
    (_with(bogus=1), ""),
    (_with(density={"family": "constant", "colour": 1}), "density"),
])
def test_parse_errors_carry_paths(raw, path):
    with pytest.raises(ValidationError) as info:
        parse_config(raw, env={})
    assert info.value.path == path


def test_sharp_cusp_is_an_assumption_violation():
    with pytest.raises(AssumptionViolation) as info:
        parse_config(_with(domain={"type": "model-cusp", "alpha": 3.5}), env={})
    assert info.value.path == "domain"
    assert "gamma" in str(info.value)


def test_output_dir_env_override():
    cfg = parse_config(_with(output_dir="a"), env={"OUTPUT_DIR": "b"})
    assert cfg.output_dir == "b"
    assert parse_config(_with(output_dir="a"), env={"OTHER": "b"}).output_dir == "a"


def test_gn_table_needs_no_h():
    cfg = parse_config({"kind": "gn-table"}, env={})
    assert cfg.h_values == ()
    with pytest.raises(ValidationError):
        parse_config({"kind": "spectrum"}, env={})


def test_load_config_errors(tmp_path):
    with pytest.raises(ValidationError, match="cannot read"):
        load_config(tmp_path / "missing.toml")
    p = tmp_path / "bad.toml"
    p.write_text("kind = \n")
    with pytest.raises(ValidationError, match="TOML"):
        load_config(p)


def test_to_dict_round_trips_through_toml():
    cfg = parse_config(_with(options={"companion": 0.5}, tolerances={"gap": 0.05}), env={})
    again = parse_config(tomllib.loads(dump_toml(cfg.to_dict())), env={})
    assert again == cfg


_keys = st.text("abcdefgh_", min_size=1, max_size=6)
_scalars = st.one_of(st.booleans(), st.integers(-10**6, 10**6),
                     st.floats(allow_nan=False, allow_infinity=False), st.text(max_size=8))
_tables = st.recursive(st.dictionaries(_keys, _scalars | st.lists(st.integers(), max_size=4), max_size=4),
                       lambda inner: st.dictionaries(_keys, inner, max_size=3), max_leaves=8)


@given(_tables)
def test_dump_toml_round_trip(data):
    assert tomllib.loads(dump_toml(data)) == data
