import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from heatdim import config as cf
from heatdim import records as rc
from heatdim.errors import ConfigParseError, SchemaError, UnknownExperiment
from heatdim.experiments import REGISTRY, run_experiment

scalars = st.one_of(st.integers(-2**40, 2**40), st.floats(allow_nan=False, allow_infinity=False),
                    st.text(max_size=12), st.booleans())
params = st.dictionaries(st.from_regex(r"[a-z][a-z_]{0,10}", fullmatch=True),
                         st.one_of(scalars, st.lists(st.integers(-100, 100), max_size=5)), max_size=6)


@given(st.sampled_from(sorted(REGISTRY)), st.integers(0, 2**64 - 1), st.one_of(st.none(), st.integers(1, 10**6)),
       params, st.dictionaries(st.from_regex(r"[a-z]{1,8}", fullmatch=True), st.floats(-1e6, 1e6), max_size=4))
def test_config_round_trip(name, seed, replicas, prm, tols):
    cfg = cf.ExperimentConfig(name, seed, replicas, "runs/x", prm, tols)
    back = cf.loads(cfg.dumps())
    assert back == cfg
    assert back.digest() == cfg.digest()


def test_config_file_round_trip(tmp_path):
    cfg = cf.ExperimentConfig("variance", 3, None, "o", {"n_t": 5}, {"ratio_lo": 0.39})
    cf.dump(cfg, tmp_path / "c.toml")
    assert cf.load(tmp_path / "c.toml") == cfg


@pytest.mark.parametrize("text, needle", [
    ('schema_version = 1\nexperiment = "x"\nseed = [', "syntax error"),
    ('schema_version = 1\nexperiment = "x"\nbogus = 1\n', ":3: field 'bogus'"),
    ('schema_version = 2\nexperiment = "x"\n', ":1: field 'schema_version'"),
    ('schema_version = 1\n', "field 'experiment'"),
    ('schema_version = 1\nexperiment = "x"\nseed = -4\n', ":3: field 'seed'"),
    ('schema_version = 1\nexperiment = "x"\nreplicas = 0\n', "field 'replicas'"),
    ('schema_version = 1\nexperiment = "x"\nout = 3\n', "field 'out'"),
    ('schema_version = 1\nexperiment = "x"\nparams = 3\n', "field 'params'"),
    ('schema_version = 1\nexperiment = "x"\n[tolerances]\nlo = "a"\n', ":4: field 'tolerances.lo'"),
])
def test_config_parse_errors(text, needle):
    with pytest.raises(ConfigParseError, match=needle.replace("[", r"\[")):
        cf.loads(text, "cfg.toml")


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigParseError, match="cannot read"):
        cf.load(tmp_path / "nope.toml")


def test_with_overrides():
    cfg = cf.ExperimentConfig("slnd", params={"a": 1, "b": 2})
    new = cfg.with_overrides(seed=9, params={"b": 3})
    assert new.seed == 9 and new.params == {"a": 1, "b": 3} and cfg.params["b"] == 2


def test_unknown_experiment():
    with pytest.raises(UnknownExperiment):
        run_experiment(cf.ExperimentConfig("nope"))


def _manifest(name, passed):
    return rc.RunManifest(name, "h", "0", 0.1, 0, [rc.Check("c", passed, 1.0, "< 2")], {})


def test_report_examples(tmp_path):
    assert rc.report([]).rows == [] and rc.report([]).exit_status == 0
    assert rc.report([]).summary_csv() == "experiment,checks,passed,failed,status\r\n"
    a, b = tmp_path / "a.ndjson", tmp_path / "b.ndjson"
    rc.write_manifest(_manifest("zeta", True), a)
    rc.write_manifest(_manifest("alpha", True), b)
    rep = rc.report([a, b])
    assert [r[0] for r in rep.rows] == ["alpha", "zeta"] and rep.exit_status == 0
    rc.write_manifest(_manifest("mid", False), a, append=True)
    assert rc.report([a, b]).exit_status == 1
    assert "FAIL" in rc.report([a, b]).text()


def test_manifest_schema_errors(tmp_path):
    p = tmp_path / "m.ndjson"
    p.write_text('{"experiment": "x"}\n')
    with pytest.raises(SchemaError, match="missing keys"):
        rc.read_manifests(p)
    p.write_text("not json\n")
    with pytest.raises(SchemaError, match=":1:"):
        rc.read_manifests(p)
    m = _manifest("x", True)
    m.checks.append(rc.Check("c", True, 0, ""))
    with pytest.raises(SchemaError, match="duplicate"):
        m.to_json()


def test_manifest_round_trip(tmp_path):
    m = rc.RunManifest("x", "abc", "0.1", 1.5, 7, [rc.Check("c", True, [1.0, np.float64(2.0)], "t")],
                       {"v": np.arange(3), "inf": float("inf")})
    rc.write_manifest(m, tmp_path / "m.ndjson")
    (back,) = rc.read_manifests(tmp_path / "m.ndjson")
    assert back.checks[0].measured == [1.0, 2.0] and back.values["v"] == [0, 1, 2] and back.values["inf"] == "inf"


def test_csv_quoting():
    out = rc._csv([["a,b", 'q"x', 1]])
    assert out == '"a,b","q""x",1\r\n'


@pytest.mark.parametrize("fmt", ["bin", "csv"])
def test_field_io_round_trip(tmp_path, fmt):
    g = np.random.default_rng(0)
    times, sites = np.array([0.1, 0.2]), -1 + 2 * np.arange(8) / 8
    vals = g.standard_normal((2, 8, 3))
    rc.write_field(tmp_path / "f", times, sites, vals, {"seed": 4}, fmt)
    header, t2, s2, v2 = rc.read_field(tmp_path / "f")
    assert header["seed"] == 4 and header["uniform_sites"]
    np.testing.assert_array_equal(t2, times)
    np.testing.assert_array_equal(s2, sites)
    np.testing.assert_array_equal(v2, vals)


def test_field_io_rejects_bad_shape(tmp_path):
    with pytest.raises(ValueError):
        rc.write_field(tmp_path / "f", [0.1], [0.0, 0.5], np.zeros((1, 3, 1)))


def test_run_writes_outputs(tmp_path):
    cfg = cf.ExperimentConfig("kernel-duality", params={"n_points": 50})
    manifest, _ = run_experiment(cfg, tmp_path)
    assert manifest.passed
    assert (tmp_path / "manifest.ndjson").exists()
    assert cf.load(tmp_path / "config.toml") == cfg
    line = json.loads((tmp_path / "manifest.ndjson").read_text())
    assert line["config_hash"] == cfg.digest()
