import csv
import io

import pytest

from heatdim import cli
from heatdim.config import ExperimentConfig, dump


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def rows(text):
    return list(csv.reader(io.StringIO(text)))


def test_kernel_stdout(capsys):
    code, out, _ = run(["kernel", "--r-values", "0.1,1", "--n-dist", "3"], capsys)
    table = rows(out)
    assert code == 0 and table[0] == ["r", "dist", "image_sum", "fourier", "abs_diff"] and len(table) == 7
    assert max(float(r[4]) for r in table[1:]) < 1e-10


def test_flags_override_config(tmp_path, capsys):
    cfg = tmp_path / "v.toml"
    dump(ExperimentConfig("variance", params={"times": [0.5, 1.0], "quadrature": 0}), cfg)
    _, out, _ = run(["variance", "--config", str(cfg)], capsys)
    assert len(rows(out)) == 3 and rows(out)[0] == ["t", "variance", "ratio_sqrt_t"]
    _, out, _ = run(["variance", "--config", str(cfg), "--times", "1e-6"], capsys)
    table = rows(out)
    assert len(table) == 2 and 0.39 < float(table[1][2]) < 0.41


def test_every_flag_has_config_key():
    parser = cli.build_parser()
    for name, spec in list(cli.PARAMS.items()) + list(cli.EXTRA.items()):
        sub = parser._subparsers._group_actions[0].choices[name]
        dests = {a.dest for a in sub._actions} - {"help", "config", "seed", "out", "replicas", "threads"}
        assert dests == set(spec)


def test_covariance_and_slnd(capsys):
    code, out, _ = run(["covariance", "--s", "0.5", "--y", "0"], capsys)
    assert code == 0 and len(rows(out)) == 2
    code, out, err = run(["slnd", "--n-configs", "5", "--m-max", "2", "--n-modes", "32"], capsys)
    assert code == 0 and "min ratio" in err


def test_sample_and_solve_write_fields(tmp_path, capsys):
    from heatdim.records import read_field

    code, _, _ = run(["sample-h", "--out", str(tmp_path / "h"), "--n-sites", "16", "--times", "0.1,0.2",
                      "--replicas", "2", "--seed", "3"], capsys)
    assert code == 0
    header, _, _, vals = read_field(tmp_path / "h" / "field_r1")
    assert vals.shape == (2, 16, 1) and header["seed"] == 3
    code, _, _ = run(["solve", "--out", str(tmp_path / "s"), "--n-sites", "16", "--t-end", "0.01",
                      "--diffusion", "sine", "--format", "csv"], capsys)
    assert code == 0 and (tmp_path / "s" / "trajectory_r0.csv").exists()
    assert (tmp_path / "s" / "diagnostics.csv").exists()


def test_dimension_subcommand(tmp_path, capsys):
    code, _, _ = run(["dimension", "--n-points", "4096", "--window", "2,7", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert rows((tmp_path / "box_counts.csv").read_text())[0] == ["scale_j", "count"]
    assert '"slope"' in (tmp_path / "summary.ndjson").read_text()


def test_run_and_report(tmp_path, capsys):
    code, out, _ = run(["run", "configs/kernel-duality.toml", "--out", str(tmp_path / "kd")], capsys)
    assert code == 0 and out.startswith("PASS")
    code, out, _ = run(["report", str(tmp_path / "kd" / "manifest.ndjson"), "--out", str(tmp_path / "rep")], capsys)
    assert code == 0 and "kernel-duality" in out
    assert (tmp_path / "rep" / "summary.csv").exists()


def test_run_failing_check_exits_nonzero(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    dump(ExperimentConfig("variance", params={"n_t": 3}, tolerances={"ratio_lo": 0.5}), cfg)
    code, out, _ = run(["run", str(cfg), "--out", str(tmp_path / "o")], capsys)
    assert code == 1 and "FAIL" in out


def test_report_empty(capsys):
    code, out, _ = run(["report"], capsys)
    assert code == 0 and "no manifests" in out


def test_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("schema_version = 1\nexperiment = 3\n")
    code, _, err = run(["run", str(bad)], capsys)
    assert code == 2 and "ConfigParseError" in err and ":2:" in err
    bad.write_text('schema_version = 1\nexperiment = "nope"\n')
    code, _, err = run(["run", str(bad)], capsys)
    assert code == 2 and "UnknownExperiment" in err
    with pytest.raises(SystemExit) as exc:
        cli.main(["kernel", "--bogus"])
    assert exc.value.code == 2


def test_determinism_bit_identical(tmp_path, capsys):
    cfg = tmp_path / "d.toml"
    dump(ExperimentConfig("dim-doubling", params={"n_sites": 8192, "n_seeds": 2, "sets": ["torus"]}), cfg)
    for name in ("a", "b"):
        assert run(["run", str(cfg), "--seed", "7", "--out", str(tmp_path / name)], capsys)[0] in (0, 1)
    assert (tmp_path / "a" / "slopes.csv").read_bytes() == (tmp_path / "b" / "slopes.csv").read_bytes()
    code, _, _ = run(["sample-h", "--out", str(tmp_path / "h1"), "--n-sites", "64", "--seed", "7"], capsys)
    code, _, _ = run(["sample-h", "--out", str(tmp_path / "h2"), "--n-sites", "64", "--seed", "7"], capsys)
    assert (tmp_path / "h1" / "field_r0.bin").read_bytes() == (tmp_path / "h2" / "field_r0.bin").read_bytes()


def test_experiment_alias_subcommand(tmp_path, capsys):
    code, out, _ = run(["moments", "--n-sites", "1024", "--replicas", "20", "--out", str(tmp_path)], capsys)
    assert code in (0, 1) and "increment-moments/spatial_slope" in out
