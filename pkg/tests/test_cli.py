import io
import json
import os

import pytest

from rwre_lab import cli


def write_config(tmp_path, name, payload):
    path = tmp_path / name
    path.write_text(json.dumps(payload, indent=1))
    return str(path)


def read_files(out_dir):
    out = {}
    for name in sorted(os.listdir(out_dir)):
        with open(os.path.join(out_dir, name), "rb") as fh:
            out[name] = fh.read()
    return out


def test_moments_run_reproduces_exact_values(tmp_path):
    cfg = write_config(tmp_path, "m.json", {
        "experiment": "moments", "seed": 7,
        "law": {"family": "signed_axis_kick", "d": 3, "a": 0.01},
    })
    report_path = cli.run("moments", cfg, out_dir=str(tmp_path / "out"))
    report = json.loads(open(report_path).read())
    assert report["moments"]["eps"] == pytest.approx(0.12, abs=1e-12)
    assert report["moments"]["sigma2"] == pytest.approx(2e-4, abs=1e-15)
    assert report["seed"] == 7
    assert len(report["config_hash"]) == 16


def test_identical_rerun_is_byte_identical(tmp_path):
    cfg = write_config(tmp_path, "g.json", {
        "experiment": "green", "seed": 3,
        "law": {"family": "signed_axis_kick", "d": 2, "a": 0.05},
        "region": {"kind": "slab", "L": 3, "W": 12},
    })
    cli.run("green", cfg, out_dir=str(tmp_path / "out1"))
    cli.run("green", cfg, out_dir=str(tmp_path / "out2"))
    files1 = read_files(tmp_path / "out1")
    files2 = read_files(tmp_path / "out2")
    assert files1.keys() == files2.keys()
    assert set(files1) >= {"report.json", "green_row.csv", "exit_distribution.csv"}
    for name in files1:
        assert files1[name] == files2[name], name


def test_thread_count_does_not_change_outputs(tmp_path, monkeypatch):
    cfg = write_config(tmp_path, "e.json", {
        "experiment": "eps-k", "seed": 5,
        "law": {"family": "point_mass", "d": 2, "weights": {
            "+e1": 0.3, "-e1": 0.2, "+e2": 0.25, "-e2": 0.25}},
        "n_env": 8,
        "family": {"box_k_max": 1, "slab_L_max": 1, "halfspace_N_max": 1,
                   "n_clusters": 2, "cluster_size_cap": 6},
    })
    monkeypatch.setenv("RWRE_THREADS", "1")
    cli.run("eps-k", cfg, out_dir=str(tmp_path / "serial"))
    monkeypatch.setenv("RWRE_THREADS", "4")
    cli.run("eps-k", cfg, out_dir=str(tmp_path / "parallel"))
    serial = read_files(tmp_path / "serial")
    parallel = read_files(tmp_path / "parallel")
    assert serial == parallel


def test_seed_flag_overrides_config(tmp_path):
    cfg = write_config(tmp_path, "v.json", {
        "experiment": "velocity", "seed": 1,
        "law": {"family": "point_mass", "d": 2, "weights": {
            "+e1": 0.3, "-e1": 0.2, "+e2": 0.25, "-e2": 0.25}},
        "n_steps": 50, "n_walks": 20,
    })
    p1 = cli.run("velocity", cfg, seed=99, out_dir=str(tmp_path / "a"))
    report = json.loads(open(p1).read())
    assert report["seed"] == 99


def test_dimension_validation_error(tmp_path):
    cfg = write_config(tmp_path, "bad.json", {
        "experiment": "moments", "seed": 1,
        "law": {"family": "signed_axis_kick", "d": 1, "a": 0.01},
    })
    rc = cli.main(["moments", "--config", cfg, "--out", str(tmp_path / "o")])
    assert rc == 2


def test_experiment_kind_mismatch(tmp_path):
    cfg = write_config(tmp_path, "m.json", {
        "experiment": "moments", "seed": 1,
        "law": {"family": "signed_axis_kick", "d": 2, "a": 0.01},
    })
    rc = cli.main(["velocity", "--config", cfg, "--out", str(tmp_path / "o")])
    assert rc == 2


def test_config_parse_error_reports_location(tmp_path):
    bad = tmp_path / "broken.json"
    bad.write_text('{"experiment": "moments",}')
    with pytest.raises(cli.ConfigError) as exc:
        cli.run("moments", str(bad))
    assert "line" in str(exc.value)


def test_freedman_run_and_summary(tmp_path):
    cfg = write_config(tmp_path, "f.json", {
        "experiment": "freedman", "seed": 2,
        "points": [{"u": 1, "b": 1, "sum_v2": 1}, {"u": 2, "b": 1, "sum_v2": 0}],
        "tail_test": {"increment": "plusminus", "n": 50,
                      "u_grid": [2, 6], "n_paths": 2000},
    })
    report_path = cli.run("freedman", cfg, out_dir=str(tmp_path / "out"))
    report = json.loads(open(report_path).read())
    assert report["bounds"][0]["bound"] == pytest.approx(0.687289, abs=1e-6)
    assert report["bounds"][1]["bound"] == pytest.approx(0.049787, abs=1e-6)
    stream = io.StringIO()
    cli.emit_summary([report_path], stream=stream)
    assert "tails within bound: True" in stream.getvalue()


def test_condition_p_summary_names_threshold_exponent(tmp_path):
    cfg = write_config(tmp_path, "p.json", {
        "experiment": "condition-p", "seed": 2,
        "law": {"family": "point_mass", "d": 3, "weights": {
            "+e1": 1 / 6, "-e1": 1 / 6, "+e2": 1 / 6, "-e2": 1 / 6,
            "+e3": 1 / 6, "-e3": 1 / 6}},
        "M": 2, "n_per_site": 100, "site_cap": 4,
    })
    report_path = cli.run("condition-p", cfg, out_dir=str(tmp_path / "out"))
    stream = io.StringIO()
    cli.emit_summary([report_path], stream=stream)
    line = stream.getvalue()
    assert "M^-50" in line  # 15 d + 5 at d=3
    assert "log_M0=174.0971" in line


def test_summary_requires_existing_reports(tmp_path):
    with pytest.raises(cli.ConfigError):
        cli.emit_summary([])
    with pytest.raises(cli.ConfigError):
        cli.emit_summary([str(tmp_path / "missing.json")])
    corrupt = tmp_path / "bad.json"
    corrupt.write_text("{not json")
    with pytest.raises(cli.ConfigError):
        cli.emit_summary([str(corrupt)])


def test_summary_cli_usage_error_on_no_args():
    with pytest.raises(SystemExit):
        cli.main(["summary"])


def test_csv_outputs_carry_provenance(tmp_path):
    cfg = write_config(tmp_path, "g.json", {
        "experiment": "green", "seed": 3,
        "law": {"family": "signed_axis_kick", "d": 2, "a": 0.05},
        "region": {"kind": "slab", "L": 2, "W": 8},
    })
    cli.run("green", cfg, out_dir=str(tmp_path / "out"))
    text = (tmp_path / "out" / "green_row.csv").read_text()
    first = text.splitlines()[0]
    assert first.startswith("# config_hash=")
    assert "seed=3" in first
