import json

import pytest

from conftest import DEMOS
from tsrefine.cli import main
from tsrefine.errors import ConfigurationError
from tsrefine.evaluate import parse_report_csv
from tsrefine.pipeline import load_config, parse_model_uri, run_pipeline
from tsrefine.trajio import write_trajectories
from tsrefine.wavegen import WaveScenario, generate

SMALL = {
    "data": {"source": "synth", "scenario": {"duration": 1200, "stopgo_period": 120}},
    "grid": {"dt": 60, "dx": 100, "t0": 600, "t_end": 1200, "x0": 0, "x_end": 2000},
    "model": {"source": "builtin"},
    "run": {"passes": 2},
    "outputs": {"images": False},
}


def test_small_builtin_run(tmp_path):
    res = run_pipeline(SMALL, tmp_path)
    assert [p.estimated.spec.shape for p in res.passes] == [(16, 36), (28, 68)]
    for p in res.passes:
        assert p.truth.spec == p.estimated.spec
        assert p.counts.refined + p.counts.skipped == (p.estimated.spec.nt // 2) * (p.estimated.spec.nx // 2)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert [m["size"] for m in man["models"]] == ["60x100", "30x50"]
    assert set(man["outputs_sha256"]) == {
        "coarse.tsf", "pass1_estimated.tsf", "pass1_truth.tsf", "pass1_model.json",
        "pass2_estimated.tsf", "pass2_truth.tsf", "pass2_model.json", "report.csv", "report.txt",
    }


def test_manifest_rerun_is_byte_identical(tmp_path):
    run_pipeline(SMALL, tmp_path / "a")
    assert main(["pipeline", str(tmp_path / "a" / "manifest.json"), "--out", str(tmp_path / "b")]) == 0
    first = json.loads((tmp_path / "a" / "manifest.json").read_text())
    second = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert first == second


def test_one_four_sixteen_demo_reports_five_rows_per_pass(tmp_path, capsys):
    assert main(["pipeline", str(DEMOS / "one-four-sixteen.toml"), "--out", str(tmp_path)]) == 0
    rows = parse_report_csv((tmp_path / "report.csv").read_text())
    assert [r["label"] for r in rows] == ["pass1"] * 5 + ["pass2"] * 5
    assert "pass2" in capsys.readouterr().out
    for stem in ("coarse", "pass1_estimated", "pass2_truth"):
        assert (tmp_path / f"{stem}.ppm").exists() and (tmp_path / f"{stem}.svg").exists()


def test_csv_source_relative_path(tmp_path):
    write_trajectories(generate(WaveScenario(duration=900, stopgo_period=120)), tmp_path / "t.csv")
    cfg = tmp_path / "run.toml"
    cfg.write_text(
        '[data]\nsource = "csv"\npath = "t.csv"\n'
        "[grid]\ndt = 60\ndx = 100\nt0 = 0\nx0 = 0\nx_end = 2000\n"
        '[model]\nuris = ["builtin:60x100"]\n'
        "[outputs]\nimages = false\n"
    )
    assert main(["pipeline", str(cfg)]) == 0
    man = json.loads((tmp_path / "run_out" / "manifest.json").read_text())
    assert man["data"]["path"] == str(tmp_path / "t.csv")
    assert len(man["data"]["sha256"]) == 64


@pytest.mark.parametrize("patch,match", [
    ({"grid": {"dx": 100}}, "dt and dx"),
    ({"data": {"source": "ftp"}}, "unknown data source"),
    ({"data": {"scenario": {"bogus": 1}}}, "unknown scenario keys"),
    ({"model": {"source": "magic"}}, "unknown model source"),
    ({"model": {"uris": ["builtin:60x100"]}}, "2 passes need 2 model uris"),
    ({"run": {"passes": 0}}, "passes"),
])
def test_config_errors(patch, match):
    cfg = {k: dict(v) for k, v in SMALL.items()}
    cfg.update(patch)
    with pytest.raises(ConfigurationError, match=match):
        run_pipeline(cfg)


def test_config_error_exit_code(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[grid\n")
    assert main(["pipeline", str(bad)]) == 2


def test_load_config_formats(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps(SMALL))
    assert load_config(tmp_path / "c.json") == SMALL
    assert load_config(DEMOS / "one-four.toml")["grid"]["dt"] == 60


def test_model_uris(tmp_path):
    assert parse_model_uri("builtin:240x400").cell_dx == 400
    with pytest.raises(ConfigurationError):
        parse_model_uri("builtin:big")
