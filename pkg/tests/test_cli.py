import json
from pathlib import Path

import pytest

from memspec import config
from memspec.cli import main
from memspec.config import ConfigError


def test_list_shows_all_presets(capsys):
    assert main(["list"]) == 0
    names = capsys.readouterr().out.split()
    assert len(names) == 10 and "fig3_memory" in names and "suppfig6_curve" in names


@pytest.mark.parametrize("name", config.list_presets())
def test_every_preset_validates(name):
    report = config.validate(config.preset(name))
    assert report["kind"] == config.preset(name).kind


def test_validate_reports_derived_values(capsys):
    assert main(["validate", "fig3_memory"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["status"] == "ok"
    assert out["tau_s"] == pytest.approx(1 / (2 * 6.626070e6))


def test_unknown_key_names_path(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("kind: ac\nsignal:\n  tones:\n    - {amplitud_T: 1e-6}\n")
    assert main(["validate", str(cfg)]) == 2
    assert "signal.tones[0].amplitud_T" in capsys.readouterr().err


def test_tau_below_dead_time_rejected(capsys):
    assert main(["validate", "fig3_memory", "-o", "xy8.tau=1e-9", "-o", "xy8.f_target_Hz=null"]) == 2
    assert "xy8.tau" in capsys.readouterr().err


def test_override_bad_value():
    with pytest.raises(ConfigError):
        config.preset("fig3_memory", ["t_grid.count=-3"])


def test_run_failure_leaves_no_output(tmp_path, capsys):
    out = tmp_path / "run"
    # a fit window far from any line cannot converge
    rc = main(["preset", "fig3_no_memory", "--out", str(out), "-o", "t_grid.count=20",
               "-o", "analysis.fit_window_Hz=[9990, 9995]"])
    assert rc == 3
    assert not out.exists() and not list(tmp_path.iterdir())


def _bundle(path: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(path.iterdir()) if p.name != "manifest.json"}


@pytest.mark.parametrize("name,overrides", [
    ("fig3_memory", ["t_grid.count=24", "t_grid.stop=0.00695652", "analysis.fit_window_Hz=null"]),
    ("fig4d_repump", ["t_grid.count=12", "t_grid.stop=0.0021440", "nmr.trajectories=60",
                      "analysis.fit_window_Hz=null"]),
])
def test_reruns_byte_identical_across_workers(tmp_path, name, overrides):
    args = sum((["-o", o] for o in overrides), [])
    assert main(["preset", name, "--out", str(tmp_path / "a"), "--workers", "1", *args]) == 0
    assert main(["preset", name, "--out", str(tmp_path / "b"), "--workers", "2", *args]) == 0
    a, b = _bundle(tmp_path / "a"), _bundle(tmp_path / "b")
    assert a == b
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma["files"] == mb["files"]


def test_run_from_yaml(tmp_path):
    cfg = tmp_path / "rabi.yaml"
    cfg.write_text("name: r\nkind: rabi\nrabi: {mode: store_retrieve}\n"
                   "t_grid: {start: 0, stop: 2.0e-6, count: 40}\n")
    assert main(["run", str(cfg), "--out", str(tmp_path / "out")]) == 0
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert "trace.tsv" in manifest["files"]
