from __future__ import annotations

import csv
import json
import shutil
import subprocess

import numpy as np
import pytest
import yaml

from zrpfluct import harness
from zrpfluct.cli import main
from zrpfluct.config import ConfigError, RunConfig

LINEAR = {
    "model": {"family": "linear", "n": 1},
    "kernel": {"alpha": 0.75},
    "lattice": {"N": 64},
    "density": {"rho": [1.0]},
    "sim": {"T": 0.2, "replicas": 20, "seed": 3, "grid_steps": 20},
}


def write(tmp_path, data, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return str(path)


def rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_validate_linear_frame(tmp_path):
    cfg = write(tmp_path, LINEAR)
    assert main(["validate", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    table = {r[0]: r[1:] for r in rows(tmp_path / "o" / "validate.csv")[1:]}
    assert table["compatibility"][0] == "pass"
    assert table["frame"][0] in ("pass", "info")


def test_validate_warns_without_frame(tmp_path, capsys):
    data = dict(LINEAR, model={"family": "coupled", "n": 2, "params": {"gamma": 0.1}},
                kernel={"alpha": 1.2}, density={"rho": [0.6, 0.4]})
    cfg = write(tmp_path, data)
    assert main(["validate", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    assert "warn" in capsys.readouterr().out
    assert main(["decompose", "--config", cfg, "--out", str(tmp_path / "o")]) == 1


def test_unknown_key_rejected(tmp_path):
    data = dict(LINEAR, model={"family": "linear", "n": 1, "colour": "red"})
    assert main(["sample", "--config", write(tmp_path, data)]) == 1
    with pytest.raises(ConfigError):
        RunConfig.from_dict(data)


def test_density_length_checked():
    with pytest.raises(ConfigError):
        RunConfig.from_dict(dict(LINEAR, density={"rho": [1.0, 2.0]}))


def test_config_digest_and_override():
    a = RunConfig.from_dict(LINEAR)
    b = a.override(**{"sim.seed": 4})
    assert a.digest() != b.digest()
    assert b.override(**{"sim.seed": 3}).digest() == a.digest()


def test_simulate_is_reproducible_with_manifest(tmp_path):
    cfg = write(tmp_path, LINEAR)
    for d in ("a", "b"):
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / d)]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert any(n.endswith(".manifest.json") for n in names)
    for n in names:
        if not n.endswith(".json"):
            assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
    man = json.loads(next((tmp_path / "a").glob("*.manifest.json")).read_text())
    for key in ("config_hash", "seed", "replicas", "stream_ids", "code_version"):
        assert key in man
    assert man["seed"] == 3 and len(man["stream_ids"]) == 20


def test_seed_flag_changes_output(tmp_path):
    cfg = write(tmp_path, LINEAR)
    main(["sample", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["sample", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "11"])
    f = next(p.name for p in (tmp_path / "a").iterdir() if p.suffix == ".csv")
    assert (tmp_path / "a" / f).read_bytes() != (tmp_path / "b" / f).read_bytes()


def test_gap_command(tmp_path):
    data = dict(LINEAR, gap={"ells": [1, 2, 3], "totals": [1, 3]})
    assert main(["gap", "--config", write(tmp_path, data), "--out", str(tmp_path / "o")]) == 0
    assert len(rows(next((tmp_path / "o").glob("*.csv")))) > 3


def test_sweep_deterministic(tmp_path):
    data = dict(LINEAR, sim={"T": 0.1, "replicas": 8, "seed": 1, "grid_steps": 10},
                sweep={"axis": "N", "values": [32, 64], "estimator": "qv", "fit_slope": True})
    cfg = write(tmp_path, data)
    for d in ("a", "b"):
        assert main(["sweep", "--config", cfg, "--out", str(tmp_path / d)]) == 0
    assert (tmp_path / "a" / "sweep.csv").read_bytes() == (tmp_path / "b" / "sweep.csv").read_bytes()


def test_compare_exit_codes(tmp_path, monkeypatch):
    data = dict(LINEAR, estimators=[{"name": "autocorrelation", "lags": [0.05, 0.1]}])
    cfg = write(tmp_path, data)
    assert main(["compare", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    real = harness.ou_targets
    monkeypatch.setattr(harness, "ou_targets", lambda er, lags: [10.0 * np.asarray(r) + 1.0 for r in real(er, lags)])
    assert main(["compare", "--config", cfg, "--out", str(tmp_path / "o2")]) == 3


def test_console_script(tmp_path):
    exe = shutil.which("zrpfluct")
    if exe is None:
        pytest.skip("console script not installed")
    res = subprocess.run([exe, "validate", "--config", write(tmp_path, LINEAR), "--out", str(tmp_path / "o")],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert "compatibility" in res.stdout
