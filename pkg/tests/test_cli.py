import hashlib
import json
import os

import numpy as np
import pytest

from rfo.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_OK, main
from rfo.fields import derive_scales
from rfo.io import write_snapshot
from rfo.lattice import build_lattice, tile_boxes

MINIMAL = """
[lattice]
d = 2
N = 16

[chain]
therm_sweeps = 50
meas_sweeps = 200

[experiment]
realizations = 2
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "run.toml"
    p.write_text(MINIMAL)
    return p


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for key in [k for k in os.environ if k.startswith("RFO_")]:
        monkeypatch.delenv(key)


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_minimal_simulate_writes_valid_manifest(cfg, tmp_path):
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    m = manifest(out)
    assert sorted(m["outputs"]) == ["realizations.csv", "summary.json"]
    for name, digest in m["checksums"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
    # resolution is total: defaults appear in the manifest
    assert m["config"]["model"]["eps"] == 0.5 and m["config"]["chain"]["meas_sweeps"] == 200
    assert m["master_seed"] == 0
    assert sorted(p.name for p in out.iterdir()) == ["manifest.json", "realizations.csv", "summary.json"]


def test_simulate_rerun_byte_identical(cfg, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["simulate", "--config", str(cfg), "--seed", "5", "--out", str(out)]) == EXIT_OK
    assert (a / "realizations.csv").read_bytes() == (b / "realizations.csv").read_bytes()
    assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()
    assert "master=5" in (a / "realizations.csv").read_text().splitlines()[0]


def test_sweep_writes_one_table_per_value(tmp_path):
    p = tmp_path / "s.toml"
    p.write_text(MINIMAL.replace("N = 16", "N = 8") + '\n[sweep]\nparameter = "beta"\nvalues = [0.5, 1.0]\n')
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(p), "--out", str(out)]) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert [s["value"] for s in summary["sweep"]] == [0.5, 1.0]
    assert (out / "realizations_01.csv").exists()


def test_missing_field_reports_path(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text("[lattice]\nd = 2\n")
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "lattice.N" in capsys.readouterr().err


def test_bad_value_reports_line(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text('[lattice]\nd = 2\nN = "big"\n')
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "lattice.N" in err and ":3" in err


@pytest.mark.parametrize(
    "argv",
    [
        ["--seed", "-1"],
        ["--workers", "0"],
    ],
)
def test_flag_errors(cfg, tmp_path, argv):
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o"), *argv]) == EXIT_CONFIG


def test_precedence_flags_over_env_over_file(cfg, tmp_path, monkeypatch):
    monkeypatch.setenv("RFO_SEED", "3")
    monkeypatch.setenv("RFO_MODEL__EPS", "0.25")
    out = tmp_path / "env"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    m = manifest(out)
    assert m["master_seed"] == 3 and m["config"]["model"]["eps"] == 0.25
    out = tmp_path / "flag"
    assert main(["simulate", "--config", str(cfg), "--seed", "4", "--out", str(out)]) == EXIT_OK
    assert manifest(out)["master_seed"] == 4


def test_groundstate_outputs(tmp_path):
    p = tmp_path / "g.toml"
    p.write_text("[lattice]\nd = 2\nN = 8\n[groundstate]\nstarts = 2\n")
    out = tmp_path / "o"
    assert main(["groundstate", "--config", str(p), "--out", str(out)]) == EXIT_OK
    s = json.loads((out / "summary.json").read_text())
    assert len(s["starts"]) == 2 and all(x["converged"] for x in s["starts"])
    assert set(manifest(out)["outputs"]) == {"spins.csv", "disorder.csv", "energies.csv", "summary.json"}


def test_contours_on_perpendicular_snapshot(tmp_path):
    g = build_lattice(2, 24)
    snap = tmp_path / "e2.csv"
    write_snapshot(snap, np.tile([0.0, 1.0], (g.n_sites, 1)), g, "spins")
    out = tmp_path / "o"
    assert main(["contours", "--snapshot", str(snap), "--out", str(out)]) == EXIT_OK
    report = json.loads((out / "contours.json").read_text())
    assert report["bad_box_count"] == len(tile_boxes(g, derive_scales(0.5, 2).ell))


def test_contours_without_snapshot_is_config_error(tmp_path):
    assert main(["contours", "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_gaussian_check_default_passes(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["gaussian-check", "--out", str(out)]) == EXIT_OK
    assert "covariance ok" in capsys.readouterr().out
    assert json.loads((out / "summary.json").read_text())["passed"]


def test_oracle_check_default_passes(tmp_path):
    out = tmp_path / "o"
    assert main(["oracle-check", "--out", str(out)]) == EXIT_OK
    assert json.loads((out / "summary.json").read_text())["passed"]


def test_failed_check_exits_3(tmp_path):
    p = tmp_path / "o.toml"
    p.write_text("[oracle]\nsweeps = 20\ntherm_sweeps = 0\nnsigma = 0.0\nmin_fraction = 1.0\nbetas = [2.0]\neps_values = [0.5]\nseeds = [0]\n")
    out = tmp_path / "o"
    assert main(["oracle-check", "--config", str(p), "--out", str(out)]) == EXIT_CHECK
    assert "cells.csv" in manifest(out)["outputs"]
