import csv
import json
from pathlib import Path

import numpy as np
import pytest

from softrom.cli import main

RUN_FILE = """\
material: {youngs_modulus: 1.0e5, poisson_ratio: 0.45}
density: 1000.0
boundary:
  fixed: {kind: axis, axis: x, op: "<", value: 1.0e-9}
scenario:
  gravity: [0.0, 0.0, 0.0]
  forces:
    - {t0: 0.0, t1: inf, select: {kind: axis, axis: x, op: ">", value: 0.09999}, force: [0.0, 0.0, -20.0]}
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "run.yaml").write_text(RUN_FILE)
    assert main(["mesh", "gen-bar", "--nx", "1", "--ny", "1", "--nz", "1",
                 "--dims", "0.1,0.1,0.1", "--out", str(d / "bar.mesh")]) == 0
    return d


def test_help_exits_zero(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--help"])
    assert e.value.code == 0
    assert "softrom" in capsys.readouterr().out


def test_unknown_flag_exits_two():
    with pytest.raises(SystemExit) as e:
        main(["mesh", "gen-bar", "--bogus", "1"])
    assert e.value.code == 2


def test_mesh_info(workdir, capsys):
    assert main(["mesh", "info", str(workdir / "bar.mesh")]) == 0
    out = capsys.readouterr().out
    assert "vertices: 8" in out
    assert "tets:     6" in out


def test_missing_file_is_domain_error(workdir, capsys):
    assert main(["mesh", "info", str(workdir / "nope.mesh")]) == 1
    assert "error:" in capsys.readouterr().err


def test_pipeline_smoke(workdir, capsys):
    d = workdir
    assert main(["gen-data", "--mesh", str(d / "bar.mesh"), "--scenario", str(d / "run.yaml"),
                 "--dt", "0.01", "--steps", "12", "--stride", "1",
                 "--out", str(d / "snaps.srm")]) == 0
    assert main(["pca", "--data", str(d / "snaps.srm"), "--mesh", str(d / "bar.mesh"),
                 "--k", "4", "--out", str(d / "basis.srm")]) == 0
    assert main(["train", "--data", str(d / "snaps.srm"), "--mesh", str(d / "bar.mesh"),
                 "--model", "convex_symmetric", "--k", "2", "--r", "4",
                 "--epochs", "200", "--lr", "2e-3", "--seed", "1",
                 "--out", str(d / "trained")]) == 0
    ckpt = d / "trained" / "model.ckpt"
    assert ckpt.exists()
    assert (d / "trained" / "loss.csv").exists()
    assert main(["relax", "--model", str(ckpt), "--mesh", str(d / "bar.mesh"),
                 "--force", str(d / "run.yaml"), "--iters", "40",
                 "--out", str(d / "relax.csv")]) == 0
    rows = list(csv.reader((d / "relax.csv").open()))
    assert rows[0] == ["iteration", "energy"]
    energies = [float(r[1]) for r in rows[1:]]
    assert energies[-1] <= energies[0] + 1e-12
    assert main(["simulate", "--model", str(ckpt), "--mesh", str(d / "bar.mesh"),
                 "--dt", "0.01", "--steps", "5", "--scenario", str(d / "run.yaml"),
                 "--record", str(d / "sim.csv")]) == 0
    sim_rows = list(csv.reader((d / "sim.csv").open()))
    assert len(sim_rows) == 6  # header + 5 steps
    assert main(["simulate", "--model", str(ckpt), "--mesh", str(d / "bar.mesh"),
                 "--dt", "0.01", "--steps", "3", "--cubature", "4", "--seed", "7",
                 "--record", str(d / "sim_cub.csv")]) == 0
    assert (d / "sim_cub.csv").exists()


def test_wrong_mesh_rejected_for_checkpoint(workdir, capsys):
    d = workdir
    assert main(["mesh", "gen-bar", "--nx", "2", "--ny", "1", "--nz", "1",
                 "--dims", "0.2,0.1,0.1", "--out", str(d / "other.mesh")]) == 0
    code = main(["relax", "--model", str(d / "trained" / "model.ckpt"),
                 "--mesh", str(d / "other.mesh")])
    assert code == 1
    assert "different mesh" in capsys.readouterr().err


def test_seed_reproducibility(workdir):
    d = workdir
    for name in ("a", "b"):
        assert main(["gen-data", "--mesh", str(d / "bar.mesh"),
                     "--scenario", str(d / "run.yaml"), "--dt", "0.01", "--steps", "6",
                     "--stride", "1", "--out", str(d / f"rep_{name}.srm")]) == 0
    assert (d / "rep_a.srm").read_bytes() == (d / "rep_b.srm").read_bytes()


def test_bench_cli_writes_report(tmp_path):
    fixture = {
        "mesh": {"kind": "bar", "nx": 2, "ny": 1, "nz": 1, "dims": [0.2, 0.1, 0.1],
                 "density": 1000.0},
        "material": {"youngs_modulus": 1.0e5, "poisson_ratio": 0.45},
        "boundary": {"fixed": {"kind": "axis", "axis": "x", "op": "<", "value": 1e-9}},
        "data": {"dt": 0.01, "steps": 16, "stride": 2, "scenario": {
            "gravity": [0, 0, 0],
            "forces": [{"t0": 0.0, "t1": "inf",
                        "select": {"kind": "axis", "axis": "x", "op": ">", "value": 0.19999},
                        "force": [-3.0, 0.0, -1.0]}]}},
        "training": {"k": 2, "r": 4, "k_linear": 4, "epochs": 300,
                     "learning_rate": 2.0e-3, "batch_size": 8, "seed": 0,
                     "icnn_hidden": [8], "encoder_hidden": [8], "mlp_hidden": [8]},
        "experiment": {"counts": [2], "trials": 3, "relax_iters": 20},
    }
    import yaml

    fpath = tmp_path / "fixture.yaml"
    fpath.write_text(yaml.safe_dump(fixture))
    out = tmp_path / "out"
    assert main(["bench", "cubature-robustness", "--out", str(out),
                 "--fixture", str(fpath)]) == 0
    payload = json.loads((out / "report.json").read_text())
    assert payload["experiment"] == "cubature-robustness"
    assert (out / "fixture.yaml").exists()
