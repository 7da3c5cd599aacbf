import json

import numpy as np
import pytest

from nwfr.cli import main
from nwfr.ingest import fixture_paths


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert run("simulate", "--ew", "one", "--oc", "equal", "--cbc", "low", "--reps", 2, "--seed", 7,
               "--n-total", 40, "--n-basis", 6, "--out", out) == 0
    return out


def read(path):
    return json.loads(path.read_text())


def test_simulate_outputs_and_manifest(sim_dir):
    names = sorted(p.name for p in sim_dir.iterdir())
    assert names == ["edges_one-equal-low_r000.csv", "edges_one-equal-low_r001.csv",
                     "instance_one-equal-low_r000.json", "instance_one-equal-low_r001.json", "manifest.json"]
    man = read(sim_dir / "manifest.json")
    assert man["command"] == "simulate" and len(man["seeds"]) == 2
    assert man["config"]["seed"] == 7 and "func" not in man["config"]
    assert (sim_dir / "edges_one-equal-low_r000.csv").read_text().startswith("u,v,weight\n")


def test_simulate_is_deterministic(sim_dir, tmp_path):
    assert run("simulate", "--ew", "one", "--oc", "equal", "--cbc", "low", "--reps", 2, "--seed", 7,
               "--n-total", 40, "--n-basis", 6, "--out", tmp_path) == 0
    for name in ("instance_one-equal-low_r001.json", "edges_one-equal-low_r001.csv"):
        assert (tmp_path / name).read_bytes() == (sim_dir / name).read_bytes()


def test_usage_errors(capsys, tmp_path):
    assert run("simulate", "--ew", "purple", "--out", tmp_path) == 2
    assert run("permtest", "--data", "x.json", "--nperm", 0) == 2
    assert run("conformal", "--data", "x.json", "--alpha", 1.5) == 2
    assert run("frobnicate") == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert all(line.startswith("nwfr: error[2] UsageError:") for line in err)


def test_missing_file_is_a_data_error(capsys, tmp_path):
    assert run("fit", "--data", tmp_path / "nope.json", "--model", "classic", "--out", tmp_path) == 3
    assert "not found" in capsys.readouterr().err


def _files(sim_dir):
    return sim_dir / "instance_one-equal-low_r000.json", sim_dir / "edges_one-equal-low_r000.csv"


def test_fit_nwfr_auto(sim_dir, tmp_path):
    data, edges = _files(sim_dir)
    assert run("fit", "--data", data, "--edges", edges, "--model", "nwfr", "--theta", "auto",
               "--grid-size", 21, "--surfaces", "--out", tmp_path) == 0
    g = read(tmp_path / "gof.json")
    assert {"rimse", "r2_tilde"} <= set(g) and g["theta"] > 0
    model = read(tmp_path / "model.json")
    assert model["kind"] == "model" and len(model["blocks"]) == 40
    surf = (tmp_path / "surfaces" / "beta_v3_p0.csv").read_text().splitlines()
    assert surf[0] == "t,s,value" and len(surf) == 1 + 21 * 21
    assert len(read(tmp_path / "manifest.json")["outputs"]) == 2 + 40


def test_fit_classic_blocks_identical(sim_dir, tmp_path):
    data, _ = _files(sim_dir)
    assert run("fit", "--data", data, "--model", "classic", "--out", tmp_path) == 0
    blocks = np.array(read(tmp_path / "model.json")["blocks"])
    assert np.all(blocks == blocks[0])


def test_gwfr_requires_coordinates(sim_dir, tmp_path, capsys):
    data, _ = _files(sim_dir)
    assert run("fit", "--data", data, "--model", "gwfr", "--out", tmp_path) == 2
    assert "coordinates required" in capsys.readouterr().err
    coords = tmp_path / "c.csv"
    coords.write_text("vertex,x,y\n" + "".join(f"{v},{v % 7},{v // 7}\n" for v in range(40)))
    assert run("fit", "--data", data, "--model", "gwfr", "--coords", coords, "--theta", 2,
               "--out", tmp_path / "g") == 0


def test_permtest(sim_dir, tmp_path):
    data, edges = _files(sim_dir)
    assert run("permtest", "--data", data, "--edges", edges, "--theta", 1.0, "--coef", 0, "--nperm", 20,
               "--seed", 3, "--out", tmp_path / "a") == 0
    rep = read(tmp_path / "a" / "permtest.json")
    assert {"v_obs", "p_value", "null"} <= set(rep) and len(rep["null"]) == 20
    assert run("permtest", "--data", data, "--model", "classic", "--nperm", 20, "--out", tmp_path / "b") == 0
    assert read(tmp_path / "b" / "permtest.json")["p_value"] == 1.0


def test_conformal_and_band_export(sim_dir, tmp_path):
    data, edges = _files(sim_dir)
    common = ["conformal", "--data", data, "--edges", edges, "--theta", 1.0, "--alpha", 0.1,
              "--grid-size", 51, "--seed", 1]
    assert run(*common, "--score", "d2", "--out", tmp_path / "d2") == 0
    assert run(*common, "--score", "dinf", "--out", tmp_path / "dinf") == 0
    r2, rinf = read(tmp_path / "d2" / "report.json"), read(tmp_path / "dinf" / "report.json")
    assert {"cov_g", "cov_l", "abw", "interval_score"} <= set(r2)
    assert rinf["abw"] >= r2["abw"]
    assert run("plotdata", "bands", "--input", tmp_path / "d2" / "report.json", "--out", tmp_path / "pb") == 0
    assert (tmp_path / "pb" / "bands.csv").read_text() == (tmp_path / "d2" / "bands.csv").read_text()


def test_plotdata_curves_and_surface(sim_dir, tmp_path):
    data, _ = _files(sim_dir)
    assert run("plotdata", "curves", "--input", data, "--grid-size", 5, "--out", tmp_path) == 0
    rows = (tmp_path / "curves.csv").read_text().splitlines()
    assert rows[0] == "vertex,variable,t,value" and len(rows) == 1 + 2 * 40 * 5
    assert run("plotdata", "surface", "--input", data, "--out", tmp_path) == 3
    assert run("fit", "--data", data, "--model", "classic", "--out", tmp_path / "m") == 0
    assert run("plotdata", "surface", "--input", tmp_path / "m" / "model.json", "--vertex", 2,
               "--grid-size", 7, "--out", tmp_path) == 0
    assert len((tmp_path / "surface.csv").read_text().splitlines()) == 1 + 49


def test_bench_respects_env_workers(tmp_path, monkeypatch):
    args = ["bench", "--ew", "one", "--oc", "equal", "--cbc", "all", "--reps", 2, "--n-total", 24,
            "--n-basis", 5, "--grid-size", 31, "--seed", 2]
    assert run(*args, "--out", tmp_path / "a") == 0
    monkeypatch.setenv("NWFR_WORKERS", "2")
    assert run(*args, "--out", tmp_path / "b") == 0
    assert (tmp_path / "a" / "study.csv").read_bytes() == (tmp_path / "b" / "study.csv").read_bytes()
    assert "NWFR" in (tmp_path / "a" / "study.md").read_text()
    monkeypatch.setenv("NWFR_WORKERS", "many")
    assert run(*args, "--out", tmp_path / "c") == 2


def test_ingest_fixture_is_byte_deterministic(tmp_path):
    p = fixture_paths()
    args = ["ingest", "--readings", p["readings"], "--connectivity", p["connectivity"], "--coords", p["coords"]]
    assert run(*args, "--out", tmp_path / "a") == 0
    assert run(*args, "--out", tmp_path / "b") == 0
    for name in ("dataset.json", "edges.csv", "coords.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    man = read(tmp_path / "a" / "manifest.json")
    assert man["sensors"] == [1, 2, 3, 4, 5] and man["imputed"] == 13
    assert [r["line"] for r in man["rejects"]] == [501, 901]
    assert run("fit", "--data", tmp_path / "a" / "dataset.json", "--edges", tmp_path / "a" / "edges.csv",
               "--theta", 1.0, "--out", tmp_path / "fit") == 0
    assert run(*args, "--window", 0, "--out", tmp_path / "c") == 2
