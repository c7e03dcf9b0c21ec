from __future__ import annotations

import numpy as np
import pytest

from spfilter.cli import CONFIG_ENV, EXIT_INPUT, EXIT_NUMERIC, EXIT_OK, main
from spfilter.io import read_csv, read_ply, read_raster, read_surface
from spfilter.labels import read_manifest
from spfilter.synthetic import SceneSpec, dump_scene_spec

TINY = SceneSpec(seed=1, extent=(6.0, 4.0), waypoints=((1.0, 2.0), (5.0, 2.0)))


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    scene = root / "scene.ini"
    dump_scene_spec(TINY, scene)
    data = root / "data"
    assert main(["synth", "--scene", str(scene), "--out", str(data), "--frame-stride", "6"]) == EXIT_OK
    return data


def test_synth_layout(dataset):
    dirs = read_manifest(dataset / "manifest.txt")
    assert len(dirs) >= 2
    for name in ("truth_surface.spfr", "gp_surface.spfr", "trajectory.csv", "footholds.csv", "footholds.ply"):
        assert (dataset / name).exists()
    for f in ("meta.txt", "cloud.ply", "rgb.spfr"):
        assert (dirs[0] / f).exists()


def test_footholds_and_surface(dataset, tmp_path):
    fh = tmp_path / "fh.csv"
    assert main(["footholds", "--trajectory", str(dataset / "trajectory.csv"), "--out", str(fh)]) == EXIT_OK
    _, rows = read_csv(fh)
    _, ref = read_csv(dataset / "footholds.csv")
    assert len(rows) == len(ref) > 0
    surf = tmp_path / "s.spfr"
    assert main(["surface", "--footholds", str(fh), "--out", str(surf), "--resolution", "0.08"]) == EXIT_OK
    s = read_surface(surf)
    assert s.resolution == pytest.approx(0.08)
    assert np.any(s.valid)


def test_labels_filter_train_map_eval_report(dataset, tmp_path):
    manifest = dataset / "manifest.txt"
    assert main(["labels", "--surface", str(dataset / "gp_surface.spfr"), "--manifest", str(manifest)]) == EXIT_OK
    d0 = read_manifest(manifest)[0]
    assert read_raster(d0 / "ssde.spfr").shape[0] == 3

    out_ply = tmp_path / "f.ply"
    rc = main(["filter", "--input", str(d0 / "cloud.ply"), "--rgb", str(d0 / "rgb.spfr"),
               "--pose", str(d0 / "meta.txt"), "--output", str(out_ply)])
    assert rc == EXIT_OK
    # pixel collisions keep only the nearest point, so the count can only shrink
    n_out, n_in = len(read_ply(out_ply)), len(read_ply(d0 / "cloud.ply"))
    assert 0.9 * n_in < n_out <= n_in

    model = tmp_path / "m.spfm"
    assert main(["--seed", "3", "train", "--manifest", str(manifest), "--out", str(model), "--epochs", "3"]) == EXIT_OK
    assert model.exists()

    raster = tmp_path / "map.spfr"
    csv = tmp_path / "map.csv"
    assert main(["map", "--manifest", str(manifest), "--out", str(raster), "--csv", str(csv),
                 "--size", "4", "--resolution", "0.08"]) == EXIT_OK
    assert read_raster(raster).shape[1:] == (50, 50)

    rep = {}
    for mode in ("raw", "spf"):
        rep[mode] = tmp_path / f"{mode}.csv"
        assert main(["eval", "--manifest", str(manifest), "--filter", mode, "--size", "4",
                     "--resolution", "0.08", "--out", str(rep[mode])]) == EXIT_OK
    rc = main(["eval", "--manifest", str(manifest), "--filter", "spf", "--predictor", f"model:{model}",
               "--size", "4", "--resolution", "0.08"])
    assert rc == EXIT_OK

    merged = tmp_path / "all.csv"
    assert main(["report", str(rep["raw"]), str(rep["spf"]), "--out", str(merged)]) == EXIT_OK
    header, rows = read_csv(merged)
    assert header[0] == "name"
    assert [r[0] for r in rows] == ["raw-map", "raw-depth", "spf-map", "filtered-depth"]


def test_missing_file_is_input_error(tmp_path):
    assert main(["footholds", "--trajectory", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "x.csv")]) \
        == EXIT_INPUT


def test_bad_arguments_are_input_errors(tmp_path):
    assert main(["nosuchcommand"]) == EXIT_INPUT
    assert main(["footholds"]) == EXIT_INPUT
    assert main(["filter", "--input", "a", "--rgb", "b", "--pose", "c", "--output", "d",
                 "--predictor", "bogus"]) == EXIT_INPUT


def test_help_exits_ok(capsys):
    assert main(["--help"]) == EXIT_OK
    assert "synth" in capsys.readouterr().out


def test_numerical_failure_exit_code(dataset, tmp_path, monkeypatch):
    def broken(a):
        raise np.linalg.LinAlgError("not positive definite")

    monkeypatch.setattr(np.linalg, "cholesky", broken)
    rc = main(["surface", "--footholds", str(dataset / "footholds.csv"), "--out", str(tmp_path / "s.spfr")])
    assert rc == EXIT_NUMERIC


def test_config_section_supplies_defaults(dataset, tmp_path):
    cfg = tmp_path / "spf.ini"
    out = tmp_path / "fh.csv"
    cfg.write_text(f"[footholds]\ntrajectory = {dataset / 'trajectory.csv'}\nout = {out}\nr_t = 0.005\n")
    assert main(["--config", str(cfg), "footholds"]) == EXIT_OK
    _, strict = read_csv(out)
    _, default = read_csv(dataset / "footholds.csv")
    assert len(strict) <= len(default)


def test_config_from_environment(dataset, tmp_path, monkeypatch):
    cfg = tmp_path / "env.ini"
    out = tmp_path / "env.csv"
    cfg.write_text(f"[footholds]\ntrajectory = {dataset / 'trajectory.csv'}\nout = {out}\n")
    monkeypatch.setenv(CONFIG_ENV, str(cfg))
    assert main(["footholds"]) == EXIT_OK
    assert out.exists()


def test_config_unknown_key(tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[footholds]\nwindow = 3\n")
    assert main(["--config", str(cfg), "footholds", "--trajectory", "a", "--out", "b"]) == EXIT_INPUT


def test_config_missing_file(tmp_path):
    assert main(["--config", str(tmp_path / "none.ini"), "footholds", "--trajectory", "a",
                 "--out", "b"]) == EXIT_INPUT
