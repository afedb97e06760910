import json
import shutil
import subprocess
import sys

import pytest

from rtdisc.cli import bundled_scene, main
from rtdisc.media import save_scene, scene_to_dict, uniform_disk

from conftest import square_scene

FAST = ["--nx", "12", "--ntheta", "8", "--ray-step", "0.08", "--tol", "1e-6"]


@pytest.fixture
def uniform_file(tmp_path):
    path = tmp_path / "uniform.json"
    save_scene(uniform_disk(0.3, 0.3), path)
    return path


def test_solve_writes_trace(tmp_path, uniform_file, capsys):
    code = main(["solve", "--scene", str(uniform_file), "--out", str(tmp_path), "--detectors", "8", *FAST])
    assert code == 0
    rows = (tmp_path / "trace.csv").read_text().splitlines()
    assert rows[0] == "index,x,y,xi_x,xi_y,value,ballistic,scattered"
    assert len(rows) == 9
    assert "iterations:" in (tmp_path / "report.txt").read_text()


def test_solve_is_deterministic(tmp_path, uniform_file):
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert main(["solve", "--scene", str(uniform_file), "--out", str(out), "--boundary", "split",
                     "--detectors", "6", *FAST]) == 0
        outs.append((out / "trace.csv").read_bytes())
    assert outs[0] == outs[1]


def test_sinogram_and_reconstruct(tmp_path, uniform_file):
    args = ["--scene", str(uniform_file), "--nphi", "6", "--ns", "10", "--np", "12"]
    assert main(["sinogram", "--out", str(tmp_path / "a"), *args]) == 0
    sino = tmp_path / "a" / "sinogram.csv"
    assert sino.read_text().startswith("angle_index,offset_index,angle_rad,offset,value,masked\n")
    assert main(["reconstruct", "--out", str(tmp_path / "b"), "--sinogram", str(sino), *args]) == 0
    assert (tmp_path / "b" / "recon.pgm").exists() and (tmp_path / "b" / "recon.csv").exists()


def test_sinogram_deterministic(tmp_path, uniform_file):
    args = ["--scene", str(uniform_file), "--nphi", "3", "--ns", "6"]
    main(["sinogram", "--out", str(tmp_path / "a"), *args])
    main(["sinogram", "--out", str(tmp_path / "b"), *args])
    assert (tmp_path / "a" / "sinogram.csv").read_bytes() == (tmp_path / "b" / "sinogram.csv").read_bytes()


def test_predict_disc(tmp_path, capsys):
    path = tmp_path / "square.json"
    save_scene(square_scene(), path)
    assert main(["predict-disc", "--scene", str(path), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "coefficient_induced: 4 segments, 8 families" in out
    rows = (tmp_path / "disc.csv").read_text().splitlines()
    assert len(rows) == 1 + 2 + 8


def test_predict_disc_circles(tmp_path, capsys):
    assert main(["predict-disc", "--scene", str(bundled_scene("phantom_slice.json")),
                 "--out", str(tmp_path)]) == 0
    assert "coefficient_induced: none" in capsys.readouterr().out


def test_validate_default_phantom(tmp_path, capsys):
    code = main(["validate", "--out", str(tmp_path)])
    out = capsys.readouterr().out
    assert code == 0, out
    assert "FAIL" not in out and out.count("PASS") >= 8


def test_corrupted_scene_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    assert main(["solve", "--scene", str(bad), "--out", str(tmp_path)]) == 1
    assert "line 1" in capsys.readouterr().err


def test_bad_g_exit_1_names_field(tmp_path, capsys):
    doc = scene_to_dict(uniform_disk(0.1, 0.1))
    doc["phase"] = {"kind": "henyey-greenstein", "g": 1.0, "dimension": 2}
    path = tmp_path / "g.json"
    path.write_text(json.dumps(doc))
    assert main(["validate", "--scene", str(path), "--out", str(tmp_path)]) == 1
    assert "phase.g" in capsys.readouterr().err


def test_non_convergence_exit_2(tmp_path, uniform_file):
    assert main(["solve", "--scene", str(uniform_file), "--out", str(tmp_path),
                 "--max-iter", "1", *FAST]) == 2


def test_reconstruction_error_exit_4(tmp_path):
    sino = tmp_path / "s.csv"
    rows = ["angle_index,offset_index,angle_rad,offset,value,masked"]
    rows += [f"0,{l},0,{-0.5 + l * 0.25},1,1" for l in range(5)]
    sino.write_text("\n".join(rows) + "\n")
    assert main(["reconstruct", "--sinogram", str(sino), "--out", str(tmp_path), "--np", "8"]) == 4


def test_ball_without_slice_exit_1(tmp_path):
    code = main(["sinogram", "--scene", str(bundled_scene("phantom_ball.json")), "--out", str(tmp_path)])
    assert code == 1


def test_bad_grid_exit_1(tmp_path, uniform_file):
    assert main(["solve", "--scene", str(uniform_file), "--out", str(tmp_path), "--nx", "1"]) == 1


@pytest.mark.skipif(shutil.which("rtdisc") is None, reason="console script not installed")
def test_console_script(tmp_path):
    out = subprocess.run(["rtdisc", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "predict-disc" in out.stdout


def test_module_entry(tmp_path):
    out = subprocess.run([sys.executable, "-m", "rtdisc.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
