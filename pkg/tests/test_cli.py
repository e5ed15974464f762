from __future__ import annotations

import json
import socket
import subprocess
import sys

import numpy as np
import pytest

from texro.cli import main
from texro.fixtures import make_quad, make_uv_sphere
from texro.geometry import save_obj
from texro.raster import load_png, save_png

pytestmark = pytest.mark.filterwarnings("ignore::texro.errors.NonManifoldWarning")

SMALL_INI = """\
[mesh]
path = sphere.obj

[pipeline]
prompt = a ball
N = 2
base_resolution = 64
render_size = 128

[viewselect]
candidates = 256
"""


@pytest.fixture
def sphere_obj(tmp_path):
    p = tmp_path / "sphere.obj"
    save_obj(make_uv_sphere(), p)
    return p


@pytest.fixture
def small_config(tmp_path, sphere_obj):
    p = tmp_path / "run.ini"
    p.write_text(SMALL_INI)
    return p


def test_select_views_report(sphere_obj, tmp_path, capsys):
    out = tmp_path / "views.json"
    assert main(["select-views", str(sphere_obj), "-K", "8192", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["candidates"] == 8192 and rep["selected"] == len(rep["views"]) > 0
    assert rep["coverage_area_fraction"] >= 0.999
    assert rep["wall_ms"] >= 0
    assert {"azimuth", "elevation", "radius"} <= set(rep["views"][0]["camera"])


def test_select_views_stdout(sphere_obj, capsys):
    assert main(["select-views", str(sphere_obj), "-K", "64"]) == 0
    assert json.loads(capsys.readouterr().out)["candidates"] == 64


def test_select_views_missing_file(tmp_path, capsys):
    missing = tmp_path / "nope.obj"
    assert main(["select-views", str(missing)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_select_views_bad_k(sphere_obj, capsys):
    with pytest.raises(SystemExit) as err:
        main(["select-views", str(sphere_obj), "-K", "0"])
    assert err.value.code == 2
    assert "must be >= 1" in capsys.readouterr().err


def test_run_writes_outputs(small_config, tmp_path):
    out = tmp_path / "out"
    assert main(["run", str(small_config), "--out-dir", str(out)]) == 0
    assert load_png(out / "texture.png").shape == (96, 96, 3)
    for k in range(4):
        assert (out / f"preview_{k}.png").exists()
    rep = json.loads((out / "report.json").read_text())
    assert rep["status"] == "ok" and len(rep["steps"]) == 2


def test_run_override_n1(small_config, tmp_path):
    out = tmp_path / "o"
    assert main(["run", str(small_config), "-o", "pipeline.N=1", "--denoiser", "procedural", "--out-dir", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert len(rep["steps"]) == 1 and rep["denoiser"]["kind"] == "procedural"


def test_run_bad_override(small_config, tmp_path, capsys):
    assert main(["run", str(small_config), "-o", "pipeline.N=0", "--out-dir", str(tmp_path / "x")]) == 2
    assert "pipeline.N" in capsys.readouterr().err


def test_run_dead_endpoint(small_config, tmp_path):
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    out = tmp_path / "dead"
    code = main(["run", str(small_config), "--denoiser", "remote", "-o", f"denoiser.endpoint=http://127.0.0.1:{port}/g",
                 "-o", "denoiser.backoff_s=0", "--out-dir", str(out)])
    assert code == 3
    rep = json.loads((out / "report.json").read_text())
    assert rep["status"] == "failed" and rep["phases_completed"] == ["load", "select_views"]
    assert rep["error"]["attempts"] == 4 and len(rep["error"]["retry_events"]) == 3


def test_run_missing_mesh_exit2(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[mesh]\npath = missing.obj\n")
    assert main(["run", str(p), "--out-dir", str(tmp_path / "o")]) == 2


def test_render_quad_red(tmp_path):
    save_obj(make_quad(), tmp_path / "q.obj")
    save_png(np.broadcast_to(np.array([1.0, 0, 0]), (8, 8, 3)), tmp_path / "red.png")
    out = tmp_path / "r.png"
    args = ["render", str(tmp_path / "q.obj"), str(tmp_path / "red.png"), "--elevation", "1", "--size", "64",
            "--radius", "2", "--out", str(out)]
    assert main(args) == 0
    img = load_png(out)
    fg = img.sum(axis=2) > 0
    assert fg.mean() > 0.3 and (img[fg] == [1, 0, 0]).all()
    first = out.read_bytes()
    assert main(args) == 0 and out.read_bytes() == first
    back = tmp_path / "b.png"
    args_back = ["render", str(tmp_path / "q.obj"), str(tmp_path / "red.png"), "--elevation", "179", "--size", "64",
                 "--radius", "2", "--out", str(back)]
    assert main(args_back) == 0
    assert (load_png(back).sum(axis=2) > 0).mean() < 0.05


def test_render_missing_texture(tmp_path):
    save_obj(make_quad(), tmp_path / "q.obj")
    assert main(["render", str(tmp_path / "q.obj"), str(tmp_path / "none.png"), "--out", str(tmp_path / "o.png")]) == 2


def test_render_bad_pose(tmp_path):
    save_obj(make_quad(), tmp_path / "q.obj")
    save_png(np.zeros((4, 4, 3)), tmp_path / "t.png")
    assert main(["render", str(tmp_path / "q.obj"), str(tmp_path / "t.png"), "--elevation", "0",
                 "--out", str(tmp_path / "o.png")]) == 2


def test_inspect_schedule(capsys):
    assert main(["inspect-schedule", "-o", "pipeline.N=3"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["plan"]["resolutions"] == [307, 460, 690]
    assert len(data["schedule"]["reduced_to_full"]) == 10


def test_make_fixture(tmp_path):
    out = tmp_path / "ico.obj"
    assert main(["make-fixture", "icosphere", "--subdivisions", "2", "--texture", str(tmp_path / "gt.png"),
                 "--resolution", "32", "--out", str(out)]) == 0
    assert "mtllib ico.mtl" in out.read_text()
    assert load_png(tmp_path / "gt.png").shape == (32, 32, 3)


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "texro", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "select-views" in res.stdout
    res = subprocess.run([sys.executable, "-m", "texro", "bogus"], capture_output=True, text=True)
    assert res.returncode == 2
