from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from texro.errors import DegenerateBounds, GeometryError, DegenerateFaceWarning, MissingUVs, NonManifoldWarning, ParseError
from texro.fixtures import make_cube, make_icosphere, make_quad
from texro.geometry import (
    Camera,
    TriangleMesh,
    camera_matrices,
    face_basis,
    load_mesh,
    normalize_mesh,
    project_points,
    save_obj,
)

QUAD_OBJ = """\
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
vt 0 0
vt 1 0
vt 1 1
vt 0 1
f 1/1 2/2 3/3 4/4
"""


def _write(tmp_path, text, name="m.obj"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_quad_fan_triangulated(tmp_path):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonManifoldWarning)
        m = load_mesh(_write(tmp_path, QUAD_OBJ))
    assert m.n_faces == 2
    assert m.corner_uvs.shape == (2, 3, 2)
    np.testing.assert_array_equal(m.triangles, [[0, 1, 2], [0, 2, 3]])


def test_load_cube_roundtrip(tmp_path):
    cube = make_cube()
    p = tmp_path / "cube.obj"
    save_obj(cube, p)
    m = load_mesh(p)
    assert m.n_faces == 12
    assert m.corner_uvs.min() >= 0 and m.corner_uvs.max() <= 1
    np.testing.assert_allclose(m.vertices, cube.vertices)
    np.testing.assert_allclose(m.corner_uvs, cube.corner_uvs)


def test_missing_uvs(tmp_path):
    with pytest.raises(MissingUVs):
        load_mesh(_write(tmp_path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n"))


def test_parse_errors(tmp_path):
    with pytest.raises(ParseError):
        load_mesh(_write(tmp_path, "v 0 0 0\nv 1 0\nvt 0 0\nf 1/1 2/1 3/1\n"))
    with pytest.raises(ParseError):
        load_mesh(_write(tmp_path, "v 0 0 0\nvt 0 0\nf 1/1 2/1 5/1\n"))
    with pytest.raises(ParseError):
        load_mesh(_write(tmp_path, "v 0 0 0\n"))


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_mesh(tmp_path / "nope.obj")


def test_degenerate_face_kept_with_warning(tmp_path):
    text = "v 0 0 0\nv 1 0 0\nv 2 0 0\nv 0 1 0\nvt 0 0\nf 1/1 2/1 3/1\nf 1/1 2/1 4/1\n"
    with pytest.warns(DegenerateFaceWarning), warnings.catch_warnings():
        warnings.simplefilter("ignore", NonManifoldWarning)
        m = load_mesh(_write(tmp_path, text))
    assert m.n_faces == 2
    assert m.degenerate.tolist() == [True, False]


def test_normalize_cube():
    m = normalize_mesh(make_cube(0.0, 2.0))
    np.testing.assert_allclose(m.bounds[0], -1)
    np.testing.assert_allclose(m.bounds[1], 1)


def test_normalize_identity_and_idempotent():
    ico = make_icosphere(2)
    once = normalize_mesh(ico)
    np.testing.assert_allclose(normalize_mesh(once).vertices, once.vertices, atol=1e-7)
    cube = make_cube()
    np.testing.assert_allclose(normalize_mesh(cube).vertices, cube.vertices, atol=1e-7)
    np.testing.assert_array_equal(once.corner_uvs, ico.corner_uvs)


def test_normalize_degenerate_bounds():
    v = np.zeros((3, 3))
    m = TriangleMesh(v, np.array([[0, 1, 2]]), np.zeros((1, 3, 2)))
    with pytest.raises(DegenerateBounds):
        normalize_mesh(m)


def test_face_basis():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float)
    m = TriangleMesh(v, np.array([[0, 1, 2], [0, 2, 1]]), np.zeros((2, 3, 2)))
    c, n, a, deg = face_basis(m, 0)
    np.testing.assert_allclose(c, [1 / 3, 1 / 3, 0])
    np.testing.assert_allclose(n, [0, 0, 1])
    assert a == 0.5 and not deg
    _, n2, _, _ = face_basis(m, 1)
    np.testing.assert_allclose(n2, [0, 0, -1])
    col = TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], float), np.array([[0, 1, 2]]), np.zeros((1, 3, 2)))
    _, n3, a3, deg3 = face_basis(col, 0)
    assert a3 == 0.0 and deg3 and not n3.any()


def test_mesh_invariants(uv_sphere):
    assert np.allclose(np.linalg.norm(uv_sphere.face_normals, axis=1), 1, atol=1e-6)
    assert (uv_sphere.face_areas >= 0).all()


def test_mesh_rejects_bad_indices():
    with pytest.raises(GeometryError):
        TriangleMesh(np.zeros((3, 3)), np.array([[0, 1, 3]]), np.zeros((1, 3, 2)))
    with pytest.raises(GeometryError):
        TriangleMesh(np.eye(3), np.array([[0, 1, 2]]), np.full((1, 3, 2), 1.5))


def test_camera_equator_convention():
    cam = Camera(0.0, 90.0, 1.0)
    np.testing.assert_allclose(cam.position, [1, 0, 0], atol=1e-12)
    _, _, fwd = cam.basis()
    np.testing.assert_allclose(fwd, [-1, 0, 0], atol=1e-12)


def test_camera_pole_limit():
    cam = Camera(0.0, 1e-6, 2.0)
    np.testing.assert_allclose(cam.position, [0, 0, 2], atol=1e-6)
    r, u, f = cam.basis()
    assert abs(np.dot(r, u)) < 1e-9 and abs(np.dot(r, f)) < 1e-9


def test_camera_validation():
    with pytest.raises(ValueError):
        Camera(360.0, 90.0, 1.0)
    with pytest.raises(ValueError):
        Camera(0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        Camera(0.0, 90.0, -1.0)


def test_camera_from_position_roundtrip():
    cam = Camera(123.0, 70.0, 1.3)
    back = Camera.from_position(cam.position)
    assert back.azimuth == pytest.approx(123.0) and back.elevation == pytest.approx(70.0)
    assert back.radius == pytest.approx(1.3)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 359.9), st.floats(0.5, 179.5), st.floats(0.5, 5), st.floats(10, 120), st.integers(8, 1024))
def test_origin_projects_to_center(az, el, r, fov, size):
    cam = Camera(az, el, r, fov, size)
    px, z = project_points(cam, np.zeros((1, 3)))
    np.testing.assert_allclose(px[0], [size / 2, size / 2], atol=1e-9)
    assert z[0] == pytest.approx(r)


def test_camera_matrices_agree_with_projection():
    cam = Camera(40.0, 75.0, 2.5, 50.0, 512)
    view, proj = camera_matrices(cam)
    pts = np.random.default_rng(0).uniform(-0.5, 0.5, (20, 3))
    px, z = project_points(cam, pts)
    h = np.c_[pts, np.ones(len(pts))] @ view.T
    np.testing.assert_allclose(-h[:, 2], z)
    clip = h @ proj.T
    ndc = clip[:, :3] / clip[:, 3:]
    np.testing.assert_allclose((ndc[:, 0] + 1) * 256, px[:, 0])
    np.testing.assert_allclose((1 - ndc[:, 1]) * 256, px[:, 1])
    # near and far planes map to -1 and +1
    for d, want in ((0.01, -1.0), (10.0, 1.0)):
        c = proj @ np.array([0, 0, -d, 1.0])
        assert c[2] / c[3] == pytest.approx(want)


@settings(max_examples=30, deadline=None)
@given(st.floats(-math.pi, math.pi), st.floats(-math.pi, math.pi), st.floats(-math.pi, math.pi))
def test_area_rotation_invariant(a, b, c):
    ico = make_icosphere(1)
    from scipy.spatial.transform import Rotation

    rot = Rotation.from_euler("xyz", [a, b, c]).as_matrix()
    rotated = ico.with_vertices(ico.vertices @ rot.T)
    assert rotated.face_areas.sum() == pytest.approx(ico.face_areas.sum(), rel=1e-6)


def test_save_obj_with_material(tmp_path):
    p = tmp_path / "q.obj"
    save_obj(make_quad(), p, texture_png="tex.png")
    assert "map_Kd tex.png" in (tmp_path / "q.mtl").read_text()
    assert p.read_text().startswith("mtllib q.mtl")
