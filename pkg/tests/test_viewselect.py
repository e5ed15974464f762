from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from texro.bvh import build_bvh, count_crossings
from texro.errors import CameraInsideMeshWarning, TooLarge
from texro.fixtures import make_icosphere, make_quad, parallel_quads
from texro.geometry import TriangleMesh
from texro.viewselect import (
    VisibilityMatrix,
    compute_visibility,
    exact_cover_bruteforce,
    greedy_cover,
    sample_candidates,
)


def _ray_hit(o, d, tri):
    """Textbook Moller-Trumbore distance, or inf (test oracle)."""
    e1, e2 = tri[1] - tri[0], tri[2] - tri[0]
    p = np.cross(d, e2)
    det = e1 @ p
    if abs(det) < 1e-14:
        return math.inf
    s = o - tri[0]
    u = (s @ p) / det
    q = np.cross(s, e1)
    v = (d @ q) / det
    if u < 0 or v < 0 or u + v > 1:
        return math.inf
    t = (e2 @ q) / det
    return t if t > 0 else math.inf


def _brute_visibility(mesh, cams, max_angle=45.0):
    corners = mesh.corners
    cos_max = math.cos(math.radians(max_angle))
    bits = np.zeros((mesh.n_faces, len(cams)), bool)
    for c, cam in enumerate(cams):
        for f in range(mesh.n_faces):
            to = cam - mesh.centroids[f]
            dist = np.linalg.norm(to)
            if mesh.face_normals[f] @ to / dist <= cos_max:
                continue
            d = -to / dist
            hits = [_ray_hit(cam, d, corners[g]) for g in range(mesh.n_faces)]
            bits[f, c] = min(hits) >= hits[f] - 1e-6
    return bits


def test_single_candidate():
    cs = sample_candidates(1, 1.0, 1.4, 0)
    assert len(cs) == 1
    assert 1.0 <= np.linalg.norm(cs.positions[0]) <= 1.4


def test_candidates_deterministic():
    a = sample_candidates(8192, seed=0)
    b = sample_candidates(8192, seed=0)
    np.testing.assert_array_equal(a.positions, b.positions)
    r = np.linalg.norm(a.positions, axis=1)
    assert r.min() >= 1.0 and r.max() <= 1.4
    assert not np.array_equal(a.positions, sample_candidates(8192, seed=1).positions)


def test_candidate_spacing():
    K = 8192
    d = sample_candidates(K).positions
    d = d / np.linalg.norm(d, axis=1, keepdims=True)
    dist, _ = cKDTree(d).query(d, k=2)
    nn = 2 * np.arcsin(dist[:, 1] / 2)
    expected = math.sqrt(4 * math.pi / K)
    assert nn.min() >= expected / 2 and nn.max() <= expected * 2


def test_candidate_validation():
    with pytest.raises(ValueError):
        sample_candidates(0)
    with pytest.raises(ValueError):
        sample_candidates(4, 1.5, 1.0)


def _triangle():
    v = np.array([[-0.5, -0.5, 0], [0.5, -0.5, 0], [0, 0.5, 0]], float)
    return TriangleMesh(v, np.array([[0, 1, 2]]), np.zeros((1, 3, 2)))


def test_head_on_and_backfacing(kernel_path):
    vis = compute_visibility(_triangle(), np.array([[0, 0, 2.0], [0, 0, -2.0]]))
    assert vis.bits[:, 0].tolist() == [True]
    assert vis.bits[:, 1].tolist() == [False]


def test_parallel_quads_match_brute_force(kernel_path):
    mesh = parallel_quads()
    cams = np.array([[0, 0, 2.0], [0.3, 0.2, 1.5], [0, 0, -2.0], [1.5, 0, 0.3], [-0.2, 0.1, 1.2]])
    vis = compute_visibility(mesh, cams)
    np.testing.assert_array_equal(vis.bits, _brute_visibility(mesh, cams))
    assert not vis.bits[2:4, 0].any() and vis.bits[0:2, 0].all()


def test_icosphere_matches_brute_force(kernel_path):
    mesh = make_icosphere(1)
    cams = sample_candidates(12, 1.2, 1.6, seed=3).positions
    np.testing.assert_array_equal(compute_visibility(mesh, cams).bits, _brute_visibility(mesh, cams))


def test_numba_numpy_visibility_identical(monkeypatch):
    mesh = make_icosphere(3)
    cams = sample_candidates(256, seed=5)
    monkeypatch.setenv("TEXRO_PURE_NUMPY", "1")
    a = compute_visibility(mesh, cams).bits
    monkeypatch.delenv("TEXRO_PURE_NUMPY")
    b = compute_visibility(mesh, cams).bits
    np.testing.assert_array_equal(a, b)


def test_camera_inside_skipped():
    mesh = make_icosphere(2)
    cams = np.array([[0, 0, 0.1], [0, 0, 2.0]])
    with pytest.warns(CameraInsideMeshWarning):
        vis = compute_visibility(mesh, cams)
    assert vis.skipped == (0,)
    assert len(vis.column(0)) == 0 and len(vis.column(1)) > 0


def test_crossings_parity():
    mesh = make_icosphere(2)
    bvh = build_bvh(mesh.corners)
    pts = np.array([[0, 0, 0.0], [0.2, 0.3, -0.1], [0, 0, 2.0], [1.5, 0.0, 0.0]])
    assert (count_crossings(bvh, mesh.corners, pts) % 2).tolist() == [1, 1, 0, 0]


@settings(max_examples=10, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_visibility_rotation_invariant(a, b, c):
    mesh = make_icosphere(1)
    cams = sample_candidates(24, 1.3, 1.6, seed=11).positions
    rot = Rotation.from_euler("xyz", [a, b, c]).as_matrix()
    # keep pairs away from the 45 degree boundary
    to = cams[None] - mesh.centroids[:, None]
    cosang = np.einsum("fck,fk->fc", to, mesh.face_normals) / np.linalg.norm(to, axis=2)
    guard = np.abs(np.degrees(np.arccos(np.clip(cosang, -1, 1))) - 45) > 1e-4
    base = compute_visibility(mesh, cams).bits
    rotated = compute_visibility(mesh.with_vertices(mesh.vertices @ rot.T), cams @ rot.T).bits
    np.testing.assert_array_equal(base[guard], rotated[guard])


def test_greedy_one_covers_all():
    vis = VisibilityMatrix.from_dense([[1, 0, 1], [1, 1, 0], [1, 0, 0]])
    sel = greedy_cover(vis)
    assert sel.indices == (0,)
    assert sel.coverage_area_fraction == 1.0


def test_greedy_tie_break_lowest_index(kernel_path):
    vis = VisibilityMatrix.from_dense([[0, 1, 1], [0, 1, 1]])
    assert greedy_cover(vis).indices == (1,)


def test_greedy_area_weighted():
    # candidate 1 sees more faces, candidate 0 more area
    vis = VisibilityMatrix.from_dense([[1, 0], [0, 1], [0, 1]], face_areas=[5.0, 1.0, 1.0])
    assert greedy_cover(vis).indices == (0, 1)


def test_uncoverable_reported():
    vis = VisibilityMatrix.from_dense([[1, 0], [0, 0], [0, 1]])
    sel = greedy_cover(vis)
    assert sel.uncoverable.tolist() == [1]
    assert sel.covered_faces.tolist() == [True, False, True]
    assert sel.coverage_area_fraction == pytest.approx(2 / 3)


def test_exact_identity_and_dominating():
    assert exact_cover_bruteforce(VisibilityMatrix.from_dense(np.eye(3))).indices == (0, 1, 2)
    vis = VisibilityMatrix.from_dense([[1, 1, 0, 0], [1, 0, 1, 0], [1, 0, 0, 1]])
    assert exact_cover_bruteforce(vis).indices == (0,)


def test_exact_too_large():
    with pytest.raises(TooLarge):
        exact_cover_bruteforce(VisibilityMatrix.from_dense(np.ones((2, 21))))


@pytest.mark.parametrize("seed", range(20))
def test_tetrahedron_instances(seed, kernel_path):
    g = np.random.default_rng(seed)
    bits = g.random((4, 6)) < 0.4
    vis = VisibilityMatrix.from_dense(bits)
    greedy, exact = greedy_cover(vis), exact_cover_bruteforce(vis)
    assert len(exact) <= len(greedy) <= len(exact) * math.ceil(1 + math.log(4))
    np.testing.assert_array_equal(greedy.covered_faces, exact.covered_faces)


@pytest.mark.parametrize("seed", range(20))
def test_random_8x12_exact_not_larger(seed):
    bits = np.random.default_rng(100 + seed).random((8, 12)) < 0.3
    vis = VisibilityMatrix.from_dense(bits)
    assert len(greedy_cover(vis)) >= len(exact_cover_bruteforce(vis))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 10), st.integers(1, 12))
def test_greedy_properties(seed, n_f, n_c):
    g = np.random.default_rng(seed)
    bits = g.random((n_f, n_c)) < 0.35
    areas = g.uniform(0.1, 2.0, n_f)
    vis = VisibilityMatrix.from_dense(bits, areas)
    sel = greedy_cover(vis)
    # covered faces equal the union of the chosen columns, which covers everything coverable
    union = bits[:, list(sel.indices)].any(axis=1) if sel.indices else np.zeros(n_f, bool)
    np.testing.assert_array_equal(sel.covered_faces, union)
    np.testing.assert_array_equal(union, bits.any(axis=1))
    assert all(gn > 0 for gn in sel.gains)
    # adding a column never shrinks coverage
    extra = np.c_[bits, g.random(n_f) < 0.5]
    sel2 = greedy_cover(VisibilityMatrix.from_dense(extra, areas))
    assert sel2.covered_faces.sum() >= sel.covered_faces.sum()


def test_greedy_paths_identical(monkeypatch):
    mesh = make_icosphere(3)
    vis = compute_visibility(mesh, sample_candidates(512, seed=2))
    a = greedy_cover(vis)
    monkeypatch.setenv("TEXRO_PURE_NUMPY", "1")
    b = greedy_cover(vis)
    assert a.indices == b.indices
    np.testing.assert_allclose(a.gains, b.gains)


def test_degenerate_face_never_visible():
    v = np.array([[-0.5, -0.5, 0], [0.5, -0.5, 0], [0, 0.5, 0], [1, 0, 0], [2, 0, 0]], float)
    mesh = TriangleMesh(v, np.array([[0, 1, 2], [0, 3, 4]]), np.zeros((2, 3, 2)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        vis = compute_visibility(mesh, np.array([[0, 0, 2.0]]))
    assert vis.bits[:, 0].tolist() == [True, False]


def test_quad_visibility_counts():
    vis = compute_visibility(make_quad(), sample_candidates(64, 1.5, 2.0, seed=0))
    assert vis.shape == (2, 64)
