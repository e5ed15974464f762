"""Candidate viewpoint sampling, face visibility, and greedy set cover."""

from __future__ import annotations

import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ._accel import njit, prange, use_numba
from .bvh import Bvh, _occluded, build_bvh, count_crossings, ray_triangle_numpy
from .errors import CameraInsideMeshWarning, TooLarge
from .geometry import DEFAULT_FOV_Y, DEFAULT_IMAGE_SIZE, Camera, TriangleMesh, boundary_edge_count

logger = logging.getLogger(__name__)

TIE_EPS = 1e-6
MAX_EXACT_CANDIDATES = 20


@dataclass(frozen=True)
class CandidateSet:
    positions: np.ndarray  # (K, 3)
    seed: int
    r_min: float
    r_max: float

    def __len__(self) -> int:
        return len(self.positions)

    def camera(self, index: int, fov_y: float = DEFAULT_FOV_Y, image_size: int = DEFAULT_IMAGE_SIZE) -> Camera:
        return Camera.from_position(self.positions[index], fov_y, image_size)

    @property
    def cameras(self) -> list[Camera]:
        return [self.camera(i) for i in range(len(self))]


def fibonacci_directions(K: int) -> np.ndarray:
    """K near-uniform unit vectors on the sphere (golden-angle spiral)."""
    i = np.arange(K, dtype=np.float64)
    z = 1.0 - 2.0 * (i + 0.5) / K
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = i * math.pi * (3.0 - math.sqrt(5.0))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def sample_candidates(K: int = 8192, r_min: float = 1.0, r_max: float = 1.4, seed: int = 0) -> CandidateSet:
    """Fibonacci-lattice directions with seeded uniform radii in ``[r_min, r_max]``."""
    if K < 1:
        raise ValueError(f"candidate count must be >= 1, got {K}")
    if not 0.0 < r_min <= r_max:
        raise ValueError(f"need 0 < r_min <= r_max, got {r_min}, {r_max}")
    radii = np.random.default_rng(seed).uniform(r_min, r_max, size=K)
    pos = fibonacci_directions(K) * radii[:, None]
    pos.setflags(write=False)
    return CandidateSet(pos, seed, r_min, r_max)


@dataclass(frozen=True)
class VisibilityMatrix:
    """Sparse faces x candidates coverage relation.

    ``matrix`` is CSC so each column lists the faces one candidate sees.
    """

    matrix: sp.csc_matrix
    face_areas: np.ndarray
    skipped: tuple[int, ...] = ()

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def bits(self) -> np.ndarray:
        return self.matrix.toarray().astype(bool)

    @property
    def coverable(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel() > 0

    def column(self, c: int) -> np.ndarray:
        m = self.matrix
        return m.indices[m.indptr[c]:m.indptr[c + 1]]

    @classmethod
    def from_dense(cls, bits, face_areas=None) -> VisibilityMatrix:
        bits = np.asarray(bits, dtype=bool)
        areas = np.ones(bits.shape[0]) if face_areas is None else np.asarray(face_areas, dtype=np.float64)
        m = sp.csc_matrix(bits, dtype=bool)
        m.sort_indices()
        return cls(m, areas)


# ------------------------------------------------------------------- visibility


@njit(parallel=True)
def _visibility_kernel(bmin, bmax, left, right, start, count, order, corners,
                       cx, cy, cz, nx, ny, nz, ok_face, cams, cos_max, tie_eps):
    n_f = cx.shape[0]
    n_c = cams.shape[0]
    c2 = cos_max * cos_max
    # pass 1: branch-free angle test, sizes the per-candidate buffers
    cand_count = np.zeros(n_c, np.int64)
    for c in prange(n_c):
        px, py, pz = cams[c, 0], cams[c, 1], cams[c, 2]
        k = 0
        for f in range(n_f):
            tx = px - cx[f]
            ty = py - cy[f]
            tz = pz - cz[f]
            dot = nx[f] * tx + ny[f] * ty + nz[f] * tz
            k += (dot > 0.0) & (dot * dot > c2 * (tx * tx + ty * ty + tz * tz)) & ok_face[f]
        cand_count[c] = k
    offs = np.zeros(n_c + 1, np.int64)
    for c in range(n_c):
        offs[c + 1] = offs[c] + cand_count[c]
    buf = np.empty(offs[n_c] + 1, np.int64)
    vis_count = np.zeros(n_c, np.int64)
    depth = 2 * left.shape[0] + 2
    # pass 2: gather angle-passing faces, then keep the unoccluded ones in place
    for c in prange(n_c):
        stack = np.empty(depth, np.int64)
        o = cams[c].copy()
        d = np.empty(3)
        inv = np.empty(3)
        base = offs[c]
        px, py, pz = o[0], o[1], o[2]
        k = 0
        for f in range(n_f):
            tx = px - cx[f]
            ty = py - cy[f]
            tz = pz - cz[f]
            dot = nx[f] * tx + ny[f] * ty + nz[f] * tz
            buf[base + k] = f
            k += (dot > 0.0) & (dot * dot > c2 * (tx * tx + ty * ty + tz * tz)) & ok_face[f]
        kept = 0
        for j in range(k):
            f = buf[base + j]
            # d spans camera -> centroid, so the target face sits at t = 1
            d[0] = cx[f] - px
            d[1] = cy[f] - py
            d[2] = cz[f] - pz
            if not _occluded(bmin, bmax, left, right, start, count, order, corners, o, d, 1.0 - tie_eps, f, stack, inv):
                buf[base + kept] = f
                kept += 1
        vis_count[c] = kept
    indptr = np.zeros(n_c + 1, np.int64)
    for c in range(n_c):
        indptr[c + 1] = indptr[c] + vis_count[c]
    indices = np.empty(indptr[n_c], np.int64)
    for c in prange(n_c):
        for j in range(vis_count[c]):
            indices[indptr[c] + j] = buf[offs[c] + j]
    return indptr, indices


def _visibility_numpy(corners, centroids, normals, ok_face, cams, cos_max, tie_eps, chunk=2_000_000):
    n_f = len(centroids)
    cols = []
    for c in range(len(cams)):
        to = cams[c] - centroids
        dot = (normals * to).sum(axis=1)
        passing = np.flatnonzero((dot > 0) & (dot * dot > cos_max**2 * (to * to).sum(axis=1)) & ok_face)
        keep = []
        step = max(1, chunk // max(n_f, 1))
        for s in range(0, len(passing), step):
            fs = passing[s:s + step]
            dirs = centroids[fs] - cams[c]
            t = ray_triangle_numpy(np.broadcast_to(cams[c], dirs.shape).copy(), dirs, corners)
            t[np.arange(len(fs)), fs] = np.inf
            blocked = ((t > 0) & (t < 1.0 - tie_eps)).any(axis=1)
            keep.append(fs[~blocked])
        cols.append(np.concatenate(keep) if keep else np.empty(0, np.int64))
    indptr = np.zeros(len(cams) + 1, np.int64)
    indptr[1:] = np.cumsum([len(x) for x in cols])
    indices = np.concatenate(cols) if cols else np.empty(0, np.int64)
    return indptr, indices.astype(np.int64)


def cameras_inside(mesh: TriangleMesh, positions: np.ndarray, bvh: Bvh | None = None) -> np.ndarray:
    """Parity test: True where a position lies inside the closed surface.

    Open meshes have no inside, so every position is reported outside.
    """
    if boundary_edge_count(mesh):
        return np.zeros(len(positions), bool)
    bvh = bvh or build_bvh(mesh.corners)
    return count_crossings(bvh, mesh.corners, positions) % 2 == 1


def compute_visibility(
    mesh: TriangleMesh,
    candidates: CandidateSet | np.ndarray,
    max_angle_deg: float = 45.0,
    bvh: Bvh | None = None,
) -> VisibilityMatrix:
    """Face/candidate visibility from one centroid ray per pair.

    A pair is visible when the angle between the face normal and the
    centroid-to-camera direction is below ``max_angle_deg`` and no other
    triangle is hit before the face along the camera-to-centroid ray.
    Degenerate faces are never visible. Candidates inside the surface
    are skipped with a :class:`CameraInsideMeshWarning`.
    """
    cams = np.ascontiguousarray(getattr(candidates, "positions", candidates), dtype=np.float64)
    bvh = bvh or build_bvh(mesh.corners)
    corners = np.ascontiguousarray(mesh.corners)
    inside = cameras_inside(mesh, cams, bvh)
    skipped = tuple(int(i) for i in np.flatnonzero(inside))
    if skipped:
        warnings.warn(f"{len(skipped)} candidate(s) inside the mesh skipped", CameraInsideMeshWarning, stacklevel=2)
    ok = ~mesh.degenerate
    cos_max = math.cos(math.radians(max_angle_deg))
    if use_numba():
        soa = [np.ascontiguousarray(a[:, k]) for a in (mesh.centroids, mesh.face_normals) for k in range(3)]
        indptr, indices = _visibility_kernel(bvh.bbox_min, bvh.bbox_max, bvh.left, bvh.right, bvh.start,
                                             bvh.count, bvh.order, corners, *soa, ok, cams, cos_max, TIE_EPS)
    else:
        indptr, indices = _visibility_numpy(corners, mesh.centroids, mesh.face_normals, ok, cams, cos_max, TIE_EPS)
    if skipped:
        keep = np.ones(len(indices), bool)
        for c in skipped:
            keep[indptr[c]:indptr[c + 1]] = False
        lengths = np.diff(indptr)
        lengths[list(skipped)] = 0
        indices = indices[keep]
        indptr = np.concatenate([[0], np.cumsum(lengths)])
    m = sp.csc_matrix((np.ones(len(indices), bool), indices, indptr), shape=(mesh.n_faces, len(cams)))
    m.sort_indices()
    return VisibilityMatrix(m, np.asarray(mesh.face_areas), skipped)


# -------------------------------------------------------------------- set cover


@dataclass(frozen=True)
class SelectedViews:
    indices: tuple[int, ...]
    covered_faces: np.ndarray
    coverage_area_fraction: float
    gains: tuple[float, ...] = ()
    new_face_counts: tuple[int, ...] = ()
    uncoverable: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))

    def __len__(self) -> int:
        return len(self.indices)


@njit
def _heap_less(ga, ia, gb, ib):
    # max-gain first, lower index wins ties
    return ga > gb or (ga == gb and ia < ib)


@njit
def _sift_down(hg, hi, n, pos):
    while True:
        l = 2 * pos + 1
        best = pos
        if l < n and _heap_less(hg[l], hi[l], hg[best], hi[best]):
            best = l
        if l + 1 < n and _heap_less(hg[l + 1], hi[l + 1], hg[best], hi[best]):
            best = l + 1
        if best == pos:
            return
        hg[pos], hg[best] = hg[best], hg[pos]
        hi[pos], hi[best] = hi[best], hi[pos]
        pos = best


@njit
def _gain(indptr, indices, areas, covered, c):
    g = 0.0
    for j in range(indptr[c], indptr[c + 1]):
        f = indices[j]
        if not covered[f]:
            g += areas[f]
    return g


@njit
def _greedy_kernel(indptr, indices, areas, n_faces):
    """Lazy greedy; identical picks to the eager scan because gains only shrink."""
    n_c = indptr.shape[0] - 1
    covered = np.zeros(n_faces, np.bool_)
    hg = np.empty(n_c)
    hi = np.empty(n_c, np.int64)
    for c in range(n_c):
        hg[c] = _gain(indptr, indices, areas, covered, c)
        hi[c] = c
    n = n_c
    for pos in range(n // 2 - 1, -1, -1):
        _sift_down(hg, hi, n, pos)
    picks = np.empty(n_c, np.int64)
    pick_gain = np.empty(n_c)
    n_picks = 0
    while n > 0:
        c = hi[0]
        g = _gain(indptr, indices, areas, covered, c)
        if g != hg[0]:
            hg[0] = g
            _sift_down(hg, hi, n, 0)
            continue
        if g <= 0.0:
            break
        picks[n_picks] = c
        pick_gain[n_picks] = g
        n_picks += 1
        for j in range(indptr[c], indptr[c + 1]):
            covered[indices[j]] = True
        hg[0] = hg[n - 1]
        hi[0] = hi[n - 1]
        n -= 1
        _sift_down(hg, hi, n, 0)
    return picks[:n_picks], pick_gain[:n_picks]


def _greedy_numpy(m: sp.csc_matrix, areas: np.ndarray):
    n_f, n_c = m.shape
    covered = np.zeros(n_f, bool)
    mt = m.T.tocsr().astype(np.float64)
    picks, gains = [], []
    while True:
        g = mt @ np.where(covered, 0.0, areas)
        best = int(np.argmax(g))  # argmax returns the lowest index among ties
        if not g[best] > 0.0:
            break
        picks.append(best)
        gains.append(float(g[best]))
        covered[m.indices[m.indptr[best]:m.indptr[best + 1]]] = True
    return np.array(picks, np.int64), np.array(gains)


def greedy_cover(vis: VisibilityMatrix) -> SelectedViews:
    """Repeatedly pick the candidate adding the most uncovered face area.

    Ties go to the lowest candidate index. Stops once every coverable
    face is covered; faces no candidate sees are reported in
    ``uncoverable``.
    """
    m = vis.matrix
    n_f, n_c = m.shape
    if n_f == 0 or n_c == 0:
        raise ValueError("visibility matrix is empty")
    areas = np.ascontiguousarray(vis.face_areas, dtype=np.float64)
    if use_numba():
        picks, gains = _greedy_kernel(m.indptr.astype(np.int64), m.indices.astype(np.int64), areas, n_f)
    else:
        picks, gains = _greedy_numpy(m, areas)
    return _summarize(vis, [int(p) for p in picks], [float(g) for g in gains])


def _summarize(vis: VisibilityMatrix, picks: list[int], gains: list[float] | None = None) -> SelectedViews:
    n_f = vis.shape[0]
    covered = np.zeros(n_f, bool)
    new_counts = []
    for c in picks:
        col = vis.column(c)
        new_counts.append(int((~covered[col]).sum()))
        covered[col] = True
    total = float(vis.face_areas.sum())
    frac = float(vis.face_areas[covered].sum() / total) if total > 0 else 0.0
    uncoverable = np.flatnonzero(~vis.coverable & (vis.face_areas > 0))
    if gains is None:
        gains = []
        seen = np.zeros(n_f, bool)
        for c in picks:
            col = vis.column(c)
            gains.append(float(vis.face_areas[col[~seen[col]]].sum()))
            seen[col] = True
    return SelectedViews(tuple(picks), covered, frac, tuple(gains), tuple(new_counts), uncoverable)


def exact_cover_bruteforce(vis: VisibilityMatrix) -> SelectedViews:
    """Minimum-cardinality cover by subset enumeration (at most 20 candidates).

    Among minimum covers the one with the largest covered area wins, then
    the lexicographically smallest index tuple.
    """
    n_f, n_c = vis.shape
    if n_c > MAX_EXACT_CANDIDATES:
        raise TooLarge(f"{n_c} candidates exceed the brute-force limit of {MAX_EXACT_CANDIDATES}")
    masks = []
    for c in range(n_c):
        bits = 0
        for f in vis.column(c):
            bits |= 1 << int(f)
        masks.append(bits)
    target = 0
    for b in masks:
        target |= b
    if target == 0:
        return _summarize(vis, [])
    areas = vis.face_areas
    for k in range(1, n_c + 1):
        best, best_area = None, -1.0
        for combo in itertools.combinations(range(n_c), k):
            u = 0
            for c in combo:
                u |= masks[c]
            if u == target:
                area = float(sum(areas[f] for f in range(n_f) if u >> f & 1))
                if area > best_area:
                    best, best_area = combo, area
        if best is not None:
            return _summarize(vis, list(best))
    raise AssertionError("unreachable: the union of all candidates covers the target")
