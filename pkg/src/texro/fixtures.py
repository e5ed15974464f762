"""Procedural meshes and textures for tests, benchmarks and demos."""

from __future__ import annotations

import math

import numpy as np

from .geometry import TriangleMesh


def make_quad(size: float = 1.0, z: float = 0.0) -> TriangleMesh:
    """Square in the plane ``z`` facing +Z, UV-mapped onto the full unit square."""
    s = size
    v = np.array([[-s, -s, z], [s, -s, z], [s, s, z], [-s, s, z]], dtype=float)
    t = np.array([[0, 1, 2], [0, 2, 3]])
    uv = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    return TriangleMesh(v, t, uv[t])


def make_cube(lo: float = -1.0, hi: float = 1.0) -> TriangleMesh:
    """Axis-aligned cube, 12 outward-facing triangles, 3x2 box UV layout."""
    c = np.array(
        [[lo, lo, lo], [hi, lo, lo], [hi, hi, lo], [lo, hi, lo],
         [lo, lo, hi], [hi, lo, hi], [hi, hi, hi], [lo, hi, hi]],
        dtype=float,
    )
    # each side as a CCW quad seen from outside
    quads = [
        (0, 3, 2, 1),  # -z
        (4, 5, 6, 7),  # +z
        (0, 1, 5, 4),  # -y
        (2, 3, 7, 6),  # +y
        (1, 2, 6, 5),  # +x
        (0, 4, 7, 3),  # -x
    ]
    tris, uvs = [], []
    for k, (a, b, cc, d) in enumerate(quads):
        col, row = k % 3, k // 3
        u0, u1 = col / 3 + 0.01, (col + 1) / 3 - 0.01
        v0, v1 = row / 2 + 0.01, (row + 1) / 2 - 0.01
        qa, qb, qc, qd = (u0, v0), (u1, v0), (u1, v1), (u0, v1)
        tris += [(a, b, cc), (a, cc, d)]
        uvs += [(qa, qb, qc), (qa, qc, qd)]
    return TriangleMesh(c, np.array(tris), np.array(uvs))


def make_uv_sphere(stacks: int = 21, slices: int = 24, radius: float = 1.0) -> TriangleMesh:
    """Latitude/longitude sphere with equirectangular UVs.

    Produces ``2 * slices * (stacks - 1)`` triangles (960 with the defaults).
    Positions are shared across the UV seam so the surface is watertight.
    """
    if stacks < 2 or slices < 3:
        raise ValueError("need stacks >= 2 and slices >= 3")
    verts = [[0.0, 0.0, radius]]
    for i in range(1, stacks):
        th = math.pi * i / stacks
        for j in range(slices):
            ph = 2 * math.pi * j / slices
            verts.append([radius * math.sin(th) * math.cos(ph), radius * math.sin(th) * math.sin(ph), radius * math.cos(th)])
    verts.append([0.0, 0.0, -radius])
    south = len(verts) - 1

    def vid(i, j):
        return 1 + (i - 1) * slices + (j % slices)

    tris, uvs = [], []
    for j in range(slices):
        u0, u1, um = j / slices, (j + 1) / slices, (j + 0.5) / slices
        v1 = 1 - 1 / stacks
        tris.append((0, vid(1, j), vid(1, j + 1)))
        uvs.append(((um, 1.0), (u0, v1), (u1, v1)))
        for i in range(1, stacks - 1):
            vt, vb = 1 - i / stacks, 1 - (i + 1) / stacks
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            tris += [(a, b, c), (a, c, d)]
            uvs += [((u0, vt), (u0, vb), (u1, vb)), ((u0, vt), (u1, vb), (u1, vt))]
        vb = 1 / stacks
        tris.append((vid(stacks - 1, j), south, vid(stacks - 1, j + 1)))
        uvs.append(((u0, vb), (um, 0.0), (u1, vb)))
    return TriangleMesh(np.array(verts), np.array(tris), np.array(uvs))


def face_atlas_uvs(n_faces: int, margin: float = 0.1) -> np.ndarray:
    """Pack each face into its own half of a grid cell; returns (F, 3, 2) UVs."""
    cells = math.ceil(math.sqrt(math.ceil(n_faces / 2)))
    out = np.empty((n_faces, 3, 2))
    m = margin
    lower = np.array([[m, m], [1 - 2 * m, m], [m, 1 - 2 * m]])
    upper = np.array([[1 - m, 1 - m], [2 * m, 1 - m], [1 - m, 2 * m]])
    for f in range(n_faces):
        cell, half = divmod(f, 2)
        cy, cx = divmod(cell, cells)
        local = upper if half else lower
        out[f] = (np.array([cx, cy]) + local) / cells
    return out


def make_icosphere(subdivisions: int = 5, radius: float = 1.0) -> TriangleMesh:
    """Subdivided icosahedron (``20 * 4**subdivisions`` faces) with a per-face UV atlas."""
    p = (1 + math.sqrt(5)) / 2
    v = [[-1, p, 0], [1, p, 0], [-1, -p, 0], [1, -p, 0], [0, -1, p], [0, 1, p],
         [0, -1, -p], [0, 1, -p], [p, 0, -1], [p, 0, 1], [-p, 0, -1], [-p, 0, 1]]
    f = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
         [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
         [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    verts = [np.array(x, float) / np.linalg.norm(x) for x in v]
    faces = f
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def mid(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        nf = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nf += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = nf
    tris = np.array(faces, dtype=np.int64)
    return TriangleMesh(radius * np.array(verts), tris, face_atlas_uvs(len(tris)))


def flip_winding(mesh: TriangleMesh) -> TriangleMesh:
    """Same surface with every face turned inside out."""
    return TriangleMesh(mesh.vertices, mesh.triangles[:, ::-1], mesh.corner_uvs[:, ::-1])


def parallel_quads(gap: float = 0.5, size: float = 0.5) -> TriangleMesh:
    """Two stacked +Z-facing quads; the upper one at ``z=gap/2`` hides the lower."""
    a, b = make_quad(size, gap / 2), make_quad(size, -gap / 2)
    v = np.concatenate([a.vertices, b.vertices])
    t = np.concatenate([a.triangles, b.triangles + 4])
    uv = np.concatenate([a.corner_uvs * [0.5, 1.0], b.corner_uvs * [0.5, 1.0] + [0.5, 0.0]])
    return TriangleMesh(v, t, uv)


def texel_centers(resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """U and V of texel centers; row 0 is the top of the image (v near 1)."""
    c = (np.arange(resolution) + 0.5) / resolution
    u, v = np.meshgrid(c, 1.0 - c)
    return u, v


def checker_gradient(resolution: int, squares: int = 8) -> np.ndarray:
    """Ground-truth RGB pattern: smooth UV gradient blended with a checkerboard."""
    u, v = texel_centers(resolution)
    check = ((np.floor(u * squares) + np.floor(v * squares)) % 2).astype(np.float64)
    rgb = np.stack([0.1 + 0.5 * u, 0.1 + 0.5 * v, 0.35 + 0.3 * (1 - u)], axis=-1)
    rgb = rgb + 0.3 * check[..., None]
    return np.clip(rgb, 0.0, 1.0).astype(np.float32)


def seeded_pattern(resolution: int, seed: int, squares: int = 8) -> np.ndarray:
    """Checkerboard with seeded per-cell colors over a UV gradient."""
    rng = np.random.default_rng(seed)
    palette = rng.uniform(0.15, 0.85, size=(squares, squares, 3))
    u, v = texel_centers(resolution)
    iu = np.minimum((u * squares).astype(int), squares - 1)
    iv = np.minimum((v * squares).astype(int), squares - 1)
    rgb = 0.8 * palette[iv, iu] + 0.1 * np.stack([u, v, 1 - u], axis=-1)
    return np.clip(rgb, 0.0, 1.0).astype(np.float32)
