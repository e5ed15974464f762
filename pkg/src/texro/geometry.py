"""Triangle meshes with per-corner UVs, OBJ I/O, and spherical cameras."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateBounds,
    DegenerateFaceWarning,
    GeometryError,
    MissingUVs,
    NonManifoldWarning,
    ParseError,
)

logger = logging.getLogger(__name__)

NEAR = 0.01
FAR = 10.0
DEFAULT_FOV_Y = 50.0
DEFAULT_IMAGE_SIZE = 512

_AREA_EPS = 1e-14


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Indexed triangle mesh with one UV pair per triangle corner.

    Attributes:
        vertices: (V, 3) float64 positions.
        triangles: (F, 3) int64 vertex indices, counter-clockwise front faces.
        corner_uvs: (F, 3, 2) float64 UVs in [0, 1].
    """

    vertices: np.ndarray
    triangles: np.ndarray
    corner_uvs: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        uv = np.asarray(self.corner_uvs, dtype=np.float64).reshape(-1, 3, 2)
        if len(uv) != len(t):
            raise GeometryError(f"{len(t)} triangles but {len(uv)} corner-UV triples")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise GeometryError("triangle index out of range")
        if uv.size and (uv.min() < -1e-9 or uv.max() > 1 + 1e-9):
            raise GeometryError("corner UVs must lie in [0, 1]")
        if not np.isfinite(v).all():
            raise GeometryError("non-finite vertex coordinates")
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "triangles", _frozen(t))
        object.__setattr__(self, "corner_uvs", _frozen(np.clip(uv, 0.0, 1.0)))

    @property
    def n_faces(self) -> int:
        return len(self.triangles)

    @cached_property
    def corners(self) -> np.ndarray:
        """(F, 3, 3) corner positions."""
        return _frozen(self.vertices[self.triangles])

    @cached_property
    def _cross(self) -> np.ndarray:
        c = self.corners
        return np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])

    @cached_property
    def face_areas(self) -> np.ndarray:
        return _frozen(0.5 * np.linalg.norm(self._cross, axis=1))

    @cached_property
    def degenerate(self) -> np.ndarray:
        return _frozen(self.face_areas <= _AREA_EPS)

    @cached_property
    def face_normals(self) -> np.ndarray:
        """Unit normals; zero vectors for degenerate faces."""
        cr = self._cross
        norm = np.linalg.norm(cr, axis=1, keepdims=True)
        n = np.divide(cr, norm, out=np.zeros_like(cr), where=norm > 2 * _AREA_EPS)
        n[self.degenerate] = 0.0
        return _frozen(n)

    @cached_property
    def centroids(self) -> np.ndarray:
        return _frozen(self.corners.mean(axis=1))

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @property
    def bounding_radius(self) -> float:
        return float(np.linalg.norm(self.vertices, axis=1).max())

    def with_vertices(self, vertices: np.ndarray) -> TriangleMesh:
        return TriangleMesh(vertices, self.triangles, self.corner_uvs)


def face_basis(mesh: TriangleMesh, face_index: int) -> tuple[np.ndarray, np.ndarray, float, bool]:
    """Centroid, unit normal, area and degenerate flag of one face.

    The normal follows counter-clockwise winding. Degenerate faces get a
    zero normal and ``degenerate=True``.
    """
    p = mesh.vertices[mesh.triangles[face_index]]
    centroid = p.mean(axis=0)
    cr = np.cross(p[1] - p[0], p[2] - p[0])
    length = float(np.linalg.norm(cr))
    area = 0.5 * length
    if area <= _AREA_EPS:
        return centroid, np.zeros(3), 0.0, True
    return centroid, cr / length, area, False


def boundary_edge_count(mesh: TriangleMesh) -> int:
    """Number of edges not shared by exactly two faces (0 for watertight meshes)."""
    t = mesh.triangles
    edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    edges.sort(axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return int((counts != 2).sum())


def normalize_mesh(mesh: TriangleMesh) -> TriangleMesh:
    """Center the bounding box at the origin and scale its longest side to [-1, 1]."""
    lo, hi = mesh.bounds
    extent = float((hi - lo).max())
    if not extent > 0.0:
        raise DegenerateBounds("all vertices coincide; cannot normalize")
    center = 0.5 * (lo + hi)
    v = (mesh.vertices - center) * (2.0 / extent)
    return mesh.with_vertices(np.clip(v, -1.0, 1.0))


# --------------------------------------------------------------------------- OBJ


def _resolve(idx: int, count: int, lineno: int) -> int:
    if idx > 0:
        i = idx - 1
    elif idx < 0:
        i = count + idx
    else:
        raise ParseError(f"line {lineno}: OBJ indices are 1-based, got 0")
    if not 0 <= i < count:
        raise ParseError(f"line {lineno}: index {idx} out of range")
    return i


def load_mesh(path: str | Path) -> TriangleMesh:
    """Read a Wavefront OBJ with ``v``, ``vt`` and ``f v/vt`` records.

    Polygons are fan-triangulated. Zero-area faces are kept and reported
    through a :class:`DegenerateFaceWarning`.

    Raises:
        FileNotFoundError: ``path`` does not exist.
        MissingUVs: a face corner has no ``vt`` index.
        ParseError: malformed records or out-of-range indices.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"mesh file not found: {path}")
    verts: list[list[float]] = []
    uvs: list[list[float]] = []
    tris: list[tuple[int, int, int]] = []
    tri_uv: list[tuple[int, int, int]] = []
    with path.open("r", encoding="utf-8", errors="replace") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            try:
                if tok[0] == "v":
                    verts.append([float(x) for x in tok[1:4]])
                    if len(verts[-1]) != 3:
                        raise ValueError
                elif tok[0] == "vt":
                    uv = [float(x) for x in tok[1:3]]
                    if len(uv) == 1:
                        uv.append(0.0)
                    uvs.append(uv)
                elif tok[0] == "f":
                    corners = tok[1:]
                    if len(corners) < 3:
                        raise ParseError(f"line {lineno}: face with fewer than 3 corners")
                    vi, ti = [], []
                    for c in corners:
                        parts = c.split("/")
                        if len(parts) < 2 or parts[1] == "":
                            raise MissingUVs(f"line {lineno}: face corner {c!r} has no vt index")
                        vi.append(_resolve(int(parts[0]), len(verts), lineno))
                        ti.append(_resolve(int(parts[1]), len(uvs), lineno))
                    for k in range(1, len(vi) - 1):
                        tris.append((vi[0], vi[k], vi[k + 1]))
                        tri_uv.append((ti[0], ti[k], ti[k + 1]))
            except (ValueError, IndexError) as exc:
                raise ParseError(f"line {lineno}: cannot parse {line!r}") from exc
    if not tris:
        raise ParseError(f"{path}: no faces")
    uv_arr = np.asarray(uvs, dtype=np.float64)
    if uv_arr.size and (uv_arr.min() < -1e-6 or uv_arr.max() > 1 + 1e-6):
        raise ParseError(f"{path}: texture coordinates outside [0, 1] (tiling UVs unsupported)")
    mesh = TriangleMesh(
        np.asarray(verts, dtype=np.float64),
        np.asarray(tris, dtype=np.int64),
        np.clip(uv_arr, 0.0, 1.0)[np.asarray(tri_uv, dtype=np.int64)],
    )
    bad = np.flatnonzero(mesh.degenerate)
    if bad.size:
        warnings.warn(
            f"{bad.size} degenerate face(s) kept: {bad[:10].tolist()}",
            DegenerateFaceWarning,
            stacklevel=2,
        )
    open_edges = boundary_edge_count(mesh)
    if open_edges:
        warnings.warn(f"mesh is not watertight: {open_edges} non-manifold edge(s)", NonManifoldWarning, stacklevel=2)
    return mesh


def save_obj(mesh: TriangleMesh, path: str | Path, texture_png: str | None = None) -> None:
    """Write ``mesh`` as OBJ; with ``texture_png`` also write a sibling MTL."""
    path = Path(path)
    lines = []
    if texture_png is not None:
        mtl = path.with_suffix(".mtl")
        mtl.write_text(
            "newmtl texro\nKa 1 1 1\nKd 1 1 1\nKs 0 0 0\nillum 1\n" f"map_Kd {texture_png}\n",
            encoding="utf-8",
        )
        lines += [f"mtllib {mtl.name}", "usemtl texro"]
    lines += [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"vt {u:.9g} {v:.9g}" for u, v in mesh.corner_uvs.reshape(-1, 2)]
    for f, (a, b, c) in enumerate(mesh.triangles + 1):
        k = 3 * f + 1
        lines.append(f"f {a}/{k} {b}/{k + 1} {c}/{k + 2}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# ------------------------------------------------------------------------ Camera


@dataclass(frozen=True)
class Camera:
    """Camera on a sphere around the origin, looking at the origin.

    ``elevation`` is the polar angle from +Z in degrees, so 90 is the
    equator. ``azimuth`` is measured from +X toward +Y.
    """

    azimuth: float
    elevation: float
    radius: float
    fov_y: float = DEFAULT_FOV_Y
    image_size: int = DEFAULT_IMAGE_SIZE

    def __post_init__(self):
        if not 0.0 <= self.azimuth < 360.0:
            raise ValueError(f"azimuth must be in [0, 360), got {self.azimuth}")
        if not 0.0 < self.elevation < 180.0:
            raise ValueError(f"elevation (polar angle) must be in (0, 180), got {self.elevation}")
        if not self.radius > 0.0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if not 0.0 < self.fov_y < 180.0:
            raise ValueError(f"fov_y must be in (0, 180), got {self.fov_y}")
        if int(self.image_size) < 1:
            raise ValueError("image_size must be >= 1")

    @classmethod
    def from_position(cls, position, fov_y: float = DEFAULT_FOV_Y, image_size: int = DEFAULT_IMAGE_SIZE) -> Camera:
        x, y, z = (float(c) for c in position)
        r = math.sqrt(x * x + y * y + z * z)
        el = math.degrees(math.acos(max(-1.0, min(1.0, z / r))))
        el = min(max(el, 1e-9), 180.0 - 1e-9)
        az = math.degrees(math.atan2(y, x)) % 360.0
        if az >= 360.0:
            az = 0.0
        return cls(az, el, r, fov_y, image_size)

    @property
    def position(self) -> np.ndarray:
        az, el = math.radians(self.azimuth), math.radians(self.elevation)
        return self.radius * np.array(
            [math.sin(el) * math.cos(az), math.sin(el) * math.sin(az), math.cos(el)]
        )

    @property
    def direction(self) -> np.ndarray:
        """Unit vector from the origin toward the camera."""
        return self.position / self.radius

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Right, up and forward unit vectors in world space."""
        forward = -self.direction
        world_up = np.array([0.0, 0.0, 1.0])
        right = np.cross(forward, world_up)
        if np.linalg.norm(right) < 1e-9:
            right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
        right /= np.linalg.norm(right)
        up = np.cross(right, forward)
        return right, up, forward

    @property
    def focal(self) -> float:
        """Focal length in pixels."""
        return 0.5 * self.image_size / math.tan(math.radians(self.fov_y) / 2.0)

    def pack(self) -> np.ndarray:
        """Flat float64 parameter vector consumed by the compiled kernels.

        Layout: position(3), right(3), up(3), forward(3), focal, size.
        """
        r, u, f = self.basis()
        return np.concatenate([self.position, r, u, f, [self.focal, float(self.image_size)]])

    def to_dict(self) -> dict:
        return {
            "azimuth": self.azimuth,
            "elevation": self.elevation,
            "radius": self.radius,
            "fov_y": self.fov_y,
            "image_size": self.image_size,
        }


def camera_matrices(camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Right-handed look-at view matrix and OpenGL-style perspective matrix.

    The camera looks down -Z in view space; near 0.01, far 10.
    """
    right, up, forward = camera.basis()
    eye = camera.position
    view = np.eye(4)
    view[0, :3], view[1, :3], view[2, :3] = right, up, -forward
    view[:3, 3] = -view[:3, :3] @ eye
    f = 1.0 / math.tan(math.radians(camera.fov_y) / 2.0)
    proj = np.zeros((4, 4))
    proj[0, 0] = f  # square images
    proj[1, 1] = f
    proj[2, 2] = (FAR + NEAR) / (NEAR - FAR)
    proj[2, 3] = 2.0 * FAR * NEAR / (NEAR - FAR)
    proj[3, 2] = -1.0
    return view, proj


def project_points(camera: Camera, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pixel coordinates (x right, y down; pixel centers at +0.5) and view depth.

    Depth is the distance along the viewing axis; points behind the
    camera get a non-positive depth.
    """
    right, up, forward = camera.basis()
    d = np.asarray(points, dtype=np.float64) - camera.position
    zc = d @ forward
    with np.errstate(divide="ignore", invalid="ignore"):
        x = camera.image_size / 2.0 + camera.focal * (d @ right) / zc
        y = camera.image_size / 2.0 - camera.focal * (d @ up) / zc
    return np.stack([x, y], axis=-1), zc
