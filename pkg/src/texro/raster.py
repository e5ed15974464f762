"""Software rasterization, UV-space baking and view-to-texture projection.

Conventions: images are ``(H, W, ...)`` arrays with row 0 at the top and
pixel centers at half-integer coordinates. Textures are ``(R, R, 3)``
with row 0 at ``v = 1``; the texel at ``(row, col)`` has its center at
``u = (col + 0.5) / R``, ``v = 1 - (row + 0.5) / R``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ._accel import njit, use_numba
from .errors import ResolutionMismatch, ShapeMismatch, UVOverlapWarning
from .geometry import FAR, NEAR, Camera, TriangleMesh

logger = logging.getLogger(__name__)

DEPTH_EPS = 1e-3
MAX_ANGLE_DEG = 45.0


@dataclass
class FrameBuffer:
    color: np.ndarray  # (H, W, 3) float32
    depth: np.ndarray  # (H, W) float64, inf on background
    face_id: np.ndarray  # (H, W) int64, -1 on background
    uv: np.ndarray  # (H, W, 2) float64, nan on background
    texture_resolution: int | None = None

    @property
    def coverage(self) -> np.ndarray:
        return self.face_id >= 0

    @property
    def size(self) -> int:
        return self.face_id.shape[0]


@dataclass
class UvTexture:
    rgb: np.ndarray  # (R, R, 3) float32 in [0, 1]
    fresh: np.ndarray  # (R, R) bool
    written: np.ndarray  # (R, R) bool

    @property
    def resolution(self) -> int:
        return self.rgb.shape[0]

    @classmethod
    def blank(cls, resolution: int) -> UvTexture:
        if resolution < 1:
            raise ValueError("texture resolution must be >= 1")
        r = int(resolution)
        return cls(np.zeros((r, r, 3), np.float32), np.zeros((r, r), bool), np.zeros((r, r), bool))

    @classmethod
    def from_rgb(cls, rgb: np.ndarray, written: bool = True) -> UvTexture:
        rgb = np.clip(np.asarray(rgb, dtype=np.float32), 0.0, 1.0)
        if rgb.ndim != 3 or rgb.shape[0] != rgb.shape[1] or rgb.shape[2] != 3:
            raise ShapeMismatch(f"texture must be (R, R, 3), got {rgb.shape}")
        r = rgb.shape[0]
        return cls(rgb.copy(), np.zeros((r, r), bool), np.full((r, r), written))

    def copy(self) -> UvTexture:
        return UvTexture(self.rgb.copy(), self.fresh.copy(), self.written.copy())

    def clear_fresh(self) -> None:
        self.fresh[:] = False

    def check(self) -> None:
        if (self.fresh & ~self.written).any():
            raise AssertionError("fresh texel that was never written")


@dataclass
class TexelSurfaceTable:
    """Surface point of each texel.

    ``face_id`` is -1 for texels whose center lies outside every UV
    triangle; owned texels store the surface point under their center.
    """

    face_id: np.ndarray  # (R, R) int64
    points: np.ndarray  # (R, R, 3) float64
    normals_by_face: np.ndarray = field(repr=False)
    overlaps: int = 0

    @property
    def resolution(self) -> int:
        return self.face_id.shape[0]

    @property
    def normals(self) -> np.ndarray:
        n = self.normals_by_face[np.maximum(self.face_id, 0)]
        n[self.face_id < 0] = 0.0
        return n


def texel_index(uv: np.ndarray, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """Row and column of the texel containing each UV point (nearest lookup)."""
    col = np.clip(np.floor(uv[..., 0] * resolution), 0, resolution - 1).astype(np.int64)
    row = np.clip(np.floor((1.0 - uv[..., 1]) * resolution), 0, resolution - 1).astype(np.int64)
    return row, col


# ------------------------------------------------------------------ rasterizer


@njit
def _raster_kernel(corners, corner_uvs, normals, cam, depth, face_id, uv):
    H, W = depth.shape
    ex, ey, ez = cam[0], cam[1], cam[2]
    focal = cam[12]
    half = 0.5 * cam[13]
    xs = np.empty(3)
    ys = np.empty(3)
    zs = np.empty(3)
    for f in range(corners.shape[0]):
        nx, ny, nz = normals[f, 0], normals[f, 1], normals[f, 2]
        if nx == 0.0 and ny == 0.0 and nz == 0.0:
            continue
        if nx * (ex - corners[f, 0, 0]) + ny * (ey - corners[f, 0, 1]) + nz * (ez - corners[f, 0, 2]) <= 0.0:
            continue
        ok = True
        for k in range(3):
            dx = corners[f, k, 0] - ex
            dy = corners[f, k, 1] - ey
            dz = corners[f, k, 2] - ez
            z = dx * cam[9] + dy * cam[10] + dz * cam[11]
            if z < NEAR:
                ok = False
                break
            zs[k] = z
            xs[k] = half + focal * (dx * cam[3] + dy * cam[4] + dz * cam[5]) / z
            ys[k] = half - focal * (dx * cam[6] + dy * cam[7] + dz * cam[8]) / z
        if not ok:
            continue
        area = (xs[1] - xs[0]) * (ys[2] - ys[0]) - (xs[2] - xs[0]) * (ys[1] - ys[0])
        if area == 0.0:
            continue
        x_lo = max(0, int(math.ceil(min(xs[0], xs[1], xs[2]) - 0.5)))
        x_hi = min(W - 1, int(math.floor(max(xs[0], xs[1], xs[2]) - 0.5)))
        y_lo = max(0, int(math.ceil(min(ys[0], ys[1], ys[2]) - 0.5)))
        y_hi = min(H - 1, int(math.floor(max(ys[0], ys[1], ys[2]) - 0.5)))
        inv_area = 1.0 / area
        for py in range(y_lo, y_hi + 1):
            cy = py + 0.5
            for px in range(x_lo, x_hi + 1):
                cx = px + 0.5
                b0 = ((xs[1] - cx) * (ys[2] - cy) - (xs[2] - cx) * (ys[1] - cy)) * inv_area
                b1 = ((xs[2] - cx) * (ys[0] - cy) - (xs[0] - cx) * (ys[2] - cy)) * inv_area
                b2 = ((xs[0] - cx) * (ys[1] - cy) - (xs[1] - cx) * (ys[0] - cy)) * inv_area
                if b0 < 0.0 or b1 < 0.0 or b2 < 0.0:
                    continue
                w0 = b0 / zs[0]
                w1 = b1 / zs[1]
                w2 = b2 / zs[2]
                s = w0 + w1 + w2
                d = 1.0 / s
                cur = depth[py, px]
                if d < cur or (d == cur and f < face_id[py, px]):
                    depth[py, px] = d
                    face_id[py, px] = f
                    uv[py, px, 0] = (w0 * corner_uvs[f, 0, 0] + w1 * corner_uvs[f, 1, 0] + w2 * corner_uvs[f, 2, 0]) * d
                    uv[py, px, 1] = (w0 * corner_uvs[f, 0, 1] + w1 * corner_uvs[f, 1, 1] + w2 * corner_uvs[f, 2, 1]) * d


def _raster_numpy(corners, corner_uvs, normals, cam, depth, face_id, uv):
    H, W = depth.shape
    eye, right, up, fwd = cam[0:3], cam[3:6], cam[6:9], cam[9:12]
    focal, half = cam[12], 0.5 * cam[13]
    rel = corners - eye
    zs_all = rel @ fwd
    front = ((normals * (eye - corners[:, 0])).sum(axis=1) > 0) & (np.abs(normals).sum(axis=1) > 0)
    front &= (zs_all >= NEAR).all(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        xs_all = half + focal * (rel @ right) / zs_all
        ys_all = half - focal * (rel @ up) / zs_all
    for f in np.flatnonzero(front):
        xs, ys, zs = xs_all[f], ys_all[f], zs_all[f]
        area = (xs[1] - xs[0]) * (ys[2] - ys[0]) - (xs[2] - xs[0]) * (ys[1] - ys[0])
        if area == 0.0:
            continue
        x_lo = max(0, math.ceil(xs.min() - 0.5))
        x_hi = min(W - 1, math.floor(xs.max() - 0.5))
        y_lo = max(0, math.ceil(ys.min() - 0.5))
        y_hi = min(H - 1, math.floor(ys.max() - 0.5))
        if x_lo > x_hi or y_lo > y_hi:
            continue
        cy, cx = np.meshgrid(np.arange(y_lo, y_hi + 1) + 0.5, np.arange(x_lo, x_hi + 1) + 0.5, indexing="ij")
        inv_area = 1.0 / area
        b0 = ((xs[1] - cx) * (ys[2] - cy) - (xs[2] - cx) * (ys[1] - cy)) * inv_area
        b1 = ((xs[2] - cx) * (ys[0] - cy) - (xs[0] - cx) * (ys[2] - cy)) * inv_area
        b2 = ((xs[0] - cx) * (ys[1] - cy) - (xs[1] - cx) * (ys[0] - cy)) * inv_area
        inside = (b0 >= 0) & (b1 >= 0) & (b2 >= 0)
        w0, w1, w2 = b0 / zs[0], b1 / zs[1], b2 / zs[2]
        d = 1.0 / (w0 + w1 + w2)
        sub_d = depth[y_lo:y_hi + 1, x_lo:x_hi + 1]
        sub_f = face_id[y_lo:y_hi + 1, x_lo:x_hi + 1]
        win = inside & ((d < sub_d) | ((d == sub_d) & (f < sub_f)))
        sub_d[win] = d[win]
        sub_f[win] = f
        t = corner_uvs[f]
        sub_uv = uv[y_lo:y_hi + 1, x_lo:x_hi + 1]
        sub_uv[..., 0][win] = ((w0 * t[0, 0] + w1 * t[1, 0] + w2 * t[2, 0]) * d)[win]
        sub_uv[..., 1][win] = ((w0 * t[0, 1] + w1 * t[1, 1] + w2 * t[2, 1]) * d)[win]


def _raster_buffers(mesh: TriangleMesh, camera: Camera):
    s = int(camera.image_size)
    depth = np.full((s, s), np.inf)
    face_id = np.full((s, s), -1, np.int64)
    uv = np.full((s, s, 2), np.nan)
    fn = _raster_kernel if use_numba() else _raster_numpy
    fn(np.ascontiguousarray(mesh.corners), np.ascontiguousarray(mesh.corner_uvs),
       np.ascontiguousarray(mesh.face_normals), camera.pack(), depth, face_id, uv)
    return depth, face_id, uv


def sample_nearest(rgb: np.ndarray, uv: np.ndarray, mask: np.ndarray) -> np.ndarray:
    out = np.zeros(mask.shape + (3,), np.float32)
    row, col = texel_index(uv[mask], rgb.shape[0])
    out[mask] = rgb[row, col]
    return out


def rasterize(mesh: TriangleMesh, texture: UvTexture | None, camera: Camera) -> FrameBuffer:
    """Render ``mesh`` from ``camera`` with a z-buffer and back-face culling.

    UVs are interpolated perspective-correctly; colors come from a
    nearest-texel lookup. Triangles with a corner in front of the near
    plane are dropped rather than clipped. Equal depths resolve to the
    lower face id, so the result does not depend on submission order.
    """
    depth, face_id, uv = _raster_buffers(mesh, camera)
    cov = face_id >= 0
    if texture is None:
        color = np.zeros(depth.shape + (3,), np.float32)
        res = None
    else:
        color = sample_nearest(texture.rgb, uv, cov)
        res = texture.resolution
    return FrameBuffer(color, depth, face_id, uv, res)


def normalized_depth(depth: np.ndarray) -> np.ndarray:
    """Map view depth linearly from [NEAR, FAR] onto [1, 0]; background is 0.

    The mapping is fixed rather than fitted per image, so moving a mesh
    away from the camera lowers every foreground value.
    """
    out = np.zeros(depth.shape, np.float64)
    fg = np.isfinite(depth)
    out[fg] = np.clip((FAR - depth[fg]) / (FAR - NEAR), 0.0, 1.0)
    return out


def render_depth(mesh: TriangleMesh, camera: Camera) -> np.ndarray:
    """Normalized depth image (see :func:`normalized_depth`)."""
    depth, _, _ = _raster_buffers(mesh, camera)
    return normalized_depth(depth)


def quantize_depth(depth01: np.ndarray) -> np.ndarray:
    return np.round(np.clip(depth01, 0.0, 1.0) * 65535.0).astype(np.uint16)


# ---------------------------------------------------------------- texel table


@njit
def _texel_table_kernel(corners, corner_uvs, degenerate, R, face_id, points):
    overlaps = 0
    xs = np.empty(3)
    ys = np.empty(3)
    for f in range(corners.shape[0]):
        if degenerate[f]:
            continue
        for k in range(3):
            xs[k] = corner_uvs[f, k, 0] * R
            ys[k] = (1.0 - corner_uvs[f, k, 1]) * R
        area = (xs[1] - xs[0]) * (ys[2] - ys[0]) - (xs[2] - xs[0]) * (ys[1] - ys[0])
        if area == 0.0:
            continue
        inv_area = 1.0 / area
        x_lo = max(0, int(math.ceil(min(xs[0], xs[1], xs[2]) - 0.5)))
        x_hi = min(R - 1, int(math.floor(max(xs[0], xs[1], xs[2]) - 0.5)))
        y_lo = max(0, int(math.ceil(min(ys[0], ys[1], ys[2]) - 0.5)))
        y_hi = min(R - 1, int(math.floor(max(ys[0], ys[1], ys[2]) - 0.5)))
        for ty in range(y_lo, y_hi + 1):
            cy = ty + 0.5
            for tx in range(x_lo, x_hi + 1):
                cx = tx + 0.5
                b0 = ((xs[1] - cx) * (ys[2] - cy) - (xs[2] - cx) * (ys[1] - cy)) * inv_area
                b1 = ((xs[2] - cx) * (ys[0] - cy) - (xs[0] - cx) * (ys[2] - cy)) * inv_area
                b2 = ((xs[0] - cx) * (ys[1] - cy) - (xs[1] - cx) * (ys[0] - cy)) * inv_area
                if b0 < 0.0 or b1 < 0.0 or b2 < 0.0:
                    continue
                if face_id[ty, tx] >= 0:
                    # shared UV edges are not overlaps; only strictly interior claims count
                    if b0 > 0.0 and b1 > 0.0 and b2 > 0.0:
                        overlaps += 1
                    continue
                face_id[ty, tx] = f
                for k in range(3):
                    points[ty, tx, k] = b0 * corners[f, 0, k] + b1 * corners[f, 1, k] + b2 * corners[f, 2, k]
    return overlaps


def _texel_table_numpy(corners, corner_uvs, degenerate, R, face_id, points):
    overlaps = 0
    for f in np.flatnonzero(~degenerate):
        xs = corner_uvs[f, :, 0] * R
        ys = (1.0 - corner_uvs[f, :, 1]) * R
        area = (xs[1] - xs[0]) * (ys[2] - ys[0]) - (xs[2] - xs[0]) * (ys[1] - ys[0])
        if area == 0.0:
            continue
        x_lo = max(0, math.ceil(xs.min() - 0.5))
        x_hi = min(R - 1, math.floor(xs.max() - 0.5))
        y_lo = max(0, math.ceil(ys.min() - 0.5))
        y_hi = min(R - 1, math.floor(ys.max() - 0.5))
        if x_lo > x_hi or y_lo > y_hi:
            continue
        cy, cx = np.meshgrid(np.arange(y_lo, y_hi + 1) + 0.5, np.arange(x_lo, x_hi + 1) + 0.5, indexing="ij")
        inv_area = 1.0 / area
        b0 = ((xs[1] - cx) * (ys[2] - cy) - (xs[2] - cx) * (ys[1] - cy)) * inv_area
        b1 = ((xs[2] - cx) * (ys[0] - cy) - (xs[0] - cx) * (ys[2] - cy)) * inv_area
        b2 = ((xs[0] - cx) * (ys[1] - cy) - (xs[1] - cx) * (ys[0] - cy)) * inv_area
        inside = (b0 >= 0) & (b1 >= 0) & (b2 >= 0)
        sub = face_id[y_lo:y_hi + 1, x_lo:x_hi + 1]
        owned = sub >= 0
        overlaps += int((inside & owned & (b0 > 0) & (b1 > 0) & (b2 > 0)).sum())
        take = inside & ~owned
        if not take.any():
            continue
        b = np.stack([b0, b1, b2], axis=-1)[take]
        sub[take] = f
        points[y_lo:y_hi + 1, x_lo:x_hi + 1][take] = b @ corners[f]
    return overlaps


def build_texel_table(mesh: TriangleMesh, resolution: int) -> TexelSurfaceTable:
    """Rasterize every face in UV space at ``resolution`` texels per side.

    Overlapping UV charts are resolved in favour of the lowest face id and
    reported with a :class:`UVOverlapWarning`.
    """
    R = int(resolution)
    if R < 1:
        raise ValueError("resolution must be >= 1")
    face_id = np.full((R, R), -1, np.int64)
    points = np.zeros((R, R, 3))
    fn = _texel_table_kernel if use_numba() else _texel_table_numpy
    overlaps = int(fn(np.ascontiguousarray(mesh.corners), np.ascontiguousarray(mesh.corner_uvs),
                      np.ascontiguousarray(mesh.degenerate), R, face_id, points))
    if overlaps:
        warnings.warn(f"{overlaps} texel(s) claimed by overlapping UV charts; lowest face id kept",
                      UVOverlapWarning, stacklevel=2)
    return TexelSurfaceTable(face_id, points, np.asarray(mesh.face_normals), overlaps)


# ---------------------------------------------------------------- overlap mask


def overlap_mask(fb: FrameBuffer, texture: UvTexture) -> tuple[np.ndarray, np.ndarray]:
    """Covered pixels whose texel is fresh, and covered pixels whose texel was never written."""
    if fb.texture_resolution is not None and fb.texture_resolution != texture.resolution:
        raise ResolutionMismatch(
            f"frame buffer rendered at {fb.texture_resolution} texels, texture has {texture.resolution}"
        )
    cov = fb.coverage
    mask = np.zeros(cov.shape, bool)
    uninit = np.zeros(cov.shape, bool)
    row, col = texel_index(fb.uv[cov], texture.resolution)
    mask[cov] = texture.fresh[row, col]
    uninit[cov] = ~texture.written[row, col]
    return mask, uninit


# ------------------------------------------------------------------ projection


def pixel_texels(fb: FrameBuffer, resolution: int) -> np.ndarray:
    """Flat index ``row * R + col`` of the texel each pixel displays (-1 on background)."""
    out = np.full(fb.face_id.shape, -1, np.int64)
    cov = fb.coverage
    row, col = texel_index(fb.uv[cov], resolution)
    out[cov] = row * resolution + col
    return out


@njit
def _project_kernel(image, fb_face, fb_texel, corners, normals, cam, tex_face, points, cos_max, eps_z,
                    rgb, fresh, written, blend):
    H, W = fb_face.shape
    R = tex_face.shape[0]
    ex, ey, ez = cam[0], cam[1], cam[2]
    focal = cam[12]
    half = 0.5 * cam[13]
    c2 = cos_max * cos_max
    n_written = 0
    for ty in range(R):
        for tx in range(R):
            f = tex_face[ty, tx]
            if f < 0:
                continue
            px_ = points[ty, tx, 0]
            py_ = points[ty, tx, 1]
            pz_ = points[ty, tx, 2]
            toX = ex - px_
            toY = ey - py_
            toZ = ez - pz_
            dot = normals[f, 0] * toX + normals[f, 1] * toY + normals[f, 2] * toZ
            dist2 = toX * toX + toY * toY + toZ * toZ
            if not (dot > 0.0 and dot * dot > c2 * dist2):
                continue
            dx = -toX
            dy = -toY
            dz = -toZ
            z = dx * cam[9] + dy * cam[10] + dz * cam[11]
            if z < NEAR:
                continue
            x = half + focal * (dx * cam[3] + dy * cam[4] + dz * cam[5]) / z
            y = half - focal * (dx * cam[6] + dy * cam[7] + dz * cam[8]) / z
            if not (x >= 0.0 and x < W and y >= 0.0 and y < H):
                continue
            ix = min(int(x), W - 1)
            iy = min(int(y), H - 1)
            g = fb_face[iy, ix]
            if g < 0:
                continue
            # exact depth of the visible face g along this pixel ray
            rx = cam[9] + (cam[3] * (x - half) - cam[6] * (y - half)) / focal
            ry = cam[10] + (cam[4] * (x - half) - cam[7] * (y - half)) / focal
            rz = cam[11] + (cam[5] * (x - half) - cam[8] * (y - half)) / focal
            den = normals[g, 0] * rx + normals[g, 1] * ry + normals[g, 2] * rz
            if den == 0.0:
                continue
            num = (normals[g, 0] * (corners[g, 0, 0] - ex) + normals[g, 1] * (corners[g, 0, 1] - ey)
                   + normals[g, 2] * (corners[g, 0, 2] - ez))
            if abs(num / den - z) > eps_z:
                continue
            # bilinear sample over the pixels that display this texel, failing that over pixels
            # of the same face; a texel with neither in its footprint is not shown by this view
            tid = ty * R + tx
            fx = x - 0.5
            fy = y - 0.5
            x0 = int(math.floor(fx))
            y0 = int(math.floor(fy))
            ax = fx - x0
            ay = fy - y0
            c0 = 0.0
            c1 = 0.0
            c2_ = 0.0
            wsum = 0.0
            for mode in range(2):
                for j in range(2):
                    yy = y0 + j
                    if yy < 0 or yy >= H:
                        continue
                    wy = ay if j == 1 else 1.0 - ay
                    for i in range(2):
                        xx = x0 + i
                        if xx < 0 or xx >= W:
                            continue
                        h = fb_face[yy, xx]
                        if h < 0 or (mode == 0 and fb_texel[yy, xx] != tid) or (mode == 1 and h != f):
                            continue
                        w = wy * (ax if i == 1 else 1.0 - ax)
                        if w <= 0.0:
                            continue
                        c0 += w * image[yy, xx, 0]
                        c1 += w * image[yy, xx, 1]
                        c2_ += w * image[yy, xx, 2]
                        wsum += w
                if wsum > 0.0:
                    break
            if wsum <= 0.0:
                continue
            c0 /= wsum
            c1 /= wsum
            c2_ /= wsum
            if blend and written[ty, tx]:
                a = dot / math.sqrt(dist2)
                rgb[ty, tx, 0] = (1.0 - a) * rgb[ty, tx, 0] + a * c0
                rgb[ty, tx, 1] = (1.0 - a) * rgb[ty, tx, 1] + a * c1
                rgb[ty, tx, 2] = (1.0 - a) * rgb[ty, tx, 2] + a * c2_
            else:
                rgb[ty, tx, 0] = c0
                rgb[ty, tx, 1] = c1
                rgb[ty, tx, 2] = c2_
            fresh[ty, tx] = True
            written[ty, tx] = True
            n_written += 1
    return n_written


def _project_numpy(image, fb_face, fb_texel, corners, normals, cam, tex_face, points, cos_max, eps_z,
                   rgb, fresh, written, blend):
    H, W = fb_face.shape
    eye, right, up, fwd = cam[0:3], cam[3:6], cam[6:9], cam[9:12]
    focal, half = cam[12], 0.5 * cam[13]
    ty, tx = np.nonzero(tex_face >= 0)
    f = tex_face[ty, tx]
    p = points[ty, tx]
    to = eye - p
    dot = (normals[f] * to).sum(axis=1)
    dist2 = (to * to).sum(axis=1)
    ok = (dot > 0) & (dot * dot > cos_max * cos_max * dist2)
    d = -to
    z = d @ fwd
    ok &= z >= NEAR
    with np.errstate(divide="ignore", invalid="ignore"):
        x = half + focal * (d @ right) / z
        y = half - focal * (d @ up) / z
    ok &= (x >= 0) & (x < W) & (y >= 0) & (y < H)
    sel = np.flatnonzero(ok)
    ty, tx, f, x, y, z, dot, dist2 = ty[sel], tx[sel], f[sel], x[sel], y[sel], z[sel], dot[sel], dist2[sel]
    ix = np.minimum(x.astype(np.int64), W - 1)
    iy = np.minimum(y.astype(np.int64), H - 1)
    g = fb_face[iy, ix]
    ok = g >= 0
    gg = np.maximum(g, 0)
    ray = fwd[None, :] + (np.outer(x - half, right) - np.outer(y - half, up)) / focal
    den = (normals[gg] * ray).sum(axis=1)
    num = (normals[gg] * (corners[gg, 0] - eye)).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ok &= (den != 0) & (np.abs(num / den - z) <= eps_z)
    sel = np.flatnonzero(ok)
    ty, tx, f, x, y, ix, iy, dot, dist2 = ty[sel], tx[sel], f[sel], x[sel], y[sel], ix[sel], iy[sel], dot[sel], dist2[sel]
    fx, fy = x - 0.5, y - 0.5
    x0 = np.floor(fx).astype(np.int64)
    y0 = np.floor(fy).astype(np.int64)
    ax, ay = fx - x0, fy - y0
    tid = ty * tex_face.shape[0] + tx
    acc = np.zeros((2, len(sel), 3))
    wsum = np.zeros((2, len(sel)))
    for j in range(2):
        yy = y0 + j
        wy = ay if j == 1 else 1.0 - ay
        for i in range(2):
            xx = x0 + i
            w = wy * (ax if i == 1 else 1.0 - ax)
            inb = (yy >= 0) & (yy < H) & (xx >= 0) & (xx < W) & (w > 0)
            h = np.full(len(sel), -1)
            h[inb] = fb_face[yy[inb], xx[inb]]
            ht = np.full(len(sel), -1)
            ht[inb] = fb_texel[yy[inb], xx[inb]]
            px = np.zeros((len(sel), 3))
            px[inb] = image[yy[inb], xx[inb]]
            for mode, rule in enumerate((ht == tid, h == f)):
                use = inb & (h >= 0) & rule
                acc[mode] += np.where(use[:, None], w[:, None] * px, 0.0)
                wsum[mode] += np.where(use, w, 0.0)
    col = np.zeros((len(sel), 3))
    for mode in (1, 0):
        m = wsum[mode] > 0
        col[m] = acc[mode][m] / wsum[mode][m, None]
    shown = (wsum > 0).any(axis=0)
    ty, tx, col, dot, dist2 = ty[shown], tx[shown], col[shown], dot[shown], dist2[shown]
    if blend:
        a = (dot / np.sqrt(dist2))[:, None]
        prev = written[ty, tx][:, None]
        col = np.where(prev, (1 - a) * rgb[ty, tx] + a * col, col)
    rgb[ty, tx] = col
    fresh[ty, tx] = True
    written[ty, tx] = True
    return len(ty)


def project_to_texture(
    image: np.ndarray,
    fb: FrameBuffer,
    table: TexelSurfaceTable,
    camera: Camera,
    texture: UvTexture,
    mesh: TriangleMesh,
    *,
    blend: str = "overwrite",
    max_angle_deg: float = MAX_ANGLE_DEG,
    eps_z: float = DEPTH_EPS,
    inplace: bool = False,
) -> UvTexture:
    """Splat a view-space image back onto the texels it shows.

    A texel is updated when its surface point is the visible surface in
    ``fb`` (depth within ``eps_z``) and faces the camera within
    ``max_angle_deg``. Its new color is a bilinear sample of ``image``
    over the neighbouring pixels that display this texel, falling back to
    pixels of the same face. Texels with no pixel of their own face in the
    2x2 footprint are skipped: near UV seams the nearby pixels show another
    chart. Updated texels are marked fresh and written. ``blend`` is
    ``"overwrite"`` or ``"cosine"`` (mix with the previous value by the
    cosine of the view angle).
    """
    image = np.asarray(image)
    if image.shape[:2] != fb.face_id.shape or image.ndim != 3:
        raise ShapeMismatch(f"image {image.shape} does not match frame buffer {fb.face_id.shape}")
    if table.resolution != texture.resolution:
        raise ResolutionMismatch(f"texel table at {table.resolution}, texture at {texture.resolution}")
    if blend not in ("overwrite", "cosine"):
        raise ValueError(f"unknown blend mode {blend!r}")
    out = texture if inplace else texture.copy()
    args = (
        np.ascontiguousarray(image, dtype=np.float32), fb.face_id, pixel_texels(fb, texture.resolution),
        np.ascontiguousarray(mesh.corners),
        np.ascontiguousarray(mesh.face_normals), camera.pack(), table.face_id, table.points,
        math.cos(math.radians(max_angle_deg)), float(eps_z), out.rgb, out.fresh, out.written, blend == "cosine",
    )
    n = _project_kernel(*args) if use_numba() else _project_numpy(*args)
    logger.debug("projected %d texels", n)
    np.clip(out.rgb, 0.0, 1.0, out=out.rgb)
    return out


# -------------------------------------------------------------------- upsample


def upsample(texture: UvTexture, new_resolution: int) -> UvTexture:
    """Bilinear upsampling that only mixes written texels.

    A new texel is written iff one of its contributing source texels was;
    the fresh mask is cleared.
    """
    R, N = texture.resolution, int(new_resolution)
    if N <= R:
        raise ValueError(f"new resolution {N} must exceed {R}")
    s = (np.arange(N) + 0.5) * (R / N) - 0.5
    i0 = np.floor(s).astype(np.int64)
    a = s - i0
    lo = np.clip(i0, 0, R - 1)
    hi = np.clip(i0 + 1, 0, R - 1)
    wts = np.float64(texture.written)
    src = texture.rgb.astype(np.float64) * wts[..., None]
    acc = np.zeros((N, N, 3))
    wsum = np.zeros((N, N))
    for rows, wr in ((lo, 1.0 - a), (hi, a)):
        for cols, wc in ((lo, 1.0 - a), (hi, a)):
            w = np.outer(wr, wc)
            acc += w[..., None] * src[np.ix_(rows, cols)]
            wsum += w * wts[np.ix_(rows, cols)]
    written = wsum > 0
    rgb = np.zeros((N, N, 3), np.float32)
    rgb[written] = (acc[written] / wsum[written, None]).astype(np.float32)
    return UvTexture(np.clip(rgb, 0, 1), np.zeros((N, N), bool), written)


def dilate_written(texture: UvTexture) -> int:
    """Fill never-written texels that border written ones with their neighbours' mean.

    Debug aid for seams between UV charts; returns the number of texels filled.
    """
    w = texture.written
    src = np.pad(texture.rgb * w[..., None], ((1, 1), (1, 1), (0, 0)))
    wp = np.pad(w, 1).astype(np.int64)
    R = w.shape[0]
    acc = np.zeros(texture.rgb.shape, np.float64)
    cnt = np.zeros(w.shape, np.int64)
    for dy, dx in ((0, 1), (2, 1), (1, 0), (1, 2)):
        acc += src[dy:dy + R, dx:dx + R]
        cnt += wp[dy:dy + R, dx:dx + R]
    fill = ~w & (cnt > 0)
    texture.rgb[fill] = (acc[fill] / cnt[fill, None]).astype(np.float32)
    texture.written[fill] = True
    return int(fill.sum())


def sample_bilinear(texture: UvTexture, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Written-aware bilinear lookup of texture colors at UV points."""
    R = texture.resolution
    x = u * R - 0.5
    y = (1.0 - v) * R - 0.5
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    ax, ay = x - x0, y - y0
    wts = np.float64(texture.written)
    acc = np.zeros(u.shape + (3,))
    wsum = np.zeros(u.shape)
    for dy, wy in ((0, 1 - ay), (1, ay)):
        for dx, wx in ((0, 1 - ax), (1, ax)):
            r = np.clip(y0 + dy, 0, R - 1)
            c = np.clip(x0 + dx, 0, R - 1)
            w = wy * wx * wts[r, c]
            acc += w[..., None] * texture.rgb[r, c]
            wsum += w
    out = np.zeros(u.shape + (3,))
    m = wsum > 0
    out[m] = acc[m] / wsum[m, None]
    return out


# ------------------------------------------------------------------------- PNG


def to_uint8(rgb: np.ndarray) -> np.ndarray:
    return np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(rgb: np.ndarray, path: str | Path) -> None:
    Image.fromarray(to_uint8(rgb)).save(path, format="PNG")


def load_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def save_depth_png(depth01: np.ndarray, path: str | Path) -> None:
    Image.fromarray(quantize_depth(depth01)).save(path, format="PNG")


def save_mask_png(mask: np.ndarray, path: str | Path) -> None:
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)).save(path, format="PNG")


def load_texture(path: str | Path) -> UvTexture:
    rgb = load_png(path)
    if rgb.shape[0] != rgb.shape[1]:
        raise ShapeMismatch(f"texture must be square, got {rgb.shape[:2]}")
    return UvTexture.from_rgb(rgb)
