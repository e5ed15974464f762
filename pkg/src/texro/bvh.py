"""Bounding-volume hierarchy and watertight ray/triangle queries.

The BVH is a flat array layout built by median splits on the longest
centroid axis. Traversal kernels are compiled with numba; ``*_numpy``
twins implement the same queries by brute force over all triangles and
serve as both the fallback path and an independent test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._accel import njit, use_numba

LEAF_SIZE = 4


@dataclass(frozen=True)
class Bvh:
    """Flat BVH. Leaves have ``left == -1`` and cover ``order[start:start+count]``."""

    bbox_min: np.ndarray
    bbox_max: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    order: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.left)


@njit
def _build_kernel(lo, hi, cen, leaf_size):
    n = cen.shape[0]
    cap = max(2 * n, 1)
    bmin = np.empty((cap, 3))
    bmax = np.empty((cap, 3))
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    start = np.zeros(cap, np.int64)
    count = np.zeros(cap, np.int64)
    order = np.arange(n)
    stack = np.empty(cap, np.int64)
    n_nodes = 1
    start[0] = 0
    count[0] = n
    sp = 1
    stack[0] = 0
    while sp > 0:
        sp -= 1
        node = stack[sp]
        s = start[node]
        c = count[node]
        for k in range(3):
            bmin[node, k] = np.inf
            bmax[node, k] = -np.inf
        cmin = np.full(3, np.inf)
        cmax = np.full(3, -np.inf)
        for i in range(s, s + c):
            p = order[i]
            for k in range(3):
                if lo[p, k] < bmin[node, k]:
                    bmin[node, k] = lo[p, k]
                if hi[p, k] > bmax[node, k]:
                    bmax[node, k] = hi[p, k]
                if cen[p, k] < cmin[k]:
                    cmin[k] = cen[p, k]
                if cen[p, k] > cmax[k]:
                    cmax[k] = cen[p, k]
        if c <= leaf_size:
            continue
        axis = 0
        ext = cmax[0] - cmin[0]
        for k in range(1, 3):
            if cmax[k] - cmin[k] > ext:
                ext = cmax[k] - cmin[k]
                axis = k
        seg = order[s:s + c].copy()
        keys = np.empty(c)
        for i in range(c):
            keys[i] = cen[seg[i], axis]
        idx = np.argsort(keys, kind="mergesort")
        for i in range(c):
            order[s + i] = seg[idx[i]]
        half = c // 2
        l_node = n_nodes
        r_node = n_nodes + 1
        n_nodes += 2
        left[node] = l_node
        right[node] = r_node
        start[l_node] = s
        count[l_node] = half
        start[r_node] = s + half
        count[r_node] = c - half
        stack[sp] = r_node
        stack[sp + 1] = l_node
        sp += 2
    return bmin[:n_nodes], bmax[:n_nodes], left[:n_nodes], right[:n_nodes], start[:n_nodes], count[:n_nodes], order


def _build_numpy(lo, hi, cen, leaf_size):
    n = len(cen)
    bmin, bmax, left, right, start, count = [], [], [], [], [], []
    order = np.arange(n)
    stack = []

    def new(s, c):
        bmin.append(None), bmax.append(None), left.append(-1), right.append(-1)
        start.append(s), count.append(c)
        return len(left) - 1

    stack.append(new(0, n))
    while stack:
        node = stack.pop()
        s, c = start[node], count[node]
        seg = order[s:s + c]
        bmin[node] = lo[seg].min(axis=0)
        bmax[node] = hi[seg].max(axis=0)
        if c <= leaf_size:
            continue
        cc = cen[seg]
        axis = int(np.argmax(cc.max(axis=0) - cc.min(axis=0)))
        order[s:s + c] = seg[np.argsort(cc[:, axis], kind="mergesort")]
        half = c // 2
        l_node, r_node = new(s, half), new(s + half, c - half)
        left[node], right[node] = l_node, r_node
        stack += [r_node, l_node]
    return (np.array(bmin), np.array(bmax), np.array(left), np.array(right),
            np.array(start), np.array(count), order)


def build_bvh(corners: np.ndarray, leaf_size: int = LEAF_SIZE) -> Bvh:
    """Build a BVH over triangles given as an (F, 3, 3) corner array."""
    corners = np.ascontiguousarray(corners, dtype=np.float64)
    lo = corners.min(axis=1)
    hi = corners.max(axis=1)
    cen = corners.mean(axis=1)
    if len(corners) == 0:
        raise ValueError("cannot build a BVH over zero triangles")
    fn = _build_kernel if use_numba() else _build_numpy
    return Bvh(*fn(lo, hi, cen, leaf_size))


# ----------------------------------------------------------------- intersection


@njit
def _ray_setup(d):
    """Axis permutation and shear constants of the watertight test for direction ``d``."""
    ad0, ad1, ad2 = abs(d[0]), abs(d[1]), abs(d[2])
    if ad0 > ad1 and ad0 > ad2:
        kz = 0
    elif ad1 > ad2:
        kz = 1
    else:
        kz = 2
    kx = (kz + 1) % 3
    ky = (kx + 1) % 3
    if d[kz] < 0.0:
        kx, ky = ky, kx
    return kx, ky, kz, d[kx] / d[kz], d[ky] / d[kz], 1.0 / d[kz]


@njit
def _ray_tri(o, kx, ky, kz, sx, sy, sz, tri):
    """Watertight ray/triangle test (two-sided). Returns the hit distance or inf."""
    az = tri[0, kz] - o[kz]
    bz = tri[1, kz] - o[kz]
    cz = tri[2, kz] - o[kz]
    ax = tri[0, kx] - o[kx] - sx * az
    ay = tri[0, ky] - o[ky] - sy * az
    bx = tri[1, kx] - o[kx] - sx * bz
    by = tri[1, ky] - o[ky] - sy * bz
    cx = tri[2, kx] - o[kx] - sx * cz
    cy = tri[2, ky] - o[ky] - sy * cz
    u = cx * by - cy * bx
    v = ax * cy - ay * cx
    w = bx * ay - by * ax
    if (u < 0.0 or v < 0.0 or w < 0.0) and (u > 0.0 or v > 0.0 or w > 0.0):
        return np.inf
    det = u + v + w
    if det == 0.0:
        return np.inf
    return sz * (u * az + v * bz + w * cz) / det


@njit
def _box_hit(bmin, bmax, node, o, inv, t_max):
    t0 = 0.0
    t1 = t_max
    for k in range(3):
        ta = (bmin[node, k] - o[k]) * inv[k]
        tb = (bmax[node, k] - o[k]) * inv[k]
        if ta > tb:
            ta, tb = tb, ta
        if ta > t0:
            t0 = ta
        if tb < t1:
            t1 = tb
    return t0 <= t1 * (1.0 + 1e-12) + 1e-12


@njit
def _occluded(bmin, bmax, left, right, start, count, order, corners, o, d, t_max, skip, stack, inv):
    """True if any triangle other than ``skip`` is hit with 0 < t < t_max.

    ``stack`` and ``inv`` are caller-owned scratch arrays.
    """
    for k in range(3):
        inv[k] = 1.0 / d[k] if d[k] != 0.0 else np.inf
    kx, ky, kz, sx, sy, sz = _ray_setup(d)
    sp = 1
    stack[0] = 0
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if not _box_hit(bmin, bmax, node, o, inv, t_max):
            continue
        if left[node] < 0:
            for i in range(start[node], start[node] + count[node]):
                f = order[i]
                if f == skip:
                    continue
                t = _ray_tri(o, kx, ky, kz, sx, sy, sz, corners[f])
                if 0.0 < t < t_max:
                    return True
        else:
            stack[sp] = left[node]
            stack[sp + 1] = right[node]
            sp += 2
    return False


@njit
def _crossings_kernel(bmin, bmax, left, right, start, count, order, corners, origins, d):
    n = origins.shape[0]
    out = np.zeros(n, np.int64)
    inv = np.empty(3)
    for k in range(3):
        inv[k] = 1.0 / d[k] if d[k] != 0.0 else np.inf
    kx, ky, kz, sx, sy, sz = _ray_setup(d)
    stack = np.empty(2 * left.shape[0] + 2, np.int64)
    for r in range(n):
        o = origins[r]
        sp = 1
        stack[0] = 0
        hits = 0
        while sp > 0:
            sp -= 1
            node = stack[sp]
            if not _box_hit(bmin, bmax, node, o, inv, np.inf):
                continue
            if left[node] < 0:
                for i in range(start[node], start[node] + count[node]):
                    t = _ray_tri(o, kx, ky, kz, sx, sy, sz, corners[order[i]])
                    if 0.0 < t < np.inf:
                        hits += 1
            else:
                stack[sp] = left[node]
                stack[sp + 1] = right[node]
                sp += 2
        out[r] = hits
    return out


def ray_triangle_numpy(origins: np.ndarray, dirs: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Vectorized watertight test of R rays against T triangles; (R, T) hit distances (inf = miss)."""
    o = origins[:, None, :]
    d = dirs[:, None, :]
    kz = np.argmax(np.abs(dirs), axis=1)
    kx = (kz + 1) % 3
    ky = (kx + 1) % 3
    neg = dirs[np.arange(len(dirs)), kz] < 0
    kx, ky = np.where(neg, ky, kx), np.where(neg, kx, ky)

    def pick(a, k):
        return np.take_along_axis(a, np.broadcast_to(k[:, None, None], a.shape[:2] + (1,)), axis=2)[..., 0]

    dd = np.broadcast_to(d, (len(dirs), 1, 3))
    dz, dx, dy = pick(dd, kz), pick(dd, kx), pick(dd, ky)
    sx, sy, sz = dx / dz, dy / dz, 1.0 / dz
    rel = [tris[None, :, j, :] - o for j in range(3)]
    shape = (len(dirs), len(tris), 3)
    comps = []
    for a in rel:
        a = np.broadcast_to(a, shape)
        az = pick(a, kz)
        comps.append((pick(a, kx) - sx * az, pick(a, ky) - sy * az, az))
    (ax, ay, az), (bx, by, bz), (cx, cy, cz) = comps
    u = cx * by - cy * bx
    v = ax * cy - ay * cx
    w = bx * ay - by * ax
    miss = ((u < 0) | (v < 0) | (w < 0)) & ((u > 0) | (v > 0) | (w > 0))
    det = u + v + w
    miss |= det == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        t = sz * (u * az + v * bz + w * cz) / det
    return np.where(miss, np.inf, t)


# odd direction so parity rays avoid passing exactly through edges of axis-aligned meshes
PARITY_DIR = np.array([0.2718281828, 0.1414213562, 0.9523511731])


def count_crossings(bvh: Bvh, corners: np.ndarray, origins: np.ndarray, direction=PARITY_DIR) -> np.ndarray:
    """Number of surface crossings along a ray from each origin (odd = inside)."""
    origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    direction = np.asarray(direction, dtype=np.float64)
    if use_numba():
        return _crossings_kernel(bvh.bbox_min, bvh.bbox_max, bvh.left, bvh.right, bvh.start,
                                 bvh.count, bvh.order, corners, origins, direction)
    t = ray_triangle_numpy(origins, np.broadcast_to(direction, origins.shape).copy(), corners)
    return ((t > 0) & np.isfinite(t)).sum(axis=1)
