"""
Bounding-volume hierarchy over triangles, compiled with numba.

The tree is built by median split along the widest centroid axis and stored
as flat node arrays. Leaves have ``left == -1`` and own
``order[start:start + count]``. Ray queries use the watertight ray/triangle
test (shear-transformed edge functions); point queries use the Voronoi-region
closest-point routine.
"""

import logging
from typing import Tuple

import numpy as np
from numba import njit, prange

logger = logging.getLogger(__name__)

LEAF_SIZE = 4
_STACK_SIZE = 256


@njit(cache=True, error_model="numpy")
def _build(centroids, tri_min, tri_max, leaf_size):
    n = centroids.shape[0]
    max_nodes = max(2 * n, 1)
    node_min = np.empty((max_nodes, 3))
    node_max = np.empty((max_nodes, 3))
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    start = np.zeros(max_nodes, np.int64)
    count = np.zeros(max_nodes, np.int64)
    order = np.arange(n)
    stack = np.empty(max_nodes, np.int64)

    start[0] = 0
    count[0] = n
    num_nodes = 1
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        s = start[node]
        c = count[node]
        bmin = np.full(3, np.inf)
        bmax = np.full(3, -np.inf)
        cmin = np.full(3, np.inf)
        cmax = np.full(3, -np.inf)
        for k in range(s, s + c):
            tri = order[k]
            for a in range(3):
                bmin[a] = min(bmin[a], tri_min[tri, a])
                bmax[a] = max(bmax[a], tri_max[tri, a])
                cmin[a] = min(cmin[a], centroids[tri, a])
                cmax[a] = max(cmax[a], centroids[tri, a])
        for a in range(3):
            pad = 1e-9 * (1.0 + abs(bmin[a]) + abs(bmax[a]))
            node_min[node, a] = bmin[a] - pad
            node_max[node, a] = bmax[a] + pad
        if c <= leaf_size:
            continue
        axis = 0
        for a in range(1, 3):
            if cmax[a] - cmin[a] > cmax[axis] - cmin[axis]:
                axis = a
        if cmax[axis] - cmin[axis] <= 0.0:
            continue

        keys = np.empty(c)
        idx = np.empty(c, np.int64)
        for k in range(c):
            idx[k] = order[s + k]
            keys[k] = centroids[idx[k], axis]
        perm = np.argsort(keys, kind="mergesort")
        for k in range(c):
            order[s + k] = idx[perm[k]]

        half = c // 2
        lchild = num_nodes
        rchild = num_nodes + 1
        num_nodes += 2
        start[lchild] = s
        count[lchild] = half
        start[rchild] = s + half
        count[rchild] = c - half
        left[node] = lchild
        right[node] = rchild
        count[node] = 0
        stack[sp] = lchild
        stack[sp + 1] = rchild
        sp += 2
    return (node_min[:num_nodes], node_max[:num_nodes], left[:num_nodes], right[:num_nodes],
            start[:num_nodes], count[:num_nodes], order)


@njit(cache=True, error_model="numpy")
def _ray_box(o, inv, bmin, bmax):
    t_lo = 0.0
    t_hi = np.inf
    for a in range(3):
        t0 = (bmin[a] - o[a]) * inv[a]
        t1 = (bmax[a] - o[a]) * inv[a]
        if t0 > t1:
            t0, t1 = t1, t0
        t_lo = max(t_lo, t0)
        t_hi = min(t_hi, t1)
    return t_hi >= t_lo, t_lo


@njit(cache=True, error_model="numpy")
def ray_triangle_watertight(o, d, v0, v1, v2):
    """Distance along the ray to the triangle, or inf. Edges and vertices are hit exactly once."""
    kz = 0
    for a in range(1, 3):
        if abs(d[a]) > abs(d[kz]):
            kz = a
    kx = (kz + 1) % 3
    ky = (kx + 1) % 3
    if d[kz] < 0.0:
        kx, ky = ky, kx
    sx = d[kx] / d[kz]
    sy = d[ky] / d[kz]
    sz = 1.0 / d[kz]

    ax = (v0[kx] - o[kx]) - sx * (v0[kz] - o[kz])
    ay = (v0[ky] - o[ky]) - sy * (v0[kz] - o[kz])
    bx = (v1[kx] - o[kx]) - sx * (v1[kz] - o[kz])
    by = (v1[ky] - o[ky]) - sy * (v1[kz] - o[kz])
    cx = (v2[kx] - o[kx]) - sx * (v2[kz] - o[kz])
    cy = (v2[ky] - o[ky]) - sy * (v2[kz] - o[kz])

    u = cx * by - cy * bx
    v = ax * cy - ay * cx
    w = bx * ay - by * ax
    if (u < 0.0 or v < 0.0 or w < 0.0) and (u > 0.0 or v > 0.0 or w > 0.0):
        return np.inf
    det = u + v + w
    if det == 0.0:
        return np.inf
    az = sz * (v0[kz] - o[kz])
    bz = sz * (v1[kz] - o[kz])
    cz = sz * (v2[kz] - o[kz])
    t = (u * az + v * bz + w * cz) / det
    if t <= 0.0:
        return np.inf
    return t


@njit(parallel=True, cache=True, error_model="numpy")
def _intersect_rays(node_min, node_max, left, right, start, count, order,
                    vertices, triangles, origins, directions):
    num_rays = origins.shape[0]
    out_t = np.full(num_rays, np.inf)
    out_tri = np.full(num_rays, -1, np.int64)
    out_entry = np.full(num_rays, np.inf)
    for r in prange(num_rays):
        o = origins[r]
        d = directions[r]
        inv = np.empty(3)
        for a in range(3):
            if abs(d[a]) > 1e-300:
                inv[a] = 1.0 / d[a]
            else:
                inv[a] = 1e300
        stack = np.empty(_STACK_SIZE, np.int64)
        stack[0] = 0
        sp = 1
        best = np.inf
        best_tri = -1
        best_entry = np.inf
        while sp > 0:
            sp -= 1
            node = stack[sp]
            hit, t_entry = _ray_box(o, inv, node_min[node], node_max[node])
            if not hit or t_entry > best:
                continue
            if left[node] == -1:
                for k in range(start[node], start[node] + count[node]):
                    tri = order[k]
                    t = ray_triangle_watertight(
                        o, d, vertices[triangles[tri, 0]], vertices[triangles[tri, 1]],
                        vertices[triangles[tri, 2]],
                    )
                    if t < best:
                        best = t
                        best_tri = tri
                        best_entry = t_entry
            else:
                stack[sp] = left[node]
                stack[sp + 1] = right[node]
                sp += 2
        out_t[r] = best
        out_tri[r] = best_tri
        out_entry[r] = best_entry
    return out_t, out_tri, out_entry


@njit(cache=True, error_model="numpy")
def closest_point_on_triangle(p, a, b, c):
    """Closest point to ``p`` on triangle abc (Voronoi region tests)."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.dot(ab, ap)
    d2 = np.dot(ac, ap)
    if d1 <= 0.0 and d2 <= 0.0:
        return a.copy()
    bp = p - b
    d3 = np.dot(ab, bp)
    d4 = np.dot(ac, bp)
    if d3 >= 0.0 and d4 <= d3:
        return b.copy()
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        return a + (d1 / (d1 - d3)) * ab
    cp = p - c
    d5 = np.dot(ab, cp)
    d6 = np.dot(ac, cp)
    if d6 >= 0.0 and d5 <= d6:
        return c.copy()
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        return a + (d2 / (d2 - d6)) * ac
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b)
    denom = 1.0 / (va + vb + vc)
    return a + ab * (vb * denom) + ac * (vc * denom)


@njit(cache=True, error_model="numpy")
def _box_distance_sq(p, bmin, bmax):
    total = 0.0
    for a in range(3):
        if p[a] < bmin[a]:
            total += (bmin[a] - p[a]) ** 2
        elif p[a] > bmax[a]:
            total += (p[a] - bmax[a]) ** 2
    return total


@njit(parallel=True, cache=True, error_model="numpy")
def _closest_points(node_min, node_max, left, right, start, count, order,
                    vertices, triangles, points):
    num_points = points.shape[0]
    out_d = np.full(num_points, np.inf)
    out_tri = np.full(num_points, -1, np.int64)
    for i in prange(num_points):
        p = points[i]
        stack = np.empty(_STACK_SIZE, np.int64)
        stack[0] = 0
        sp = 1
        best = np.inf
        best_tri = -1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            if _box_distance_sq(p, node_min[node], node_max[node]) >= best:
                continue
            if left[node] == -1:
                for k in range(start[node], start[node] + count[node]):
                    tri = order[k]
                    q = closest_point_on_triangle(
                        p, vertices[triangles[tri, 0]], vertices[triangles[tri, 1]],
                        vertices[triangles[tri, 2]],
                    )
                    d2 = np.sum((q - p) ** 2)
                    if d2 < best:
                        best = d2
                        best_tri = tri
            else:
                # nearer child last so it is popped first
                dl = _box_distance_sq(p, node_min[left[node]], node_max[left[node]])
                dr = _box_distance_sq(p, node_min[right[node]], node_max[right[node]])
                if dl < dr:
                    stack[sp] = right[node]
                    stack[sp + 1] = left[node]
                else:
                    stack[sp] = left[node]
                    stack[sp + 1] = right[node]
                sp += 2
        out_d[i] = np.sqrt(best)
        out_tri[i] = best_tri
    return out_d, out_tri


class Bvh:
    """Flat-array BVH over an indexed triangle mesh (float64 vertices)."""

    def __init__(self, vertices: np.ndarray, triangles: np.ndarray, leaf_size: int = LEAF_SIZE):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64).reshape(-1, 3)
        self.num_triangles = self.triangles.shape[0]
        if self.num_triangles == 0:
            self.nodes = None
            logger.info("BVH built over an empty mesh")
            return
        corners = self.vertices[self.triangles]
        tri_min = corners.min(axis=1)
        tri_max = corners.max(axis=1)
        centroids = corners.mean(axis=1)
        self.nodes = _build(centroids, tri_min, tri_max, leaf_size)
        logger.info(f"BVH built: {self.num_triangles} triangles, {self.nodes[0].shape[0]} nodes")

    @property
    def node_min(self) -> np.ndarray:
        return self.nodes[0]

    @property
    def node_max(self) -> np.ndarray:
        return self.nodes[1]

    def leaf_triangles(self) -> np.ndarray:
        """Triangle ids referenced by leaves (each exactly once)."""
        node_min, node_max, left, right, start, count, order = self.nodes
        leaves = np.nonzero(left == -1)[0]
        return np.concatenate([order[start[n]:start[n] + count[n]] for n in leaves])

    def intersect(self, origins: np.ndarray, directions: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        First hits of rays.

        Returns:
            (t [R] with inf for MISS, triangle id [R] with -1 for MISS,
             entry distance of the hit leaf's box [R])
        """
        origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
        directions = np.ascontiguousarray(directions, dtype=np.float64).reshape(-1, 3)
        if self.nodes is None:
            n = origins.shape[0]
            return np.full(n, np.inf), np.full(n, -1, np.int64), np.full(n, np.inf)
        return _intersect_rays(*self.nodes, self.vertices, self.triangles, origins, directions)

    def closest(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Distance to the nearest triangle and its id (inf / -1 on an empty mesh)."""
        points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
        if self.nodes is None:
            n = points.shape[0]
            return np.full(n, np.inf), np.full(n, -1, np.int64)
        return _closest_points(*self.nodes, self.vertices, self.triangles, points)
