"""Triangular meshes of 2D domains and piecewise-linear (P1) fields on them.

The disk builder produces a quasi-uniform triangulation of the unit-area disk
by Delaunay-triangulating concentric rings of nodes; the outermost ring lies
exactly on the circle. Meshes can also be read from and written to a small
plain-text format::

    nodes M triangles T
    x y boundary_flag        (M lines)
    i j k                    (T lines, 0-based, counter-clockwise)
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial import Delaunay

logger = logging.getLogger(__name__)

DISK_RADIUS = 1.0 / np.sqrt(np.pi)

# Above this node count point location goes through a uniform-grid hash.
BRUTE_FORCE_MAX_NODES = 5000
EDGE_TOL = 1e-10


class MeshError(ValueError):
    """Invalid mesh input or construction failure."""


class OutsideDomainError(ValueError):
    """A query point lies outside the meshed domain."""

    def __init__(self, index: int, point):
        self.index = index
        self.point = tuple(np.asarray(point, dtype=float))
        super().__init__(f"point {index} at {self.point} is outside the domain")


@dataclass(eq=False)
class TriangularMesh:
    """Conforming triangulation with counter-clockwise triangles.

    Parameters
    ----------
    node_coords : (M, 2) array
    triangles : (T, 3) int array
    boundary : (M,) bool array, True for nodes on the domain boundary
    """

    node_coords: np.ndarray
    triangles: np.ndarray
    boundary: np.ndarray

    def __post_init__(self):
        self.node_coords = np.ascontiguousarray(self.node_coords, dtype=float)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        self.boundary = np.asarray(self.boundary, dtype=bool)
        M = len(self.node_coords)
        if self.node_coords.ndim != 2 or self.node_coords.shape[1] != 2:
            raise MeshError("node_coords must have shape (M, 2)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3 or len(self.triangles) == 0:
            raise MeshError("triangles must have shape (T, 3) with T >= 1")
        if self.triangles.min() < 0 or self.triangles.max() >= M:
            raise MeshError("triangle refers to a node index out of range")
        if self.boundary.shape != (M,):
            raise MeshError("boundary flags must have one entry per node")
        if np.any(self.signed_areas <= 0):
            bad = int(np.argmin(self.signed_areas))
            raise MeshError(f"triangle {bad} has non-positive signed area")
        for arr in (self.node_coords, self.triangles, self.boundary):
            arr.setflags(write=False)

    @classmethod
    def from_arrays(cls, node_coords, triangles, boundary=None) -> "TriangularMesh":
        """Build a mesh, orienting triangles CCW and detecting the boundary if not given."""
        nodes = np.asarray(node_coords, dtype=float)
        tris = np.array(triangles, dtype=np.int64)
        area = _signed_areas(nodes, tris)
        flip = area < 0
        tris[flip] = tris[flip][:, [0, 2, 1]]
        if boundary is None:
            boundary = np.zeros(len(nodes), dtype=bool)
            boundary[np.unique(boundary_edges(tris))] = True
        return cls(nodes, tris, boundary)

    @property
    def M(self) -> int:
        return len(self.node_coords)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def mesh_id(self) -> str:
        h = hashlib.sha1()
        h.update(self.node_coords.tobytes())
        h.update(self.triangles.tobytes())
        return h.hexdigest()[:12]

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.boundary)

    @cached_property
    def interior_nodes(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        return _signed_areas(self.node_coords, self.triangles)

    @property
    def areas(self) -> np.ndarray:
        return self.signed_areas

    @property
    def total_area(self) -> float:
        return float(self.signed_areas.sum())

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.node_coords[self.triangles].mean(axis=1)

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted (E, 2) node pairs."""
        return np.unique(_all_edges(self.triangles), axis=0)

    @property
    def max_diameter(self) -> float:
        p = self.node_coords[self.triangles]
        d = np.stack([np.linalg.norm(p[:, i] - p[:, (i + 1) % 3], axis=1) for i in range(3)])
        return float(d.max())

    @cached_property
    def _locator(self) -> "PointLocator":
        return PointLocator(self)

    def locate(self, points) -> Tuple[np.ndarray, np.ndarray]:
        """Vectorised point location; see :class:`PointLocator`."""
        return self._locator.locate(points)

    def contains(self, points) -> np.ndarray:
        tri, _ = self.locate(points)
        return tri >= 0

    def field(self, values) -> "NodalField":
        return NodalField(values, self)

    def __repr__(self):
        return f"TriangularMesh(M={self.M}, T={self.n_triangles}, id={self.mesh_id})"


@dataclass(eq=False)
class NodalField:
    """Coefficients of a P1 function, one value per mesh node."""

    values: np.ndarray
    mesh: TriangularMesh = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.M,):
            raise ValueError(
                f"field has shape {self.values.shape}, mesh has {self.mesh.M} nodes")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    @property
    def mesh_id(self) -> str:
        return self.mesh.mesh_id

    def __call__(self, points) -> np.ndarray:
        return interpolate_many(self, points)

    def __len__(self):
        return len(self.values)


def _signed_areas(nodes: np.ndarray, tris: np.ndarray) -> np.ndarray:
    p0, p1, p2 = nodes[tris[:, 0]], nodes[tris[:, 1]], nodes[tris[:, 2]]
    return 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                  - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))


def _all_edges(tris: np.ndarray) -> np.ndarray:
    e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    return np.sort(e, axis=1)


def boundary_edges(tris: np.ndarray) -> np.ndarray:
    """Edges belonging to exactly one triangle."""
    e, counts = np.unique(_all_edges(np.asarray(tris)), axis=0, return_counts=True)
    if np.any(counts > 2):
        raise MeshError("non-conforming mesh: an edge is shared by more than two triangles")
    return e[counts == 1]


def _triangulate(points: np.ndarray) -> np.ndarray:
    tri = Delaunay(points).simplices.astype(np.int64)
    area = _signed_areas(points, tri)
    tri[area < 0] = tri[area < 0][:, [0, 2, 1]]
    area = np.abs(area)
    return tri[area > 1e-12 * area.max()]


def disk_node_count(rings: int) -> int:
    """Node-count target for which the disk builder uses exactly ``rings`` rings.

    Doubling ``rings`` halves the mesh size, which gives clean refinement
    sequences for convergence studies.
    """
    return int(round(1 + np.pi * rings * (rings + 1)))


def build_disk_mesh(target_node_count: int, radius: float = DISK_RADIUS) -> TriangularMesh:
    """Quasi-uniform triangulation of the disk of given radius centred at 0.

    Nodes are placed on concentric rings with spacing close to the radial
    step; the outer ring is the boundary. Very small targets (< 7) give a
    regular inscribed polygon without interior nodes.
    """
    target = int(target_node_count)
    if target < 3:
        raise MeshError("target_node_count must be at least 3")
    if target < 7:
        theta = 2 * np.pi * np.arange(target) / target + np.pi / 2
        pts = radius * np.column_stack([np.cos(theta), np.sin(theta)])
        return TriangularMesh(pts, _triangulate(pts), np.ones(target, dtype=bool))

    # 1 + sum_{k<=K} 2*pi*k*c ~= target with c close to 1
    K = max(1, int(round((-1 + np.sqrt(1 + 4 * (target - 1) / np.pi)) / 2)))
    c = (target - 1) / (np.pi * K * (K + 1))
    rings = [np.zeros((1, 2))]
    flags = [np.zeros(1, dtype=bool)]
    for k in range(1, K + 1):
        nk = max(6, int(round(2 * np.pi * k * c)))
        theta = 2 * np.pi * (np.arange(nk) + 0.5 * (k % 2)) / nk
        r = radius * k / K
        rings.append(r * np.column_stack([np.cos(theta), np.sin(theta)]))
        flags.append(np.full(nk, k == K))
    pts = np.concatenate(rings)
    boundary = np.concatenate(flags)
    mesh = TriangularMesh(pts, _triangulate(pts), boundary)
    logger.debug("built disk mesh with %d nodes (target %d)", mesh.M, target)
    return mesh


def build_polygon_mesh(vertices: Sequence[Sequence[float]], h: float) -> TriangularMesh:
    """Triangulate a convex polygon (vertices in order) with target edge length ``h``."""
    V = np.asarray(vertices, dtype=float)
    if len(V) < 3 or h <= 0:
        raise MeshError("need at least 3 vertices and h > 0")
    if _polygon_area(V) < 0:
        V = V[::-1]
    e = np.roll(V, -1, axis=0) - V
    en = np.roll(e, -1, axis=0)
    if np.min(e[:, 0] * en[:, 1] - e[:, 1] * en[:, 0]) <= 0:
        raise MeshError("build_polygon_mesh only handles strictly convex polygons; "
                        "load other domains from a mesh file")
    bpts = []
    for i in range(len(V)):
        a, b = V[i], V[(i + 1) % len(V)]
        m = max(1, int(np.ceil(np.linalg.norm(b - a) / h)))
        t = np.arange(m) / m
        bpts.append(a + t[:, None] * (b - a))
    bpts = np.concatenate(bpts)
    lo, hi = V.min(axis=0), V.max(axis=0)
    dy = h * np.sqrt(3) / 2
    rows = []
    for j, y in enumerate(np.arange(lo[1], hi[1] + dy, dy)):
        xs = np.arange(lo[0] + (j % 2) * h / 2, hi[0] + h, h)
        rows.append(np.column_stack([xs, np.full_like(xs, y)]))
    grid = np.concatenate(rows)
    grid = grid[_min_signed_distance(V, grid) > 0.5 * h]
    pts = np.concatenate([bpts, grid])
    boundary = np.zeros(len(pts), dtype=bool)
    boundary[: len(bpts)] = True
    return TriangularMesh(pts, _triangulate(pts), boundary)


def _polygon_area(V: np.ndarray) -> float:
    x, y = V[:, 0], V[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _min_signed_distance(V: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Distance to the nearest edge line of a CCW convex polygon, negative outside."""
    d = np.full(len(pts), np.inf)
    for i in range(len(V)):
        a, b = V[i], V[(i + 1) % len(V)]
        t = b - a
        n = np.array([-t[1], t[0]]) / np.linalg.norm(t)
        d = np.minimum(d, (pts - a) @ n)
    return d


class PointLocator:
    """Find the triangle containing each query point.

    Small meshes are scanned exhaustively; larger ones use a uniform grid of
    buckets holding the triangles whose bounding boxes overlap each cell.
    """

    def __init__(self, mesh: TriangularMesh, use_grid: Optional[bool] = None):
        self.mesh = mesh
        p = mesh.node_coords[mesh.triangles]
        self._p0 = p[:, 0]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        # rows of the inverse of [e1 e2]
        self._inv = np.stack([np.column_stack([e2[:, 1], -e2[:, 0]]),
                              np.column_stack([-e1[:, 1], e1[:, 0]])], axis=1) / det[:, None, None]
        self.use_grid = mesh.M > BRUTE_FORCE_MAX_NODES if use_grid is None else use_grid
        if self.use_grid:
            self._build_grid(p)

    def _build_grid(self, p: np.ndarray):
        lo = self.mesh.node_coords.min(axis=0)
        hi = self.mesh.node_coords.max(axis=0)
        n_cells = max(1, int(np.sqrt(self.mesh.n_triangles / 2)))
        self._lo = lo
        self._cell = (hi - lo).max() / n_cells * (1 + 1e-9)
        self._n = n_cells
        bmin = np.floor((p.min(axis=1) - lo) / self._cell).astype(int).clip(0, n_cells - 1)
        bmax = np.floor((p.max(axis=1) - lo) / self._cell).astype(int).clip(0, n_cells - 1)
        buckets: dict = {}
        for t in range(len(p)):
            for i in range(bmin[t, 0], bmax[t, 0] + 1):
                for j in range(bmin[t, 1], bmax[t, 1] + 1):
                    buckets.setdefault((i, j), []).append(t)
        self._buckets = {k: np.array(v) for k, v in buckets.items()}

    def _bary(self, tris: np.ndarray, x: np.ndarray) -> np.ndarray:
        l12 = np.einsum("tij,tj->ti", self._inv[tris], x - self._p0[tris])
        return np.column_stack([1.0 - l12.sum(axis=1), l12])

    def _candidates(self, x: np.ndarray) -> np.ndarray:
        if not self.use_grid:
            return np.arange(self.mesh.n_triangles)
        ij = np.floor((x - self._lo) / self._cell).astype(int)
        if np.any(ij < 0) or np.any(ij >= self._n):
            # allow points sitting on the bounding box edge
            ij = ij.clip(0, self._n - 1)
        return self._buckets.get(tuple(ij), np.empty(0, dtype=int))

    def locate_one(self, x) -> Optional[Tuple[int, np.ndarray]]:
        x = np.asarray(x, dtype=float)
        cand = self._candidates(x)
        if len(cand) == 0:
            return None
        lam = self._bary(cand, np.broadcast_to(x, (len(cand), 2)))
        best = int(np.argmax(lam.min(axis=1)))
        if lam[best].min() < -EDGE_TOL:
            return None
        w = lam[best].clip(0.0, 1.0)
        return int(cand[best]), w / w.sum()

    def _locate_dense(self, pts, tri, bary, chunk: int = 256):
        # all points of a chunk against all triangles at once
        inv = self._inv
        for s in range(0, len(pts), chunk):
            x = pts[s:s + chunk]
            dx = x[:, 0:1] - self._p0[:, 0]
            dy = x[:, 1:2] - self._p0[:, 1]
            l1 = inv[:, 0, 0] * dx + inv[:, 0, 1] * dy
            l2 = inv[:, 1, 0] * dx + inv[:, 1, 1] * dy
            lmin = np.minimum(np.minimum(l1, l2), 1.0 - l1 - l2)
            best = np.argmax(lmin, axis=1)
            rows = np.arange(len(x))
            ok = lmin[rows, best] >= -EDGE_TOL
            a, b = l1[rows, best], l2[rows, best]
            w = np.column_stack([1.0 - a - b, a, b]).clip(0.0, 1.0)
            w /= w.sum(axis=1, keepdims=True)
            idx = np.flatnonzero(ok) + s
            tri[idx] = best[ok]
            bary[idx] = w[ok]

    def locate(self, points) -> Tuple[np.ndarray, np.ndarray]:
        """Return triangle indices (-1 when outside) and (N, 3) barycentric weights."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        tri = np.full(len(pts), -1, dtype=np.int64)
        bary = np.full((len(pts), 3), np.nan)
        if not self.use_grid:
            self._locate_dense(pts, tri, bary)
            return tri, bary
        for i, x in enumerate(pts):
            hit = self.locate_one(x)
            if hit is not None:
                tri[i], bary[i] = hit
        return tri, bary


def locate_point(mesh: TriangularMesh, x) -> Optional[Tuple[int, np.ndarray]]:
    """Triangle index and barycentric weights of ``x``, or None outside the domain."""
    return mesh._locator.locate_one(x)


def interpolation_matrix(mesh: TriangularMesh, points):
    """Sparse (N, M) matrix P with (P @ values)[i] the P1 interpolant at point i."""
    from scipy.sparse import csr_matrix

    pts = np.atleast_2d(np.asarray(points, dtype=float))
    tri, bary = mesh.locate(pts)
    outside = np.flatnonzero(tri < 0)
    if len(outside):
        raise OutsideDomainError(int(outside[0]), pts[outside[0]])
    rows = np.repeat(np.arange(len(pts)), 3)
    cols = mesh.triangles[tri].ravel()
    return csr_matrix((bary.ravel(), (rows, cols)), shape=(len(pts), mesh.M))


def interpolate(field: NodalField, x) -> float:
    """Value of the P1 function at a single point."""
    hit = locate_point(field.mesh, x)
    if hit is None:
        raise OutsideDomainError(0, x)
    t, w = hit
    return float(w @ field.values[field.mesh.triangles[t]])


def interpolate_many(field: NodalField, points) -> np.ndarray:
    return interpolation_matrix(field.mesh, points) @ field.values


def write_mesh(mesh: TriangularMesh, path: Union[str, Path]) -> None:
    lines = [f"nodes {mesh.M} triangles {mesh.n_triangles}"]
    lines += [f"{x!r} {y!r} {int(b)}" for (x, y), b in zip(mesh.node_coords.tolist(), mesh.boundary)]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path: Union[str, Path]) -> TriangularMesh:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != "nodes" or header[2] != "triangles":
            raise MeshError(f"{path}: bad header {' '.join(header)!r}")
        M, T = int(header[1]), int(header[3])
        body = np.loadtxt(fh, ndmin=2) if M + T else np.empty((0, 3))
    if len(body) != M + T:
        raise MeshError(f"{path}: expected {M + T} data lines, found {len(body)}")
    nodes = body[:M, :2]
    boundary = body[:M, 2].astype(bool)
    tris = body[M:].astype(np.int64)
    return TriangularMesh(nodes, tris, boundary)
