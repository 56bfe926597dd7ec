"""Unstructured triangle meshes on the unit square with optional obstacles.

Meshes are generated as a structured grid with bounded random jitter,
obstacle-interior points removed and replaced by a ring of nodes exactly on
the obstacle boundary, then Delaunay-triangulated.  Node positions are
immutable after construction.  Cross-mesh transfer uses barycentric (P1)
interpolation with point location against the source triangulation.

Parameters
----------
Coordinates live in [0, size]^2.  A node is typed Boundary iff it lies on
the outer square or on an obstacle boundary within tolerance 1e-9; the
constructor validates this classification.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import Delaunay, cKDTree

from .util import (
    MAGIC_MESH,
    FORMAT_VERSION,
    ArtifactFormatError,
    atomic_write_text,
    rng_for,
)

BOUNDARY_TOL = 1e-9

INTERIOR = 0
BOUNDARY = 1


class MeshError(ValueError):
    pass


class InterpolationError(ValueError):
    pass


@dataclass(frozen=True)
class Obstacle:
    """Parametric hole: a disk or an axis-rotated ellipse."""

    kind: str  # "disk" | "ellipse"
    cx: float
    cy: float
    rx: float
    ry: float
    angle: float = 0.0

    def __post_init__(self):
        if self.kind not in ("disk", "ellipse"):
            raise MeshError(f"unknown obstacle kind {self.kind!r}")
        if self.rx <= 0 or self.ry <= 0:
            raise MeshError("obstacle radii must be positive")

    @staticmethod
    def disk(cx: float, cy: float, r: float) -> "Obstacle":
        return Obstacle("disk", cx, cy, r, r)

    @staticmethod
    def ellipse(cx: float, cy: float, rx: float, ry: float,
                angle: float = 0.0) -> "Obstacle":
        return Obstacle("ellipse", cx, cy, rx, ry, angle)

    def _local(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        dx = points[:, 0] - self.cx
        dy = points[:, 1] - self.cy
        c, s = math.cos(self.angle), math.sin(self.angle)
        return dx * c + dy * s, -dx * s + dy * c

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        """Approximate signed distance, negative inside, exact for disks."""
        points = np.atleast_2d(points)
        u, v = self._local(points)
        if self.kind == "disk":
            return np.hypot(u, v) - self.rx
        q = (u / self.rx) ** 2 + (v / self.ry) ** 2 - 1.0
        gx = 2.0 * u / self.rx**2
        gy = 2.0 * v / self.ry**2
        gn = np.hypot(gx, gy)
        # first-order distance; deep inside the gradient vanishes, so fall
        # back to a crude but safely negative estimate there
        return np.where(gn > 1e-9, q / np.maximum(gn, 1e-9),
                        q * min(self.rx, self.ry) / 2.0)

    def perimeter(self) -> float:
        if self.kind == "disk":
            return 2.0 * math.pi * self.rx
        a, b = self.rx, self.ry
        h = (a - b) ** 2 / (a + b) ** 2
        return math.pi * (a + b) * (1.0 + 3 * h / (10 + math.sqrt(4 - 3 * h)))

    def area(self) -> float:
        return math.pi * self.rx * self.ry

    def ring_points(self, spacing: float) -> np.ndarray:
        count = max(12, int(math.ceil(self.perimeter() / spacing)))
        phi = 2.0 * math.pi * np.arange(count) / count
        u = self.rx * np.cos(phi)
        v = self.ry * np.sin(phi)
        c, s = math.cos(self.angle), math.sin(self.angle)
        return np.column_stack(
            (self.cx + u * c - v * s, self.cy + u * s + v * c)
        )


@dataclass(frozen=True)
class MeshSpec:
    target_nodes: int
    obstacle: Obstacle | None = None
    seed: int = 0
    jitter: float = 0.3  # fraction of grid spacing, applied to interior nodes
    size: float = 1.0


@dataclass
class Mesh:
    nodes: np.ndarray       # (N, 2) float64
    triangles: np.ndarray   # (M, 3) int64, counter-clockwise
    node_type: np.ndarray   # (N,) int64, INTERIOR or BOUNDARY
    obstacle: Obstacle | None = None
    size: float = 1.0

    def __post_init__(self):
        self.nodes = np.ascontiguousarray(self.nodes, dtype=np.float64)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        self.node_type = np.ascontiguousarray(self.node_type, dtype=np.int64)
        self._validate()
        for arr in (self.nodes, self.triangles, self.node_type):
            arr.flags.writeable = False

    # -- invariants ---------------------------------------------------------

    def _validate(self):
        n = len(self.nodes)
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 2:
            raise MeshError(f"nodes must be (N, 2), got {self.nodes.shape}")
        if n < 3 or len(self.triangles) < 1:
            raise MeshError("mesh needs at least 3 nodes and 1 triangle")
        if self.triangles.min() < 0 or self.triangles.max() >= n:
            raise MeshError("triangle references a node out of range")
        areas = triangle_areas(self.nodes, self.triangles)
        if np.any(areas <= 1e-12):
            bad = int(np.argmin(areas))
            raise MeshError(
                f"degenerate triangle {bad} with area {areas[bad]:.3e}"
            )
        referenced = np.zeros(n, dtype=bool)
        referenced[self.triangles.ravel()] = True
        if not referenced.all():
            orphans = np.flatnonzero(~referenced)
            raise MeshError(f"nodes not referenced by any triangle: {orphans}")
        expected = self._classify(self.nodes)
        if not np.array_equal(expected, self.node_type):
            bad = np.flatnonzero(expected != self.node_type)
            raise MeshError(
                f"node_type disagrees with geometry at nodes {bad[:10]}"
            )

    def _classify(self, points: np.ndarray) -> np.ndarray:
        x, y = points[:, 0], points[:, 1]
        on_outer = (
            (np.abs(x) <= BOUNDARY_TOL)
            | (np.abs(x - self.size) <= BOUNDARY_TOL)
            | (np.abs(y) <= BOUNDARY_TOL)
            | (np.abs(y - self.size) <= BOUNDARY_TOL)
        )
        if self.obstacle is not None:
            on_obstacle = (
                np.abs(self.obstacle.signed_distance(points)) <= BOUNDARY_TOL
            )
            on_outer = on_outer | on_obstacle
        return on_outer.astype(np.int64)

    # -- convenience --------------------------------------------------------

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def boundary_mask(self) -> np.ndarray:
        return self.node_type == BOUNDARY

    @property
    def interior_mask(self) -> np.ndarray:
        return self.node_type == INTERIOR

    def mean_edge_length(self) -> float:
        e = build_edges(self)
        return float(e.features[:, 2].mean())


def triangle_areas(nodes: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = nodes[triangles]
    return 0.5 * np.abs(
        (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
        - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
    )


# ---------------------------------------------------------------------------
# generation


def _grid_side(spec: MeshSpec) -> int:
    t = float(spec.target_nodes)
    if spec.obstacle is None:
        return max(2, round(math.sqrt(t)))
    # solve n^2 (1 - hole_fraction) + perimeter * n / size ~ target so the
    # final count lands near the target after removal plus ring insertion
    a = 1.0 - spec.obstacle.area() / spec.size**2
    p = spec.obstacle.perimeter() / spec.size
    n = (-p + math.sqrt(p * p + 4.0 * a * t)) / (2.0 * a)
    return max(2, round(n))


def generate_mesh(spec: MeshSpec) -> Mesh:
    """Jittered structured grid, Delaunay-triangulated around the obstacle.

    Deterministic for a fixed spec (jitter is the only random input and is
    drawn from the spec seed).
    """
    if spec.target_nodes < 9:
        raise MeshError(f"target_nodes {spec.target_nodes} < 9")
    if not (0.0 <= spec.jitter <= 0.3):
        raise MeshError(f"jitter {spec.jitter} outside [0, 0.3]")
    n_side = _grid_side(spec)
    h = spec.size / (n_side - 1)

    ax = np.linspace(0.0, spec.size, n_side)
    gx, gy = np.meshgrid(ax, ax, indexing="xy")
    points = np.column_stack((gx.ravel(), gy.ravel()))
    ii, jj = np.meshgrid(np.arange(n_side), np.arange(n_side), indexing="xy")
    interior = (
        (ii.ravel() > 0) & (ii.ravel() < n_side - 1)
        & (jj.ravel() > 0) & (jj.ravel() < n_side - 1)
    )
    if spec.jitter > 0.0:
        rng = rng_for(spec.seed, "mesh/jitter")
        shift = rng.uniform(-spec.jitter * h, spec.jitter * h,
                            size=(int(interior.sum()), 2))
        points[interior] += shift

    obstacle = spec.obstacle
    if obstacle is not None:
        margin = 2.0 * h
        lo = min(obstacle.cx - obstacle.rx, obstacle.cy - obstacle.ry)
        hi = max(obstacle.cx + obstacle.rx, obstacle.cy + obstacle.ry)
        if lo < margin or hi > spec.size - margin:
            raise MeshError(
                "obstacle too large or too close to the outer boundary "
                f"to triangulate (needs {margin:.3g} clearance)"
            )
        sd = obstacle.signed_distance(points)
        points = points[sd > 0.45 * h]
        ring = obstacle.ring_points(h)
        points = np.vstack((points, ring))

    tri = Delaunay(points)
    simplices = tri.simplices.astype(np.int64)
    if obstacle is not None:
        centroids = points[simplices].mean(axis=1)
        simplices = simplices[obstacle.signed_distance(centroids) > 0.0]
    areas = triangle_areas(points, simplices)
    simplices = simplices[areas > 1e-12]

    referenced = np.zeros(len(points), dtype=bool)
    referenced[simplices.ravel()] = True
    if not referenced.all():
        raise MeshError(
            "triangulation left orphan nodes; obstacle geometry is too "
            "tight for the requested resolution"
        )

    node_type = _classify_points(points, obstacle, spec.size)
    return Mesh(points, simplices, node_type, obstacle, spec.size)


def _classify_points(points, obstacle, size) -> np.ndarray:
    x, y = points[:, 0], points[:, 1]
    on = (
        (np.abs(x) <= BOUNDARY_TOL)
        | (np.abs(x - size) <= BOUNDARY_TOL)
        | (np.abs(y) <= BOUNDARY_TOL)
        | (np.abs(y - size) <= BOUNDARY_TOL)
    )
    if obstacle is not None:
        on = on | (np.abs(obstacle.signed_distance(points)) <= BOUNDARY_TOL)
    return on.astype(np.int64)


# ---------------------------------------------------------------------------
# edges


@dataclass
class EdgeList:
    senders: np.ndarray    # (E,) int64
    receivers: np.ndarray  # (E,) int64
    features: np.ndarray   # (E, 3) float64: dx, dy, norm (receiver - sender)

    def __post_init__(self):
        for arr in (self.senders, self.receivers, self.features):
            arr.flags.writeable = False

    @property
    def num_edges(self) -> int:
        return len(self.senders)


def build_edges(mesh: Mesh) -> EdgeList:
    """Directed edge list (both directions of every triangle side)."""
    t = mesh.triangles
    pairs = np.vstack((t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]))
    lo = pairs.min(axis=1)
    hi = pairs.max(axis=1)
    undirected = np.unique(lo * len(mesh.nodes) + hi)
    lo = undirected // len(mesh.nodes)
    hi = undirected % len(mesh.nodes)
    senders = np.concatenate((lo, hi))
    receivers = np.concatenate((hi, lo))
    disp = mesh.nodes[receivers] - mesh.nodes[senders]
    norm = np.hypot(disp[:, 0], disp[:, 1])[:, None]
    return EdgeList(senders.astype(np.int64), receivers.astype(np.int64),
                    np.hstack((disp, norm)))


# ---------------------------------------------------------------------------
# boundary distance


def boundary_distance(mesh: Mesh) -> np.ndarray:
    """Shortest-path distance along mesh edges to the nearest Boundary node.

    Multi-source Dijkstra with Euclidean edge lengths as weights; exact
    zeros at boundary nodes.  Raises if any node is disconnected from the
    boundary.
    """
    sources = np.flatnonzero(mesh.boundary_mask)
    if len(sources) == 0:
        raise MeshError("mesh has no boundary nodes")
    edges = build_edges(mesh)
    n = mesh.num_nodes
    graph = sparse.csr_matrix(
        (edges.features[:, 2], (edges.senders, edges.receivers)), shape=(n, n)
    )
    dist = dijkstra(graph, directed=False, indices=sources, min_only=True)
    if not np.all(np.isfinite(dist)):
        bad = np.flatnonzero(~np.isfinite(dist))
        raise MeshError(f"nodes disconnected from the boundary: {bad[:10]}")
    return dist


# ---------------------------------------------------------------------------
# interpolation


@dataclass
class Interpolator:
    """Precomputed P1 transfer from a source mesh onto target points."""

    triangles: np.ndarray  # (Nd,) triangle index per target point
    weights: np.ndarray    # (Nd, 3) barycentric weights (clamped if snapped)
    source_triangles: np.ndarray  # (M, 3) copy of source connectivity

    def apply(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        corner = values[self.source_triangles[self.triangles]]  # (Nd,3[,k])
        if values.ndim == 1:
            return (self.weights * corner).sum(axis=1)
        return (self.weights[:, :, None] * corner).sum(axis=1)


def _point_triangle_distance(points, tri_nodes):
    """Distance from points (P,2) to triangles (P,3,2), vectorized."""
    best = np.full(len(points), np.inf)
    for a_i, b_i in ((0, 1), (1, 2), (2, 0)):
        a = tri_nodes[:, a_i]
        b = tri_nodes[:, b_i]
        ab = b - a
        denom = np.maximum((ab * ab).sum(axis=1), 1e-300)
        t = np.clip(((points - a) * ab).sum(axis=1) / denom, 0.0, 1.0)
        proj = a + t[:, None] * ab
        d = np.hypot(*(points - proj).T)
        best = np.minimum(best, d)
    return best


def build_interpolator(src: Mesh, targets: np.ndarray,
                       tol: float = 1e-6) -> Interpolator:
    """Locate target points in the source triangulation.

    Points inside a triangle get exact barycentric weights.  Points outside
    every triangle but within ``tol`` of the nearest one are snapped: their
    negative weights are clamped to zero and renormalized.  Anything farther
    raises InterpolationError naming the offending points.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    tris = src.triangles
    corners = src.nodes[tris]  # (M, 3, 2)
    origin = corners[:, 0]
    e1 = corners[:, 1] - origin
    e2 = corners[:, 2] - origin
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    inv = np.empty((len(tris), 2, 2))
    inv[:, 0, 0] = e2[:, 1] / det
    inv[:, 0, 1] = -e2[:, 0] / det
    inv[:, 1, 0] = -e1[:, 1] / det
    inv[:, 1, 1] = e1[:, 0] / det

    def bary_for(pts, cand):
        # pts (P,2), cand (P,K) triangle ids -> (P,K,3) barycentric coords
        diff = pts[:, None, :] - origin[cand]
        lam = np.einsum("pkij,pkj->pki", inv[cand], diff)
        lam0 = 1.0 - lam.sum(axis=2, keepdims=True)
        return np.concatenate((lam0, lam), axis=2)

    k = min(12, len(tris))
    tree = cKDTree(corners.mean(axis=1))
    _, cand = tree.query(targets, k=k)
    cand = np.atleast_2d(cand)
    if cand.ndim == 1:
        cand = cand[:, None]
    if k == 1:
        cand = cand.reshape(-1, 1)

    bary = bary_for(targets, cand)
    score = bary.min(axis=2)           # (P, K)
    best = np.argmax(score, axis=1)
    rows = np.arange(len(targets))
    tri_idx = cand[rows, best]
    weights = bary[rows, best]
    inside = score[rows, best] >= -1e-12

    missing = np.flatnonzero(~inside)
    if missing.size:
        # candidate list may have missed the containing triangle; brute force
        all_cand = np.broadcast_to(
            np.arange(len(tris)), (missing.size, len(tris))
        )
        bary_all = bary_for(targets[missing], all_cand)
        score_all = bary_all.min(axis=2)
        best_all = np.argmax(score_all, axis=1)
        r = np.arange(missing.size)
        tri_idx[missing] = best_all
        weights[missing] = bary_all[r, best_all]
        found = score_all[r, best_all] >= -1e-12
        inside[missing[found]] = True

    outside = np.flatnonzero(~inside)
    if outside.size:
        # snap to the geometrically nearest triangle among all of them
        pts = targets[outside]
        dists = np.empty((outside.size, len(tris)))
        for j in range(len(tris)):
            dists[:, j] = _point_triangle_distance(
                pts, np.broadcast_to(corners[j], (outside.size, 3, 2))
            )
        nearest = np.argmin(dists, axis=1)
        nearest_d = dists[np.arange(outside.size), nearest]
        too_far = nearest_d > tol
        if np.any(too_far):
            bad = outside[too_far]
            detail = ", ".join(
                f"{i} (d={d:.3e})"
                for i, d in zip(bad[:8], nearest_d[too_far][:8])
            )
            raise InterpolationError(
                f"{bad.size} target points farther than tol={tol:g} from "
                f"every source triangle: {detail}"
            )
        tri_idx[outside] = nearest
        lam = bary_for(pts, nearest[:, None])[:, 0, :]
        lam = np.maximum(lam, 0.0)
        weights[outside] = lam / lam.sum(axis=1, keepdims=True)

    return Interpolator(tri_idx.astype(np.int64), weights, tris)


def interpolate(values: np.ndarray, src: Mesh, dst: Mesh,
                tol: float = 1e-6) -> np.ndarray:
    """P1-interpolate nodal values from ``src`` onto ``dst``'s nodes."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] != src.num_nodes:
        raise InterpolationError(
            f"values have {values.shape[0]} rows, source mesh has "
            f"{src.num_nodes} nodes"
        )
    return build_interpolator(src, dst.nodes, tol=tol).apply(values)


# ---------------------------------------------------------------------------
# file format (text, 17 significant digits, bit-exact round trip)


def save_mesh(mesh: Mesh, path) -> None:
    lines = [MAGIC_MESH.decode(), f"version {FORMAT_VERSION}",
             f"size {mesh.size:.17g}", f"nodes {mesh.num_nodes}"]
    for x, y in mesh.nodes:
        lines.append(f"{x:.17g} {y:.17g}")
    lines.append(f"triangles {len(mesh.triangles)}")
    for a, b, c in mesh.triangles:
        lines.append(f"{a} {b} {c}")
    lines.append("node_type " + " ".join(str(t) for t in mesh.node_type))
    if mesh.obstacle is None:
        lines.append("obstacle none")
    else:
        o = mesh.obstacle
        lines.append(
            f"obstacle {o.kind} {o.cx:.17g} {o.cy:.17g} "
            f"{o.rx:.17g} {o.ry:.17g} {o.angle:.17g}"
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_mesh(path) -> Mesh:
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f]
    it = iter(lines)
    if next(it, None) != MAGIC_MESH.decode():
        raise ArtifactFormatError(f"{path}: bad magic")
    ver = next(it, "")
    if ver != f"version {FORMAT_VERSION}":
        raise ArtifactFormatError(f"{path}: unsupported {ver!r}")
    size = float(next(it).split()[1])
    n = int(next(it).split()[1])
    nodes = np.array(
        [[float(v) for v in next(it).split()] for _ in range(n)]
    )
    m = int(next(it).split()[1])
    triangles = np.array(
        [[int(v) for v in next(it).split()] for _ in range(m)], dtype=np.int64
    )
    node_type = np.array(next(it).split()[1:], dtype=np.int64)
    obs_parts = next(it).split()
    if obs_parts[1] == "none":
        obstacle = None
    else:
        obstacle = Obstacle(obs_parts[1], *(float(v) for v in obs_parts[2:]))
    return Mesh(nodes, triangles, node_type, obstacle, size)
