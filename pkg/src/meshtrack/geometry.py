"""Planar geometry: segment intersection, mesh topology, density maps.

Points are continuous image coordinates ``(x, y)`` with pixel centers at
integer positions; grids are row-major numpy arrays indexed ``[y, x]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

# Below this |cross(d1, d2)| the segments count as parallel/collinear.
EPS_DENOM = 1e-12
# Open-interval margin on alpha/beta so exact shared endpoints never hit.
EPS_PARAM = 1e-9


@dataclass(frozen=True)
class IntersectionResult:
    """Outcome of a segment-pair crossing test.

    ``alpha`` and ``beta`` are the parametric positions of the crossing on
    the first and second segment; they are NaN when the segments are
    parallel or collinear.
    """

    hit: bool
    alpha: float
    beta: float


def _as_segment(seg) -> np.ndarray:
    s = np.asarray(seg, dtype=float)
    if s.shape != (2, 2):
        raise ValueError(f"segment must be a 2x2 point pair, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ValueError("segment coordinates must be finite")
    if np.all(s[0] == s[1]):
        raise ValueError("segment endpoints must be distinct")
    return s


def segment_pairs_intersect(a1, a2, b1, b2, eps: float = EPS_DENOM,
                            margin: float = EPS_PARAM):
    """Vectorized proper-crossing test for stacked segment pairs.

    a1, a2, b1, b2 : (M, 2) arrays of endpoints.

    Returns (hit, alpha, beta) arrays of shape (M,). A pair hits when the
    direction cross product exceeds ``eps`` in magnitude and both
    parameters lie strictly inside (margin, 1 - margin). alpha/beta are
    NaN for parallel-or-collinear pairs.
    """
    a1 = np.asarray(a1, dtype=float)
    a2 = np.asarray(a2, dtype=float)
    b1 = np.asarray(b1, dtype=float)
    b2 = np.asarray(b2, dtype=float)
    d1 = a2 - a1
    d2 = b2 - b1
    denom = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
    ok = np.abs(denom) > eps
    safe = np.where(ok, denom, 1.0)
    w = b1 - a1
    alpha = (w[..., 0] * d2[..., 1] - w[..., 1] * d2[..., 0]) / safe
    beta = (w[..., 0] * d1[..., 1] - w[..., 1] * d1[..., 0]) / safe
    alpha = np.where(ok, alpha, np.nan)
    beta = np.where(ok, beta, np.nan)
    hit = ok & (alpha > margin) & (alpha < 1.0 - margin) \
             & (beta > margin) & (beta < 1.0 - margin)
    return hit, alpha, beta


def segment_intersect(seg1, seg2, eps: float = EPS_DENOM) -> IntersectionResult:
    """Test whether two segments properly cross.

    Solves p1 + alpha*(p2-p1) = p3 + beta*(p4-p3) with the 2D scalar cross
    product; parallel/collinear pairs (|denominator| <= eps) never hit,
    and alpha/beta are confined to a strictly open unit interval so that
    segments sharing an endpoint do not count as crossing.
    """
    s1 = _as_segment(seg1)
    s2 = _as_segment(seg2)
    hit, alpha, beta = segment_pairs_intersect(
        s1[0][None], s1[1][None], s2[0][None], s2[1][None], eps=eps)
    return IntersectionResult(bool(hit[0]), float(alpha[0]), float(beta[0]))


class MeshTopology:
    """Shared connectivity of an evolving triangle mesh.

    Vertices are integers ``0..N-1``. Edges are unordered index pairs,
    faces are index triples, and the patch of a vertex is itself plus its
    edge neighbors.
    """

    def __init__(self, vertex_count: int, edges, faces=()):
        self.vertex_count = int(vertex_count)
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        if edges.size and (edges.min() < 0 or edges.max() >= self.vertex_count):
            raise ValueError("edge index out of range")
        if faces.size and (faces.min() < 0 or faces.max() >= self.vertex_count):
            raise ValueError("face index out of range")
        # canonical form: sorted pairs, deduplicated, lexicographic order
        edges = np.sort(edges, axis=1)
        self.edges = np.unique(edges, axis=0) if edges.size else edges
        self.faces = faces
        if faces.size:
            face_edges = np.sort(np.concatenate([faces[:, [0, 1]],
                                                 faces[:, [1, 2]],
                                                 faces[:, [0, 2]]]), axis=1)
            present = {tuple(e) for e in self.edges}
            missing = {tuple(e) for e in np.unique(face_edges, axis=0)} - present
            if missing:
                raise ValueError(f"faces reference edges not in edge list: {sorted(missing)[:3]}")
        self._neighbors = [[] for _ in range(self.vertex_count)]
        for i, j in self.edges:
            self._neighbors[i].append(j)
            self._neighbors[j].append(i)
        self.neighbors = [np.array(sorted(n), dtype=np.int64) for n in self._neighbors]
        self.patch_sizes = np.array([len(n) + 1 for n in self.neighbors], dtype=np.int64)
        if np.any(self.patch_sizes < 2):
            raise ValueError("every vertex must have at least one neighbor")
        self._patch_sum = None
        self._patch_avg = None

    @classmethod
    def from_faces(cls, vertex_count: int, faces) -> "MeshTopology":
        faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [0, 2]]])
        return cls(vertex_count, edges, faces)

    def patch(self, i: int) -> np.ndarray:
        """Vertex i plus its edge-adjacent neighbors."""
        return np.concatenate(([i], self.neighbors[i]))

    @property
    def patch_sum_matrix(self) -> sparse.csr_matrix:
        """CSR matrix S with S[i, j] = 1 for j in patch(i)."""
        if self._patch_sum is None:
            rows = np.repeat(np.arange(self.vertex_count), self.patch_sizes)
            cols = np.concatenate([self.patch(i) for i in range(self.vertex_count)])
            data = np.ones(len(cols))
            self._patch_sum = sparse.csr_matrix(
                (data, (rows, cols)),
                shape=(self.vertex_count, self.vertex_count))
        return self._patch_sum

    @property
    def patch_average_matrix(self) -> sparse.csr_matrix:
        """CSR matrix A with A[i, j] = 1/|patch(i)| for j in patch(i)."""
        if self._patch_avg is None:
            scale = sparse.diags(1.0 / self.patch_sizes)
            self._patch_avg = (scale @ self.patch_sum_matrix).tocsr()
        return self._patch_avg

    def __eq__(self, other):
        return (isinstance(other, MeshTopology)
                and self.vertex_count == other.vertex_count
                and np.array_equal(self.edges, other.edges)
                and np.array_equal(self.faces, other.faces))

    def __repr__(self):
        return (f"MeshTopology(vertices={self.vertex_count}, "
                f"edges={len(self.edges)}, faces={len(self.faces)})")


@dataclass
class MeshState:
    """Vertex positions of one frame over a fixed topology."""

    topology: MeshTopology
    positions: np.ndarray  # (N, 2) float, (x, y)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        if self.positions.shape != (self.topology.vertex_count, 2):
            raise ValueError(
                f"positions shape {self.positions.shape} does not match "
                f"{self.topology.vertex_count} vertices")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("vertex positions must be finite")

    def with_positions(self, positions) -> "MeshState":
        return MeshState(self.topology, np.asarray(positions, dtype=float))

    def edge_lengths(self) -> np.ndarray:
        e = self.topology.edges
        d = self.positions[e[:, 0]] - self.positions[e[:, 1]]
        return np.hypot(d[:, 0], d[:, 1])


def longest_edge(mesh: MeshState) -> float:
    """Length of the longest mesh edge."""
    if len(mesh.topology.edges) == 0:
        raise ValueError("mesh has no edges")
    return float(mesh.edge_lengths().max())


def vertex_density_map(mesh: MeshState, mask, radius: float) -> np.ndarray:
    """Per-pixel count of mesh vertices within ``radius``, inside the mask.

    Returns an (H, W) float grid holding counts on silhouette-interior
    pixels and -1.0 elsewhere.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    bits = mask.bits
    out = np.full(bits.shape, -1.0)
    inside = np.argwhere(bits)  # (K, 2) rows of (y, x)
    if len(inside) == 0:
        return out
    pts = inside[:, ::-1].astype(float)  # (x, y)
    if len(mesh.positions) == 0:
        counts = np.zeros(len(pts))
    else:
        tree = cKDTree(mesh.positions)
        counts = tree.query_ball_point(pts, r=radius, return_length=True)
    out[inside[:, 0], inside[:, 1]] = counts
    return out


def candidate_edge_pairs(positions: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Index pairs (i < j) of edges whose bounding boxes overlap.

    Uses a uniform grid with cell size equal to the longest edge extent, so
    each edge lands in a handful of cells; exact crossing tests run on the
    returned candidates only.
    """
    if len(edges) < 2:
        return np.empty((0, 2), dtype=np.int64)
    p = positions[edges]            # (E, 2, 2)
    lo = p.min(axis=1)              # (E, 2)
    hi = p.max(axis=1)
    cell = float(max((hi - lo).max(), 1e-9))
    origin = lo.min(axis=0)
    lo_c = np.floor((lo - origin) / cell).astype(np.int64)
    hi_c = np.floor((hi - origin) / cell).astype(np.int64)
    buckets: dict[tuple[int, int], list[int]] = {}
    for e in range(len(edges)):
        for cx in range(lo_c[e, 0], hi_c[e, 0] + 1):
            for cy in range(lo_c[e, 1], hi_c[e, 1] + 1):
                buckets.setdefault((cx, cy), []).append(e)
    pairs = set()
    for members in buckets.values():
        if len(members) < 2:
            continue
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                i, j = members[a], members[b]
                pairs.add((i, j) if i < j else (j, i))
    if not pairs:
        return np.empty((0, 2), dtype=np.int64)
    cand = np.array(sorted(pairs), dtype=np.int64)
    i, j = cand[:, 0], cand[:, 1]
    overlap = ((lo[i] <= hi[j]) & (lo[j] <= hi[i])).all(axis=1)
    return cand[overlap]
