"""Reference mesh generation: uniform sampling of the first silhouette.

Deterministic variant of the classic force-equilibrium mesher: hexagonal
lattice seeding, repulsive bar forces on Delaunay edges, gradient projection
of escaped points back to the silhouette boundary.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.spatial import Delaunay, cKDTree

from .errors import MeshGenerationError
from .geometry import MeshState, MeshTopology
from .silhouette import (DistanceField, SilhouetteMask, nearest_inside_pixel,
                         points_inside, sample_distance, signed_distance)

FORCE_SCALE = 1.2      # rest length of the repulsive bars, in units of h0
STEP = 0.2             # force-to-displacement factor per iteration
RETRI_TOL = 0.1        # retriangulate when cumulative motion exceeds this * h0
SEED_DEPTH = 0.25      # lattice points shallower than h0/4 inside are rejected
SLIVER_EDGE = 2.5      # faces with an edge beyond this * h0 are slivers


@dataclass
class MeshGenParams:
    target_vertex_count: int = 300
    max_relax_iters: int = 150
    move_tolerance: float | None = None  # defaults to 0.01 * h0
    h0: float | None = None              # nominal edge length; derived if None

    def __post_init__(self):
        if self.target_vertex_count < 4:
            raise ValueError("target_vertex_count must be >= 4")
        if self.max_relax_iters < 1:
            raise ValueError("max_relax_iters must be >= 1")


def _hex_lattice(mask: SilhouetteMask, dfield: DistanceField, h0: float) -> np.ndarray:
    ys, xs = np.nonzero(mask.bits)
    x0, x1 = xs.min(), xs.max()
    y0, y1 = ys.min(), ys.max()
    dy = h0 * math.sqrt(3.0) / 2.0
    rows = np.arange(y0, y1 + dy, dy)
    cols = np.arange(x0, x1 + h0, h0)
    xx, yy = np.meshgrid(cols, rows)
    xx[1::2] += h0 / 2.0  # offset alternate rows
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    depth = sample_distance(dfield, pts)
    return pts[depth <= -h0 * SEED_DEPTH]


def _seed_points(mask, dfield, h0: float, target: int):
    """Seed a lattice, nudging h0 so the seed count lands near target."""
    pts = _hex_lattice(mask, dfield, h0)
    for _ in range(3):
        if len(pts) >= 4 and abs(len(pts) - target) <= 0.05 * target:
            break
        if len(pts) == 0:
            h0 *= 0.5
        else:
            h0 *= math.sqrt(len(pts) / target)
        pts = _hex_lattice(mask, dfield, h0)
    return pts, h0


def _coverage_gap(mask: SilhouetteMask, pts: np.ndarray) -> float:
    """Largest distance from a figure pixel to its nearest seed point."""
    if len(pts) == 0:
        return math.inf
    inside = np.argwhere(mask.bits)[:, ::-1].astype(float)
    dist, _ = cKDTree(pts).query(inside)
    return float(dist.max())


def _distance_gradient(dfield: DistanceField, pts: np.ndarray, step: float = 0.5):
    ex = np.array([step, 0.0])
    ey = np.array([0.0, step])
    gx = (sample_distance(dfield, pts + ex) - sample_distance(dfield, pts - ex)) / (2 * step)
    gy = (sample_distance(dfield, pts + ey) - sample_distance(dfield, pts - ey)) / (2 * step)
    return np.stack([gx, gy], axis=1)


def _project_outside_in(dfield: DistanceField, pts: np.ndarray) -> np.ndarray:
    d = sample_distance(dfield, pts)
    out = d > 0
    if not out.any():
        return pts
    g = _distance_gradient(dfield, pts[out])
    norm2 = np.maximum((g * g).sum(axis=1), 1e-12)
    pts = pts.copy()
    pts[out] -= g * (d[out] / norm2)[:, None]
    return pts


def _interior_faces(mask: SilhouetteMask, pts: np.ndarray, simplices: np.ndarray):
    """Triangles whose centroid and edge midpoints all lie inside the mask.

    The centroid test alone keeps skinny triangles bridging the gap between
    nearby limbs (two vertices on one limb pull the centroid inside); the
    midpoint test rejects any triangle with an edge crossing background.
    """
    corners = pts[simplices]  # (F, 3, 2)
    keep = points_inside(mask, corners.mean(axis=1))
    for i, j in ((0, 1), (1, 2), (0, 2)):
        mids = 0.5 * (corners[:, i] + corners[:, j])
        keep &= points_inside(mask, mids)
    return simplices[keep]


def _faces_to_edges(faces: np.ndarray) -> np.ndarray:
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [0, 2]]])
    return np.unique(np.sort(e, axis=1), axis=0)


def _largest_component(n: int, faces: np.ndarray):
    """Keep vertices of the largest edge-connected face component."""
    edges = _faces_to_edges(faces)
    adj = sparse.coo_matrix(
        (np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n))
    ncomp, labels = csgraph.connected_components(adj + adj.T, directed=False)
    used = np.zeros(n, dtype=bool)
    used[np.unique(faces)] = True
    counts = np.bincount(labels[used], minlength=ncomp)
    keep_label = counts.argmax()
    keep = used & (labels == keep_label)
    remap = -np.ones(n, dtype=np.int64)
    remap[keep] = np.arange(keep.sum())
    faces = faces[np.all(keep[faces], axis=1)]
    return keep, remap[faces]


def generate_reference_mesh(mask: SilhouetteMask, params: MeshGenParams | None = None):
    """Sample the silhouette uniformly and triangulate.

    Returns ``(MeshTopology, MeshState)``. Vertices end strictly inside the
    silhouette; triangles whose centroid falls outside are discarded and
    only the largest edge-connected component is kept.
    """
    params = params or MeshGenParams()
    target = params.target_vertex_count
    if mask.area < target:
        raise MeshGenerationError(
            f"silhouette area {mask.area} px cannot host {target} vertices")
    dfield = signed_distance(mask)

    h0 = params.h0 or math.sqrt(2.0 * mask.area / (math.sqrt(3.0) * target))
    pts, h0 = _seed_points(mask, dfield, h0, target)
    # thin limbs narrower than the lattice get no seeds at all, leaving
    # gaps of several h0 (normal boundary gaps stay near one h0)
    if _coverage_gap(mask, pts) > 2.0 * h0:
        h0 *= 0.5
        pts = _hex_lattice(mask, dfield, h0)
    if len(pts) < 4:
        raise MeshGenerationError("could not seed at least 4 interior points")
    tol = params.move_tolerance if params.move_tolerance is not None else 0.01 * h0

    rest = FORCE_SCALE * h0
    # points inside the boundary band slide tangentially forever (force vs
    # projection); convergence is judged on points deeper than the band
    geps = SEED_DEPTH * h0
    since_tri = np.inf  # force an initial triangulation
    edges = None
    converged = False
    for _ in range(params.max_relax_iters):
        if since_tri > RETRI_TOL * h0:
            faces = _interior_faces(mask, pts, Delaunay(pts).simplices)
            edges = _faces_to_edges(faces)
            since_tri = 0.0
        if len(edges) == 0:
            break
        interior = sample_distance(dfield, pts) < -geps
        vec = pts[edges[:, 1]] - pts[edges[:, 0]]
        length = np.maximum(np.hypot(vec[:, 0], vec[:, 1]), 1e-12)
        force = np.maximum(rest - length, 0.0)
        push = STEP * (force / length)[:, None] * vec
        move = np.zeros_like(pts)
        np.add.at(move, edges[:, 1], push)
        np.add.at(move, edges[:, 0], -push)
        pts = pts + move
        pts = _project_outside_in(dfield, pts)
        step = np.hypot(move[:, 0], move[:, 1])
        since_tri += float(step.max())
        step_max = float(step[interior].max()) if interior.any() else 0.0
        if step_max < tol:
            converged = True
            break
    if not converged:
        warnings.warn(
            f"mesh relaxation did not converge within {params.max_relax_iters} "
            "iterations; returning best state", RuntimeWarning)

    faces = _interior_faces(mask, pts, Delaunay(pts).simplices)
    # drop boundary slivers: near-collinear projected points make qhull emit
    # skinny triangles whose long edges span many lattice spacings
    corners = pts[faces]
    edge_max = np.stack([
        np.hypot(*(corners[:, i] - corners[:, j]).T)
        for i, j in ((0, 1), (1, 2), (0, 2))]).max(axis=0)
    faces = faces[edge_max <= SLIVER_EDGE * h0]
    if len(faces) == 0:
        raise MeshGenerationError("triangulation left no interior faces")
    keep, faces = _largest_component(len(pts), faces)
    pts = pts[keep]
    # guarantee the inside postcondition even after the last force step
    d = sample_distance(dfield, pts)
    stray = d > 0
    if stray.any():
        pts[stray] = nearest_inside_pixel(mask, pts[stray])
    n = len(pts)
    if abs(n - target) > 0.15 * target:
        warnings.warn(
            f"generated {n} vertices for target {target} (beyond 15%)",
            RuntimeWarning)
    topo = MeshTopology.from_faces(n, faces)
    return topo, MeshState(topo, pts)


def write_off(topology: MeshTopology, state: MeshState, path) -> None:
    """Plain-text OFF export (z = 0) for inspection."""
    lines = ["OFF", f"{topology.vertex_count} {len(topology.faces)} 0"]
    lines += [f"{p[0]:.6f} {p[1]:.6f} 0" for p in state.positions]
    lines += [f"3 {f[0]} {f[1]} {f[2]}" for f in topology.faces]
    text = "\n".join(lines) + "\n"
    with open(path, "w") as fh:
        fh.write(text)


def read_off(path):
    """Read a mesh written by :func:`write_off`."""
    with open(path) as fh:
        tokens = fh.read().split()
    if not tokens or tokens[0] != "OFF":
        raise MeshGenerationError("not an OFF file")
    nv, nf = int(tokens[1]), int(tokens[2])
    cursor = 4
    pts = np.array([[float(tokens[cursor + 3 * i]), float(tokens[cursor + 3 * i + 1])]
                    for i in range(nv)])
    cursor += 3 * nv
    faces = []
    for i in range(nf):
        if tokens[cursor] != "3":
            raise MeshGenerationError("only triangle faces are supported")
        faces.append([int(tokens[cursor + 1]), int(tokens[cursor + 2]),
                      int(tokens[cursor + 3])])
        cursor += 4
    topo = MeshTopology.from_faces(nv, np.array(faces, dtype=np.int64))
    return topo, MeshState(topo, pts)
