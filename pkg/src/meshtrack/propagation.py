"""Frame-to-frame mesh initialization.

Occlusion is detected as mesh self-intersection; visible vertices take
bicubic-sampled flow, occluded ones a quadratic extrapolation of their last
five positions, and the per-vertex motions are smoothed by a patch average.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .flow import FlowField, sample_bicubic
from .geometry import MeshState, candidate_edge_pairs, segment_pairs_intersect

HISTORY_LENGTH = 5

SOURCE_FLOW = "flow"
SOURCE_POLYNOMIAL = "polynomial"


@dataclass
class OcclusionReport:
    """Edge crossings of a mesh and the vertices they implicate."""

    intersected_edges: np.ndarray  # (K, 2) pairs of edge indices, i < j
    occluded_vertices: np.ndarray  # sorted unique vertex indices

    @property
    def empty(self) -> bool:
        return len(self.intersected_edges) == 0

    def vertex_mask(self, vertex_count: int) -> np.ndarray:
        m = np.zeros(vertex_count, dtype=bool)
        m[self.occluded_vertices] = True
        return m


def detect_self_occlusion(mesh: MeshState, dilate: bool = False) -> OcclusionReport:
    """Find all proper crossings between non-adjacent mesh edges.

    Edge pairs sharing a vertex are skipped (adjacent edges always touch at
    their common endpoint). With ``dilate`` the occluded set also includes
    the one-ring neighbors of every crossing endpoint.
    """
    topo = mesh.topology
    edges = topo.edges
    pos = mesh.positions
    cand = candidate_edge_pairs(pos, edges)
    if len(cand):
        ei, ej = edges[cand[:, 0]], edges[cand[:, 1]]
        shares = ((ei[:, 0] == ej[:, 0]) | (ei[:, 0] == ej[:, 1])
                  | (ei[:, 1] == ej[:, 0]) | (ei[:, 1] == ej[:, 1]))
        cand = cand[~shares]
    if len(cand) == 0:
        return OcclusionReport(np.empty((0, 2), dtype=np.int64),
                               np.empty(0, dtype=np.int64))
    ei, ej = edges[cand[:, 0]], edges[cand[:, 1]]
    hit, _, _ = segment_pairs_intersect(pos[ei[:, 0]], pos[ei[:, 1]],
                                        pos[ej[:, 0]], pos[ej[:, 1]])
    crossing = cand[hit]
    if len(crossing) == 0:
        return OcclusionReport(np.empty((0, 2), dtype=np.int64),
                               np.empty(0, dtype=np.int64))
    verts = np.unique(edges[crossing.ravel()].ravel())
    if dilate:
        verts = np.unique(np.concatenate(
            [verts] + [topo.neighbors[v] for v in verts]))
    return OcclusionReport(crossing, verts)


class TrajectoryHistory:
    """Ring buffer of the last H per-vertex positions, oldest first."""

    def __init__(self, length: int = HISTORY_LENGTH):
        if length < 3:
            raise ValueError("history length must be >= 3")
        self.length = length
        self._frames: list[np.ndarray] = []

    def append(self, positions: np.ndarray) -> None:
        self._frames.append(np.array(positions, dtype=float))
        if len(self._frames) > self.length:
            self._frames.pop(0)

    def __len__(self) -> int:
        return len(self._frames)

    @property
    def full(self) -> bool:
        return len(self._frames) == self.length

    def stacked(self) -> np.ndarray:
        """(H, N, 2) array, oldest frame first."""
        return np.stack(self._frames)


@lru_cache(maxsize=8)
def _extrapolation_weights(length: int) -> np.ndarray:
    """Weights w so that sum_j w_j * y_j extrapolates a quadratic fit of the
    last ``length`` samples one step past the newest one.

    Sample times are recentered around zero before solving the normal
    equations, which keeps the 3x3 system perfectly conditioned; the fitted
    polynomial (and hence the weights) is unchanged by the shift.
    """
    tau = np.arange(length, dtype=float) - (length - 1) / 2.0
    X = np.stack([tau**2, tau, np.ones_like(tau)])  # (3, H)
    target = (length - 1) / 2.0 + 1.0
    x_next = np.array([target**2, target, 1.0])
    return X.T @ np.linalg.solve(X @ X.T, x_next)


def predict_polynomial(history) -> np.ndarray:
    """Extrapolate the next position from a full position history.

    ``history`` is (H, 2), oldest first. Exact (to rounding) whenever the
    samples come from a polynomial of degree <= 2 per coordinate.
    """
    hist = np.asarray(history, dtype=float)
    if hist.ndim != 2 or hist.shape[1] != 2:
        raise ValueError("history must be an (H, 2) array")
    w = _extrapolation_weights(hist.shape[0])
    return w @ hist


def predict_polynomial_many(stacked: np.ndarray) -> np.ndarray:
    """Vectorized prediction for an (H, N, 2) history stack."""
    w = _extrapolation_weights(stacked.shape[0])
    return np.einsum("h,hnc->nc", w, stacked)


@dataclass
class MotionEstimate:
    """Per-vertex displacement estimates and where each one came from."""

    displacements: np.ndarray  # (N, 2)
    source: np.ndarray         # (N,) unicode tags, "flow" or "polynomial"


def estimate_motion(mesh_prev: MeshState, flow: FlowField, occ: OcclusionReport,
                    history: TrajectoryHistory | None = None) -> MotionEstimate:
    """Per-vertex motion: flow for visible vertices, polynomial history
    extrapolation for occluded ones (falling back to flow while the history
    is still short)."""
    n = mesh_prev.topology.vertex_count
    disp = sample_bicubic(flow, mesh_prev.positions)
    source = np.full(n, SOURCE_FLOW, dtype="U10")
    occluded = occ.vertex_mask(n)
    if occluded.any() and history is not None and history.full:
        predicted = predict_polynomial_many(history.stacked())
        disp[occluded] = predicted[occluded] - mesh_prev.positions[occluded]
        source[occluded] = SOURCE_POLYNOMIAL
    return MotionEstimate(disp, source)


def initial_positions(mesh_prev: MeshState, flow: FlowField, occ: OcclusionReport,
                      history: TrajectoryHistory | None = None) -> MeshState:
    """Propagate the mesh one frame: adaptive motion plus the patch-based
    average filter (each vertex advances by its patch's mean displacement)."""
    est = estimate_motion(mesh_prev, flow, occ, history)
    smoothing = mesh_prev.topology.patch_average_matrix
    smoothed = smoothing @ est.displacements
    return mesh_prev.with_positions(mesh_prev.positions + smoothed)
