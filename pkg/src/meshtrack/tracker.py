"""Frame-loop orchestration: reference mesh, per-frame propagation and
deformation, trajectory matrix assembly."""
from __future__ import annotations

import dataclasses
import io
import warnings
from dataclasses import dataclass

import numpy as np

from .config import TrackerConfig
from .deformation import DeformParams, EnergyTrace, deform
from .errors import InputError, TrackingAborted
from .flow import FlowField, estimate_flow
from .geometry import MeshState, MeshTopology, longest_edge
from .mesh_gen import generate_reference_mesh
from .propagation import TrajectoryHistory, detect_self_occlusion, initial_positions
from .silhouette import SilhouetteMask


@dataclass
class TrajectoryMatrix:
    """Fully tracked trajectories: one row per point, one column per frame."""

    positions: np.ndarray  # (N, M, 2)
    topology: MeshTopology | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        if self.positions.ndim != 3 or self.positions.shape[2] != 2:
            raise ValueError("positions must have shape (N, M, 2)")
        if self.positions.shape[0] == 0 or self.positions.shape[1] == 0:
            raise ValueError("trajectory matrix must not be empty")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("trajectory matrix must be fully populated and finite")

    @property
    def n_points(self) -> int:
        return self.positions.shape[0]

    @property
    def n_frames(self) -> int:
        return self.positions.shape[1]

    def frame(self, t: int) -> np.ndarray:
        """Positions at 1-based frame t, shape (N, 2)."""
        if not 1 <= t <= self.n_frames:
            raise IndexError(f"frame {t} outside 1..{self.n_frames}")
        return self.positions[:, t - 1]


@dataclass
class FrameDiagnostics:
    frame: int
    occluded_vertex_count: int
    occluded_vertices: np.ndarray
    iterations: int
    final_energy: float
    type1_count: int
    type2_count: int
    converged: bool
    warnings: tuple[str, ...]
    trace: EnergyTrace | None = None


def _mask_image(mask: SilhouetteMask) -> np.ndarray:
    return mask.bits.astype(np.float64) * 255.0


def track_sequence(masks, flows=None, config: TrackerConfig | None = None):
    """Track every reference-mesh vertex through a silhouette sequence.

    masks: ordered silhouettes, all the same size. flows: optional list of
    exactly len(masks)-1 flow fields; without them, flow is estimated from
    the mask images themselves with the built-in block matcher.

    Returns ``(TrajectoryMatrix, [FrameDiagnostics, ...])``. Any failure
    raises :class:`TrackingAborted` carrying the frame index and the
    partial trajectories accumulated so far.
    """
    config = config or TrackerConfig()
    masks = list(masks)
    if len(masks) < 2:
        raise InputError("need at least 2 masks to track")
    shape = masks[0].bits.shape
    for k, m in enumerate(masks[1:], start=2):
        if m.bits.shape != shape:
            raise InputError(f"mask {k} has shape {m.bits.shape}, expected {shape}")
    if flows is not None:
        flows = list(flows)
        if len(flows) != len(masks) - 1:
            raise InputError(
                f"need {len(masks) - 1} flow fields for {len(masks)} masks, "
                f"got {len(flows)}")
        for k, f in enumerate(flows, start=1):
            if (f.height, f.width) != shape:
                raise InputError(f"flow {k} has shape {(f.height, f.width)}, "
                                 f"expected {shape}")
    if flows is None and config.flow_source == "external":
        raise InputError("flow_source is 'external' but no flow fields were given")

    m_frames = len(masks)
    try:
        topology, ref = generate_reference_mesh(masks[0], config.mesh)
    except Exception as exc:
        raise TrackingAborted(f"reference mesh generation failed: {exc}",
                              frame=1) from exc
    params = config.deform
    if params.density_radius is None:
        params = dataclasses.replace(params, density_radius=longest_edge(ref))

    n = topology.vertex_count
    out = np.empty((n, m_frames, 2))
    out[:, 0] = ref.positions
    history = TrajectoryHistory(config.history_length)
    history.append(ref.positions)
    diagnostics: list[FrameDiagnostics] = []
    prev = ref
    for t in range(2, m_frames + 1):
        try:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                occ = detect_self_occlusion(prev, dilate=config.dilate_occlusion)
                if flows is not None and config.flow_source != "builtin":
                    fl = flows[t - 2]
                else:
                    fl = estimate_flow(_mask_image(masks[t - 2]),
                                       _mask_image(masks[t - 1]),
                                       levels=config.flow_levels)
                init = initial_positions(prev, fl, occ, history)
                final, trace = deform(init, masks[t - 1], ref, params)
        except Exception as exc:
            raise TrackingAborted(
                str(exc), frame=t,
                partial_positions=out[:, :t - 1].copy(),
                diagnostics=diagnostics) from exc
        out[:, t - 1] = final.positions
        history.append(final.positions)
        diagnostics.append(FrameDiagnostics(
            frame=t,
            occluded_vertex_count=len(occ.occluded_vertices),
            occluded_vertices=occ.occluded_vertices,
            iterations=trace.iterations,
            final_energy=float(trace.raw[-1]),
            type1_count=int(trace.type1_counts[-1]),
            type2_count=int(trace.type2_counts[-1]),
            converged=trace.converged,
            warnings=tuple(str(w.message) for w in caught),
            trace=trace,
        ))
        prev = final
    return TrajectoryMatrix(out, topology), diagnostics


def write_trajectories(matrix: TrajectoryMatrix, sink) -> None:
    """CSV export: header ``point_id,x_1,y_1,...,x_M,y_M``, one row per
    point, 6-decimal fixed point."""
    if matrix.n_points == 0 or matrix.n_frames == 0:
        raise ValueError("refusing to write an empty trajectory matrix")
    own = isinstance(sink, (str, bytes)) or hasattr(sink, "__fspath__")
    fh = open(sink, "w", newline="") if own else sink
    try:
        cols = [f"x_{t},y_{t}" for t in range(1, matrix.n_frames + 1)]
        fh.write("point_id," + ",".join(cols) + "\n")
        for i in range(matrix.n_points):
            row = matrix.positions[i].reshape(-1)
            fh.write(str(i) + "," + ",".join(f"{v:.6f}" for v in row) + "\n")
    finally:
        if own:
            fh.close()


def read_trajectories(source) -> TrajectoryMatrix:
    """Read a CSV written by :func:`write_trajectories`."""
    own = isinstance(source, (str, bytes)) or hasattr(source, "__fspath__")
    fh = open(source, "r") if own else source
    try:
        header = fh.readline().strip()
        if not header.startswith("point_id,x_1,y_1"):
            raise InputError("not a trajectory CSV (bad header)")
        n_frames = (len(header.split(",")) - 1) // 2
        rows = []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 1 + 2 * n_frames:
                raise InputError(f"trajectory row has {len(parts)} fields, "
                                 f"expected {1 + 2 * n_frames}")
            rows.append([float(v) for v in parts[1:]])
    finally:
        if own:
            fh.close()
    if not rows:
        raise InputError("trajectory CSV has no data rows")
    data = np.array(rows).reshape(len(rows), n_frames, 2)
    return TrajectoryMatrix(data)


def write_diagnostics(diagnostics, sink) -> None:
    """Per-iteration deformation diagnostics CSV:
    ``frame,iter,f_raw,f_norm,f_fit,type1_count,type2_count``."""
    own = isinstance(sink, (str, bytes)) or hasattr(sink, "__fspath__")
    fh = open(sink, "w", newline="") if own else sink
    try:
        fh.write("frame,iter,f_raw,f_norm,f_fit,type1_count,type2_count\n")
        for d in diagnostics:
            tr = d.trace
            if tr is None:
                continue
            for k in range(tr.iterations):
                f_fit = f"{tr.fitted[k]:.9g}" if tr.fitted is not None else "nan"
                fh.write(f"{d.frame},{k + 1},{tr.raw[k]:.9g},"
                         f"{tr.normalized[k]:.9g},{f_fit},"
                         f"{tr.type1_counts[k]},{tr.type2_counts[k]}\n")
    finally:
        if own:
            fh.close()
