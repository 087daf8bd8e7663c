"""Silhouette-constrained iterative mesh deformation.

Each iteration alternates two moves: regularization of drifted vertices
against the silhouette (pulled toward interior blanks, pushed off the
background) and a local rigid deformation that re-anchors every patch to
the reference mesh through its best-fit rotation + translation. Iteration
energy is the summed squared step length; a power-law fit of the
normalized energy decides when to stop.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import NumericalError
from .geometry import MeshState, longest_edge, vertex_density_map
from .silhouette import (DistanceField, SilhouetteMask, nearest_inside_pixel,
                         sample_distance, signed_distance)

NORM_FLOOR = 1e-12  # floor on normalized energies before taking logs
FLAT_TRACE = 1e-12  # energy spans below this are rounding noise, not signal


@dataclass
class DeformParams:
    lam: float = 2.0 / 3.0        # blend weight toward the current position
    theta: float = 0.003          # stopping threshold on fitted energy steps
    max_iters: int = 50
    min_iters: int = 3
    density_radius: float | None = None  # defaults to longest reference edge
    density_threshold: float = 1.0
    outside_tolerance: float = 0.5
    allow_scaling: bool = False   # experimental rotation+uniform-scale fits

    def __post_init__(self):
        if not 0.0 < self.lam < 1.0:
            raise ValueError("lam must lie in (0, 1)")
        if self.theta <= 0.0:
            raise ValueError("theta must be positive")
        if not self.max_iters >= self.min_iters >= 3:
            raise ValueError("need max_iters >= min_iters >= 3")


@dataclass
class DriftLabels:
    """Vertices violating the silhouette constraint, with their support.

    type1 vertices under-reach the silhouette: interior blank pixels sit
    within the density radius. type2 vertices sit outside the silhouette;
    when both conditions hold, type2 wins.
    """

    type1: np.ndarray                       # vertex indices
    type2: np.ndarray                       # vertex indices
    blank_pixels: dict[int, np.ndarray]     # per type1 vertex: (K, 2) pixels
    support: dict[int, np.ndarray]          # per type2 vertex: initial N_i
    rescue_targets: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return len(self.type1) == 0 and len(self.type2) == 0


@dataclass
class RigidTransform2:
    """Rotation + translation (optionally uniform scale) in the plane."""

    R: np.ndarray
    T: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=float).reshape(2, 2)
        self.T = np.asarray(self.T, dtype=float).reshape(2)
        if not np.allclose(self.R.T @ self.R, np.eye(2), atol=1e-9):
            raise ValueError("R must be orthonormal")
        if abs(np.linalg.det(self.R) - 1.0) > 1e-9:
            raise ValueError("R must be a proper rotation (det = +1)")

    @property
    def angle(self) -> float:
        return float(np.arctan2(self.R[1, 0], self.R[0, 0]))

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return self.scale * pts @ self.R.T + self.T


@dataclass
class EnergyTrace:
    """Per-iteration deformation energies and their power-law fit."""

    raw: np.ndarray
    normalized: np.ndarray
    fit: tuple[float, float] | None
    fitted: np.ndarray | None
    converged: bool
    iterations: int
    type1_counts: np.ndarray
    type2_counts: np.ndarray


def label_drift(mesh: MeshState, mask: SilhouetteMask, ref_mesh: MeshState,
                params: DeformParams, dfield: DistanceField | None = None) -> DriftLabels:
    """Classify drifted vertices against the silhouette.

    Blank pixels are silhouette-interior pixels whose vertex density within
    the density radius falls below the threshold; any vertex with blanks in
    range is type1. Vertices whose signed distance exceeds the outside
    tolerance are type2 (taking precedence over type1).
    """
    radius = params.density_radius or longest_edge(ref_mesh)
    if dfield is None:
        dfield = signed_distance(mask)
    pos = mesh.positions
    n = len(pos)

    dist = sample_distance(dfield, pos)
    type2_mask = dist > params.outside_tolerance
    type2 = np.flatnonzero(type2_mask)

    density = vertex_density_map(mesh, mask, radius)
    blank_rc = np.argwhere((density >= 0) & (density < params.density_threshold))
    type1_ids = []
    blank_pixels: dict[int, np.ndarray] = {}
    if len(blank_rc):
        blanks = blank_rc[:, ::-1].astype(float)  # (x, y)
        near = cKDTree(blanks).query_ball_point(pos, r=radius)
        for i, hits in enumerate(near):
            if hits and not type2_mask[i]:
                type1_ids.append(i)
                blank_pixels[i] = blanks[hits]
    type1 = np.array(type1_ids, dtype=np.int64)

    topo = mesh.topology
    support = {int(i): topo.patch(i)[~type2_mask[topo.patch(i)]] for i in type2}
    rescue = {}
    if len(type2):
        targets = nearest_inside_pixel(mask, pos[type2])
        rescue = {int(i): targets[k] for k, i in enumerate(type2)}
    return DriftLabels(type1, type2, blank_pixels, support, rescue)


def regularize(mesh: MeshState, labels: DriftLabels, params: DeformParams) -> MeshState:
    """Move drifted vertices toward their support per the blend weight.

    type1 vertices blend toward the mean of their blank pixels. type2
    vertices blend toward the mean of their supported patch members,
    processed in batches so vertices regularized in one batch can support
    their still-stranded neighbors in the next; a fully detached drifted
    component falls back to projection onto the nearest silhouette pixel.
    """
    lam = params.lam
    pos = mesh.positions
    new = pos.copy()
    for i in labels.type1:
        new[i] = lam * pos[i] + (1.0 - lam) * labels.blank_pixels[int(i)].mean(axis=0)
    remaining = set(int(i) for i in labels.type2)
    topo = mesh.topology
    while remaining:
        base = new.copy()
        batch = []
        for i in remaining:
            patch = topo.patch(i)
            sup = patch[[j not in remaining for j in patch]]
            if len(sup):
                batch.append((i, sup))
        if not batch:
            warnings.warn(
                f"{len(remaining)} outside vertices have no supported patch; "
                "projecting onto the silhouette", RuntimeWarning)
            for i in remaining:
                new[i] = labels.rescue_targets[i]
            break
        for i, sup in batch:
            new[i] = lam * base[i] + (1.0 - lam) * base[sup].mean(axis=0)
        remaining.difference_update(i for i, _ in batch)
    return mesh.with_positions(new)


def fit_patch_rigid(ref_positions, cur_positions,
                    allow_scaling: bool = False) -> RigidTransform2:
    """Least-squares rigid alignment of a reference patch onto its current
    positions (orthogonal polar factor with det forced to +1; no scaling
    unless requested). Coincident reference points degrade to a pure
    centroid translation with a warning."""
    ref = np.asarray(ref_positions, dtype=float).reshape(-1, 2)
    cur = np.asarray(cur_positions, dtype=float).reshape(-1, 2)
    if ref.shape != cur.shape or len(ref) < 2:
        raise ValueError("need matching point sets with at least 2 points")
    rc = ref.mean(axis=0)
    cc = cur.mean(axis=0)
    ref_c = ref - rc
    cur_c = cur - cc
    spread = float((ref_c * ref_c).sum())
    if spread < 1e-18:
        warnings.warn("degenerate (coincident) reference patch", RuntimeWarning)
        return RigidTransform2(np.eye(2), cc - rc)
    M = cur_c.T @ ref_c
    U, S, Vt = np.linalg.svd(M)
    d = np.sign(np.linalg.det(U @ Vt))
    R = U @ np.diag([1.0, d]) @ Vt
    scale = float((S[0] + d * S[1]) / spread) if allow_scaling else 1.0
    T = cc - scale * R @ rc
    return RigidTransform2(R, T, scale)


def fit_patches_rigid(topology, ref_positions: np.ndarray, cur_positions: np.ndarray,
                      allow_scaling: bool = False):
    """Closed-form per-patch rigid fits for every vertex at once.

    Returns (R, T, s) arrays of shapes (N, 2, 2), (N, 2), (N,). The rotation
    maximizing the patch correlation has cos/sin proportional to the trace
    and skew of the 2x2 cross-covariance, which matches the det-corrected
    SVD solution used by :func:`fit_patch_rigid`.
    """
    S = topology.patch_sum_matrix
    cnt = topology.patch_sizes.astype(float)
    ref = np.asarray(ref_positions, dtype=float)
    cur = np.asarray(cur_positions, dtype=float)
    ref_c = (S @ ref) / cnt[:, None]
    cur_c = (S @ cur) / cnt[:, None]
    outer = np.einsum("nc,nd->ncd", cur, ref).reshape(-1, 4)
    M = (S @ outer).reshape(-1, 2, 2) - cnt[:, None, None] * np.einsum(
        "nc,nd->ncd", cur_c, ref_c)
    a = M[:, 0, 0] + M[:, 1, 1]
    b = M[:, 1, 0] - M[:, 0, 1]
    norm = np.hypot(a, b)
    ok = norm > 1e-15
    cos = np.where(ok, a / np.where(ok, norm, 1.0), 1.0)
    sin = np.where(ok, b / np.where(ok, norm, 1.0), 0.0)
    R = np.empty((len(ref), 2, 2))
    R[:, 0, 0] = cos
    R[:, 0, 1] = -sin
    R[:, 1, 0] = sin
    R[:, 1, 1] = cos
    if allow_scaling:
        ssq = (S @ (ref * ref).sum(axis=1)) - cnt * (ref_c * ref_c).sum(axis=1)
        good = ssq > 1e-18
        s = np.where(good, norm / np.where(good, ssq, 1.0), 1.0)
    else:
        s = np.ones(len(ref))
    T = cur_c - s[:, None] * np.einsum("nij,nj->ni", R, ref_c)
    return R, T, s


def blend_transforms(topology, ref_positions: np.ndarray, R: np.ndarray,
                     T: np.ndarray, s: np.ndarray | None = None) -> np.ndarray:
    """Average each patch's transforms applied to the vertex's own reference
    position."""
    A = topology.patch_average_matrix
    if s is None:
        s = np.ones(len(ref_positions))
    Rbar = (A @ (s[:, None, None] * R).reshape(-1, 4)).reshape(-1, 2, 2)
    Tbar = A @ T
    return np.einsum("nij,nj->ni", Rbar, np.asarray(ref_positions, dtype=float)) + Tbar


def rigid_blend(ref_mesh: MeshState, transforms) -> MeshState:
    """Blend one rigid transform per vertex over patches (public wrapper
    around :func:`blend_transforms`)."""
    n = ref_mesh.topology.vertex_count
    if len(transforms) != n:
        raise ValueError(f"need {n} transforms, got {len(transforms)}")
    R = np.stack([t.R for t in transforms])
    T = np.stack([t.T for t in transforms])
    s = np.array([t.scale for t in transforms])
    return ref_mesh.with_positions(
        blend_transforms(ref_mesh.topology, ref_mesh.positions, R, T, s))


def fit_power(x, y, floor: float = NORM_FLOOR) -> tuple[float, float]:
    """Least-squares fit of y = a * x**b in log-log space.

    Samples at or below ``floor`` are dropped from the fit when enough
    remain (a min-max-normalized trace always contains one exact zero,
    whose floored logarithm would otherwise dominate the regression);
    if fewer than two positive samples exist, values are clipped instead.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2:
        raise ValueError("need at least two samples to fit")
    keep = y > floor
    if keep.sum() >= 2:
        lx = np.log(x[keep])
        ly = np.log(y[keep])
    else:
        lx = np.log(x)
        ly = np.log(np.maximum(y, floor))
    slope, intercept = np.polyfit(lx, ly, 1)
    return float(np.exp(intercept)), float(slope)


def normalize_trace(raw: np.ndarray) -> np.ndarray:
    raw = np.asarray(raw, dtype=float)
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        return np.zeros_like(raw)
    return (raw - lo) / (hi - lo)


def _stop_by_power_fit(raw: list[float], theta: float):
    """Evaluate the fitted-energy stopping rule on the trace so far.

    Returns (stop, fit) where fit is the (a, b) of the current refit, or
    None when the trace is flat (immediate convergence). A trace whose
    span is below FLAT_TRACE carries no signal once min-max normalized,
    only rounding noise, so it counts as flat.
    """
    trace = np.asarray(raw)
    if trace.max() - trace.min() < FLAT_TRACE:
        return True, None
    z = normalize_trace(trace)
    k = np.arange(1, len(trace) + 1, dtype=float)
    a, b = fit_power(k, z)
    f_now = a * k[-1] ** b
    f_prev = a * k[-2] ** b
    return bool(abs(f_now - f_prev) < theta), (a, b)


def deform(initial: MeshState, mask: SilhouetteMask, ref_mesh: MeshState,
           params: DeformParams | None = None):
    """Run the regularize/rigid-fit iteration from an initial mesh guess.

    Returns ``(MeshState, EnergyTrace)``. Stops when the power-fitted,
    min-max-normalized energy makes a step smaller than theta (checked from
    min_iters onward) or when max_iters is reached.
    """
    params = params or DeformParams()
    if params.density_radius is None:
        params = DeformParams(params.lam, params.theta, params.max_iters,
                              params.min_iters, longest_edge(ref_mesh),
                              params.density_threshold, params.outside_tolerance,
                              params.allow_scaling)
    dfield = signed_distance(mask)
    topo = initial.topology
    prev = initial.positions.copy()
    raw: list[float] = []
    t1_counts: list[int] = []
    t2_counts: list[int] = []
    converged = False
    fit = None
    for k in range(1, params.max_iters + 1):
        state = MeshState(topo, prev)
        labels = label_drift(state, mask, ref_mesh, params, dfield=dfield)
        reg = regularize(state, labels, params)
        R, T, s = fit_patches_rigid(topo, ref_mesh.positions, reg.positions,
                                    params.allow_scaling)
        new = blend_transforms(topo, ref_mesh.positions, R, T, s)
        if not np.all(np.isfinite(new)):
            raise NumericalError(
                f"non-finite vertex positions at deformation iteration {k}",
                iteration=k)
        step = new - prev
        raw.append(float((step * step).sum()))
        t1_counts.append(len(labels.type1))
        t2_counts.append(len(labels.type2))
        prev = new
        if k >= params.min_iters:
            converged, fit = _stop_by_power_fit(raw, params.theta)
            if converged:
                break
    raw_arr = np.array(raw)
    normalized = normalize_trace(raw_arr)
    if fit is None and raw_arr.max() > raw_arr.min():
        fit = fit_power(np.arange(1, len(raw_arr) + 1, dtype=float), normalized)
    fitted = None
    if fit is not None:
        a, b = fit
        fitted = a * np.arange(1, len(raw_arr) + 1, dtype=float) ** b
    trace = EnergyTrace(raw_arr, normalized, fit, fitted, converged,
                        len(raw_arr), np.array(t1_counts), np.array(t2_counts))
    return MeshState(topo, prev), trace
