"""Synthetic ground truth: articulated capsule figures rasterized to
silhouettes with exact per-pixel flow and marker tracks, plus the
tracking-integrity and offset metrics."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import InputError, ScenarioError
from .flow import FlowField
from .silhouette import SilhouetteMask

SCENARIO_KINDS = ("translation", "two_link_swing", "leg_cross", "scale_change")

_PARAM_KEYS = {
    "translation": {"speed"},
    "two_link_swing": {"amplitude1", "amplitude2", "phase", "link_length",
                       "widths", "period"},
    "leg_cross": {"amplitude", "leg_length", "widths", "period"},
    "scale_change": {"amplitude", "period"},
}


@dataclass(frozen=True)
class Capsule:
    """Thick segment: pixels within width/2 of the axis a-b."""

    a: tuple[float, float]
    b: tuple[float, float]
    width: float


@dataclass
class SynthScenario:
    kind: str
    width: int = 96
    height: int = 160
    frames: int = 40
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ScenarioError(f"unknown scenario kind {self.kind!r}; "
                                f"expected one of {SCENARIO_KINDS}")
        if self.frames < 2:
            raise ScenarioError("scenario needs at least 2 frames")
        if self.width < 16 or self.height < 16:
            raise ScenarioError("image too small for a figure")
        unknown = set(self.params) - _PARAM_KEYS[self.kind]
        if unknown:
            raise ScenarioError(f"unknown {self.kind} params: {sorted(unknown)}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "width": self.width, "height": self.height,
                "frames": self.frames, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, data: dict) -> "SynthScenario":
        if not isinstance(data, dict):
            raise ScenarioError("scenario must be a JSON object")
        unknown = set(data) - {"kind", "width", "height", "frames", "params"}
        if unknown:
            raise ScenarioError(f"unknown scenario keys: {sorted(unknown)}")
        if "kind" not in data:
            raise ScenarioError("scenario is missing 'kind'")
        return cls(kind=data["kind"], width=int(data.get("width", 96)),
                   height=int(data.get("height", 160)),
                   frames=int(data.get("frames", 40)),
                   params=dict(data.get("params", {})))

    @classmethod
    def from_json(cls, text: str) -> "SynthScenario":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"scenario is not valid JSON: {exc}") from exc


@dataclass
class GroundTruth:
    scenario: SynthScenario
    masks: list
    flows: list
    sample_tracks: np.ndarray          # (K, M, 2) exact marker positions
    marker_limbs: np.ndarray           # (K,) limb index per marker
    occlusion_frames: tuple            # 1-based frames with limb overlap
    overlap_boxes: dict                # frame -> (xmin, ymin, xmax, ymax, area)
    limbs_per_frame: list              # per frame: list of Capsule
    textured_frames: list              # per frame: (H, W) uint8 image


# ---------------------------------------------------------------------------
# kinematics


def _translation_capsules(scn: SynthScenario, t: int):
    w, h = scn.width, scn.height
    sx, sy = scn.params.get("speed", (1.0, 1.0))
    dx, dy = sx * (t - 1), sy * (t - 1)
    cx = 0.27 * w
    torso = Capsule((cx + dx, 0.275 * h + dy), (cx + dx, 0.525 * h + dy), 0.29 * w)
    head = Capsule((cx + dx, 0.125 * h + dy), (cx + dx, 0.19 * h + dy), 0.17 * w)
    return [torso, head]


def _swing_capsules(scn: SynthScenario, t: int):
    w, h = scn.width, scn.height
    p = scn.params
    a1 = p.get("amplitude1", 0.45)
    a2 = p.get("amplitude2", 0.55)
    phase = p.get("phase", 1.2)
    length = p.get("link_length", 0.30 * min(w, h))
    w1, w2 = p.get("widths", (0.115 * w, 0.10 * w))
    period = p.get("period") or scn.frames
    omega = 2.0 * math.pi * (t - 1) / period
    theta1 = a1 * math.sin(omega)
    theta2 = theta1 + a2 * math.sin(omega + phase)
    shoulder = np.array([0.5 * w, 0.25 * h])
    elbow = shoulder + length * np.array([math.sin(theta1), math.cos(theta1)])
    tip = elbow + length * np.array([math.sin(theta2), math.cos(theta2)])
    return [Capsule(tuple(shoulder), tuple(elbow), w1),
            Capsule(tuple(elbow), tuple(tip), w2)]


def _leg_cross_capsules(scn: SynthScenario, t: int):
    w, h = scn.width, scn.height
    p = scn.params
    amp = p.get("amplitude", 0.32)
    length = p.get("leg_length", 0.42 * h)
    w1, w2 = p.get("widths", (0.115 * w, 0.105 * w))
    period = p.get("period") or scn.frames
    angle = amp * math.sin(2.0 * math.pi * (t - 1) / period)
    torso = Capsule((0.30 * w, 0.225 * h), (0.70 * w, 0.225 * h), 0.16 * w)
    hips_y = 0.2625 * h
    anchors = (np.array([0.393 * w, hips_y]), np.array([0.607 * w, hips_y]))
    legs = []
    for k, (anchor, width_k, sgn) in enumerate(zip(anchors, (w1, w2), (1.0, -1.0))):
        a = sgn * angle
        tip = anchor + length * np.array([math.sin(a), math.cos(a)])
        legs.append(Capsule(tuple(anchor), tuple(tip), width_k))
    return [torso] + legs


def _scale_capsules(scn: SynthScenario, t: int):
    p = scn.params
    amp = p.get("amplitude", 0.15)
    period = p.get("period") or scn.frames
    s = 1.0 + amp * math.sin(2.0 * math.pi * (t - 1) / period)
    base = _translation_capsules(
        SynthScenario("translation", scn.width, scn.height, scn.frames,
                      {"speed": (0.0, 0.0)}), 1)
    pts = np.array([[c.a, c.b] for c in base]).reshape(-1, 2)
    center = 0.5 * (pts.min(axis=0) + pts.max(axis=0))
    out = []
    for c in base:
        a = center + s * (np.array(c.a) - center)
        b = center + s * (np.array(c.b) - center)
        out.append(Capsule(tuple(a), tuple(b), s * c.width))
    return out


_CAPSULES = {
    "translation": _translation_capsules,
    "two_link_swing": _swing_capsules,
    "leg_cross": _leg_cross_capsules,
    "scale_change": _scale_capsules,
}

# markers are anchored to limbs: (limb index, fraction along the axis)
_MARKERS = {
    "translation": [(0, 0.25), (0, 0.5), (0, 0.75), (1, 0.5)],
    "two_link_swing": [(0, 0.5), (1, 0.0), (1, 0.5)],
    "leg_cross": [(0, 0.5), (1, 0.35), (1, 0.7), (2, 0.35), (2, 0.7)],
    "scale_change": [(0, 0.25), (0, 0.5), (0, 0.75), (1, 0.5)],
}


def scenario_capsules(scn: SynthScenario, t: int):
    """Figure capsules at 1-based frame t, ordered front to back."""
    return _CAPSULES[scn.kind](scn, t)


# ---------------------------------------------------------------------------
# rasterization and exact flow


def _capsule_distance(c: Capsule, xx: np.ndarray, yy: np.ndarray) -> np.ndarray:
    a = np.array(c.a)
    d = np.array(c.b) - a
    len2 = float(d @ d)
    px = xx - a[0]
    py = yy - a[1]
    if len2 < 1e-12:
        return np.hypot(px, py)
    s = np.clip((px * d[0] + py * d[1]) / len2, 0.0, 1.0)
    return np.hypot(px - s * d[0], py - s * d[1])


def _raster(capsules, width: int, height: int):
    """Per-pixel coverage: boolean inside grids, a front-most limb label
    (-1 outside), and a nearest-limb label for every pixel."""
    yy, xx = np.mgrid[0:height, 0:width].astype(float)
    clearance = np.empty((len(capsules), height, width))
    inside = np.empty((len(capsules), height, width), dtype=bool)
    for i, c in enumerate(capsules):
        dist = _capsule_distance(c, xx, yy)
        clearance[i] = dist - c.width / 2.0
        inside[i] = clearance[i] <= 0.0
    label = np.full((height, width), -1, dtype=np.int64)
    for i in range(len(capsules) - 1, -1, -1):
        label[inside[i]] = i  # earlier capsules overwrite: front-most wins
    nearest = np.argmin(clearance, axis=0)
    return inside, label, nearest


def _similarity_map(c0: Capsule, c1: Capsule):
    """Exact similarity taking capsule c0's frame onto c1's."""
    a0, b0 = np.array(c0.a), np.array(c0.b)
    a1, b1 = np.array(c1.a), np.array(c1.b)
    d0, d1 = b0 - a0, b1 - a1
    n0, n1 = np.hypot(*d0), np.hypot(*d1)
    scale = n1 / n0 if n0 > 1e-12 else 1.0
    ang = math.atan2(d1[1], d1[0]) - math.atan2(d0[1], d0[0])
    R = np.array([[math.cos(ang), -math.sin(ang)],
                  [math.sin(ang), math.cos(ang)]])
    T = a1 - scale * R @ a0
    return R, scale, T


def _check_fits(mask_bits: np.ndarray, t: int) -> None:
    if (mask_bits[0, :].any() or mask_bits[-1, :].any()
            or mask_bits[:, 0].any() or mask_bits[:, -1].any()):
        raise ScenarioError(f"figure touches the image border at frame {t}")


def _texture(scn: SynthScenario, capsules_t, capsules_1, label, rng_noise):
    """Grayscale frame: static checkerboard + limb texture that rides along
    with each limb (frame-1 noise sampled through the inverse limb map)."""
    h, w = label.shape
    yy, xx = np.mgrid[0:h, 0:w]
    img = np.where(((xx // 8) + (yy // 8)) % 2 == 0, 60.0, 90.0)
    for i in range(len(capsules_t)):
        sel = label == i
        if not sel.any():
            continue
        R, s, T = _similarity_map(capsules_1[i], capsules_t[i])
        pts = np.stack([xx[sel], yy[sel]], axis=1).astype(float)
        back = (pts - T) @ R / max(s, 1e-12)  # inverse map to frame 1
        bx = np.clip(back[:, 0], 0, w - 1)
        by = np.clip(back[:, 1], 0, h - 1)
        base = 150.0 + 25.0 * (i % 3)
        img[sel] = base + rng_noise[np.rint(by).astype(int), np.rint(bx).astype(int)]
    return np.clip(img, 0, 255).astype(np.uint8)


def generate_scenario(scn: SynthScenario, seed: int = 0) -> GroundTruth:
    """Rasterize the scenario and derive exact flows and marker tracks.

    The geometry is fully deterministic; the seed only drives the
    procedural texture of the grayscale frames.
    """
    w, h, m = scn.width, scn.height, scn.frames
    rng = np.random.default_rng(seed)
    noise = ndimage.gaussian_filter(rng.normal(0.0, 30.0, size=(h, w)), 1.0)

    per_frame = [scenario_capsules(scn, t) for t in range(1, m + 1)]
    n_limbs = len(per_frame[0])

    # limb pairs that are separated at frame 1 can genuinely occlude
    inside1, _, _ = _raster(per_frame[0], w, h)
    occludable = [(i, j) for i in range(n_limbs) for j in range(i + 1, n_limbs)
                  if not (inside1[i] & inside1[j]).any()]

    masks = []
    labels = []
    nearests = []
    textured = []
    occlusion_frames = []
    overlap_boxes = {}
    for t in range(1, m + 1):
        inside, label, nearest = _raster(per_frame[t - 1], w, h)
        bits = label >= 0
        _check_fits(bits, t)
        _, ncomp = ndimage.label(bits, structure=np.ones((3, 3)))
        if ncomp != 1:
            raise ScenarioError(f"figure splits into {ncomp} components at frame {t}")
        masks.append(SilhouetteMask(bits))
        labels.append(label)
        nearests.append(nearest)
        textured.append(_texture(scn, per_frame[t - 1], per_frame[0], label, noise))
        overlap = np.zeros((h, w), dtype=bool)
        for i, j in occludable:
            overlap |= inside[i] & inside[j]
        if overlap.any():
            occlusion_frames.append(t)
            ys, xs = np.nonzero(overlap)
            overlap_boxes[t] = (float(xs.min()), float(ys.min()),
                                float(xs.max()), float(ys.max()), int(overlap.sum()))

    flows = []
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    for t in range(m - 1):
        assign = np.where(labels[t] >= 0, labels[t], nearests[t])
        u = np.zeros((h, w))
        v = np.zeros((h, w))
        for i in range(n_limbs):
            sel = assign == i
            if not sel.any():
                continue
            R, s, T = _similarity_map(per_frame[t][i], per_frame[t + 1][i])
            pts = np.stack([xx[sel], yy[sel]], axis=1)
            moved = s * pts @ R.T + T
            u[sel] = moved[:, 0] - pts[:, 0]
            v[sel] = moved[:, 1] - pts[:, 1]
        flows.append(FlowField(u, v))

    markers = _MARKERS[scn.kind]
    tracks = np.empty((len(markers), m, 2))
    for k, (limb, frac) in enumerate(markers):
        for t in range(m):
            c = per_frame[t][limb]
            a, b = np.array(c.a), np.array(c.b)
            tracks[k, t] = a + frac * (b - a)
    marker_limbs = np.array([limb for limb, _ in markers], dtype=np.int64)

    return GroundTruth(scn, masks, flows, tracks, marker_limbs,
                       tuple(occlusion_frames), overlap_boxes, per_frame, textured)


# ---------------------------------------------------------------------------
# metrics


def tracking_length_percentage(tracked_counts, total_frames: int) -> float:
    """Average percentage of frames over which each point stayed tracked."""
    counts = np.asarray(list(tracked_counts), dtype=float)
    if counts.size == 0:
        raise InputError("no trajectories to score")
    if total_frames <= 0:
        raise InputError("total_frames must be positive")
    if np.any(counts > total_frames):
        raise InputError("tracked count exceeds total frames")
    return float(100.0 * np.mean(counts / total_frames))


def offset_distances(estimated: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Euclidean offsets between matched tracks, shape (K, M)."""
    est = np.asarray(estimated, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.shape != tru.shape or est.ndim != 3:
        raise InputError(f"track shapes differ: {est.shape} vs {tru.shape}")
    d = est - tru
    return np.hypot(d[..., 0], d[..., 1])


def offset_std(estimated: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Per-frame population standard deviation of marker offset distances."""
    dist = offset_distances(estimated, truth)
    if dist.shape[0] < 2:
        raise InputError("offset_std needs at least 2 markers")
    return dist.std(axis=0, ddof=0)


def match_markers(ref_positions: np.ndarray, markers_frame1: np.ndarray) -> np.ndarray:
    """Nearest reference-mesh vertex for each ground-truth marker (fixed
    correspondence, established at frame 1)."""
    ref = np.asarray(ref_positions, dtype=float)
    mk = np.asarray(markers_frame1, dtype=float)
    d2 = ((ref[None, :, :] - mk[:, None, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1)
