"""Trajectory overlay rendering: colored point trails over the silhouettes."""
from __future__ import annotations

import colorsys
import math

import numpy as np
from PIL import Image, ImageDraw

from .tracker import TrajectoryMatrix

TRAIL_FRAMES = 20

# fixed body-part palette (cycled when a figure has more limbs)
_LIMB_COLORS = [(230, 60, 60), (70, 200, 90), (80, 120, 240),
                (240, 180, 40), (200, 80, 220), (60, 210, 210)]


def limb_point_colors(points: np.ndarray, limbs) -> np.ndarray:
    """Color each point by its nearest limb capsule (a, b, width)."""
    pts = np.asarray(points, dtype=float)
    clearance = np.empty((len(limbs), len(pts)))
    for i, (a, b, width) in enumerate(limbs):
        a = np.asarray(a, dtype=float)
        d = np.asarray(b, dtype=float) - a
        len2 = max(float(d @ d), 1e-12)
        s = np.clip(((pts - a) @ d) / len2, 0.0, 1.0)
        clearance[i] = np.hypot(*(pts - a - s[:, None] * d).T) - width / 2.0
    labels = clearance.argmin(axis=0)
    return np.array([_LIMB_COLORS[k % len(_LIMB_COLORS)] for k in labels],
                    dtype=np.uint8)


def positional_point_colors(points: np.ndarray) -> np.ndarray:
    """Fallback coloring: hue from the angle around the figure centroid."""
    pts = np.asarray(points, dtype=float)
    c = pts.mean(axis=0)
    hues = (np.arctan2(pts[:, 1] - c[1], pts[:, 0] - c[0]) / (2 * math.pi)) % 1.0
    rgb = [tuple(int(255 * v) for v in colorsys.hsv_to_rgb(h, 0.85, 0.95))
           for h in hues]
    return np.array(rgb, dtype=np.uint8)


def render_overlay(matrix: TrajectoryMatrix, mask, t: int, colors: np.ndarray,
                   trail: int = TRAIL_FRAMES) -> Image.Image:
    """One frame: recent trajectory trails, current points, mesh edges."""
    bg = np.where(mask.bits, 96, 24).astype(np.uint8)
    img = Image.fromarray(bg).convert("RGB")
    draw = ImageDraw.Draw(img)
    topo = matrix.topology
    cur = matrix.frame(t)
    if topo is not None and topo.vertex_count == matrix.n_points:
        for i, j in topo.edges:
            draw.line([tuple(cur[i]), tuple(cur[j])], fill=(70, 70, 70), width=1)
    t0 = max(1, t - trail + 1)
    if t0 < t:
        seg = matrix.positions[:, t0 - 1:t]
        for i in range(matrix.n_points):
            draw.line([tuple(p) for p in seg[i]], fill=tuple(colors[i]), width=1)
    for i in range(matrix.n_points):
        x, y = cur[i]
        draw.ellipse([x - 1, y - 1, x + 1, y + 1], fill=tuple(colors[i]))
    return img


def render_sequence(matrix: TrajectoryMatrix, masks, out_dir, stride: int = 1,
                    limbs_frame1=None, trail: int = TRAIL_FRAMES) -> list:
    """Write overlay PNGs for frames 1, 1+stride, ...; returns the paths."""
    import os
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if limbs_frame1 is not None:
        colors = limb_point_colors(matrix.frame(1), limbs_frame1)
    else:
        colors = positional_point_colors(matrix.frame(1))
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for t in range(1, matrix.n_frames + 1, stride):
        img = render_overlay(matrix, masks[t - 1], t, colors, trail)
        path = os.path.join(out_dir, f"overlay_{t:05d}.png")
        img.save(path)
        paths.append(path)
    return paths
