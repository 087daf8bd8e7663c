"""Dense optical flow fields: .flo I/O, bicubic sampling, fallback estimator.

Flow convention: a point at ``p`` in frame t appears at ``p + flow(p)`` in
frame t+1; ``u`` holds x displacements and ``v`` y displacements.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import FormatError

FLO_MAGIC = 202021.25
UNKNOWN_FLOW = 1e9  # format sentinel for unreliable vectors


@dataclass
class FlowField:
    """Per-pixel displacement grid; stored float32 so .flo round-trips are
    bit-exact."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.u = np.ascontiguousarray(self.u, dtype=np.float32)
        self.v = np.ascontiguousarray(self.v, dtype=np.float32)
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise ValueError("u and v must be matching 2D grids")
        if not (np.isfinite(self.u).all() and np.isfinite(self.v).all()):
            raise ValueError("flow values must be finite")

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @classmethod
    def constant(cls, width: int, height: int, du: float, dv: float) -> "FlowField":
        return cls(np.full((height, width), du, dtype=np.float32),
                   np.full((height, width), dv, dtype=np.float32))


def read_flo(data: bytes) -> FlowField:
    """Parse a Middlebury .flo byte stream."""
    if len(data) < 12:
        raise FormatError("flo stream shorter than its header")
    magic, width, height = struct.unpack("<fii", data[:12])
    if magic != FLO_MAGIC:
        raise FormatError(f"bad flo magic {magic!r}")
    if width <= 0 or height <= 0 or width * height > 10**8:
        raise FormatError(f"implausible flo dimensions {width}x{height}")
    expected = 12 + 8 * width * height
    if len(data) < expected:
        raise FormatError(f"truncated flo payload: {len(data)} < {expected} bytes")
    raw = np.frombuffer(data[12:expected], dtype="<f4").reshape(height, width, 2)
    uv = raw.copy()
    uv[~np.isfinite(uv)] = 0.0
    uv[np.abs(uv) > UNKNOWN_FLOW] = 0.0
    return FlowField(uv[:, :, 0], uv[:, :, 1])


def write_flo(field: FlowField) -> bytes:
    header = struct.pack("<fii", FLO_MAGIC, field.width, field.height)
    uv = np.stack([field.u, field.v], axis=-1).astype("<f4")
    return header + uv.tobytes()


def read_flo_file(path) -> FlowField:
    with open(path, "rb") as fh:
        return read_flo(fh.read())


def write_flo_file(field: FlowField, path) -> None:
    with open(path, "wb") as fh:
        fh.write(write_flo(field))


def _catmull_rom_weights(t: np.ndarray) -> np.ndarray:
    """Kernel weights for taps at offsets -1, 0, +1, +2; shape (len(t), 4)."""
    t2 = t * t
    t3 = t2 * t
    return 0.5 * np.stack([
        -t3 + 2 * t2 - t,
        3 * t3 - 5 * t2 + 2,
        -3 * t3 + 4 * t2 + t,
        t3 - t2,
    ], axis=-1)


def _sample_grid_bicubic(grid: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    h, w = grid.shape
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    wx = _catmull_rom_weights(xs - x0)
    wy = _catmull_rom_weights(ys - y0)
    out = np.zeros(xs.shape, dtype=float)
    g = grid.astype(float, copy=False)
    for j in range(4):
        row = np.clip(y0 + j - 1, 0, h - 1)
        acc = np.zeros(xs.shape, dtype=float)
        for i in range(4):
            col = np.clip(x0 + i - 1, 0, w - 1)
            acc += wx[..., i] * g[row, col]
        out += wy[..., j] * acc
    return out


def sample_bicubic(field: FlowField, points) -> np.ndarray:
    """Catmull-Rom bicubic sample of (u, v) at continuous points.

    Accepts a single (x, y) point or an (N, 2) array; coordinates are
    clamped to the grid (edge replication). Returns matching shape.
    """
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    xs, ys = pts[:, 0], pts[:, 1]
    du = _sample_grid_bicubic(field.u, xs, ys)
    dv = _sample_grid_bicubic(field.v, xs, ys)
    out = np.stack([du, dv], axis=-1)
    return out[0] if single else out


def _displacement_order(radius: int) -> np.ndarray:
    """Search offsets sorted by (magnitude^2, dx, dy) so argmin's
    first-match rule breaks SSD ties deterministically."""
    offs = [(dx * dx + dy * dy, dx, dy)
            for dx in range(-radius, radius + 1)
            for dy in range(-radius, radius + 1)]
    offs.sort()
    return np.array([(dx, dy) for _, dx, dy in offs], dtype=np.int64)


def _block_match(a: np.ndarray, b: np.ndarray, radius: int, patch: int):
    h, w = a.shape
    padded = np.pad(b, radius, mode="edge")
    order = _displacement_order(radius)
    ssd = np.empty((len(order), h, w), dtype=np.float64)
    for k, (dx, dy) in enumerate(order):
        win = padded[radius + dy: radius + dy + h, radius + dx: radius + dx + w]
        diff = a - win
        ssd[k] = ndimage.uniform_filter(diff * diff, size=patch, mode="nearest")
    best = np.argmin(ssd, axis=0)
    return order[best, 0].astype(np.float64), order[best, 1].astype(np.float64)


def _upsample_to(grid: np.ndarray, shape) -> np.ndarray:
    ys = np.arange(shape[0]) / 2.0
    xs = np.arange(shape[1]) / 2.0
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return ndimage.map_coordinates(grid, [yy, xx], order=1, mode="nearest")


def estimate_flow(frame_a, frame_b, levels: int = 3, radius: int = 4,
                  patch: int = 9) -> FlowField:
    """Coarse-to-fine block-matching flow between two grayscale frames.

    Builds a Gaussian pyramid, runs a per-pixel SSD search (±radius,
    patch x patch window) at each level on the warped target, accumulates
    the field, and median-filters the final result 3x3. SSD ties resolve
    toward the smallest displacement, then lexicographically (u, then v),
    so constant inputs give an exactly zero field.
    """
    a = np.asarray(frame_a, dtype=np.float64)
    b = np.asarray(frame_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ValueError("frames must be 2D grayscale")
    if levels < 1:
        raise ValueError("levels must be >= 1")
    # drop levels that would shrink below the matching window
    while levels > 1 and min(a.shape) // (2 ** (levels - 1)) < patch:
        levels -= 1
    pyr = [(a, b)]
    for _ in range(levels - 1):
        pa, pb = pyr[-1]
        pyr.append((ndimage.gaussian_filter(pa, 1.0)[::2, ::2],
                    ndimage.gaussian_filter(pb, 1.0)[::2, ::2]))
    u = np.zeros(pyr[-1][0].shape)
    v = np.zeros(pyr[-1][0].shape)
    for level in range(levels - 1, -1, -1):
        la, lb = pyr[level]
        if la.shape != u.shape:
            u = 2.0 * _upsample_to(u, la.shape)
            v = 2.0 * _upsample_to(v, la.shape)
        yy, xx = np.meshgrid(np.arange(la.shape[0], dtype=float),
                             np.arange(la.shape[1], dtype=float), indexing="ij")
        warped = ndimage.map_coordinates(lb, [yy + v, xx + u], order=1, mode="nearest")
        du, dv = _block_match(la, warped, radius, patch)
        u += du
        v += dv
    u = ndimage.median_filter(u, size=3, mode="nearest")
    v = ndimage.median_filter(v, size=3, mode="nearest")
    return FlowField(u, v)
