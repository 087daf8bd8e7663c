"""Binary silhouette masks and their signed Euclidean distance fields."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EmptySilhouetteError, FormatError

_CONN8 = np.ones((3, 3), dtype=bool)


@dataclass
class SilhouetteMask:
    """Binary figure/background grid for one frame (True = figure)."""

    bits: np.ndarray  # (H, W) bool

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.ndim != 2 or self.bits.size == 0:
            raise ValueError("mask must be a non-empty 2D grid")
        if not self.bits.any():
            raise EmptySilhouetteError("mask contains no figure pixels")

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def area(self) -> int:
        return int(self.bits.sum())


@dataclass
class DistanceField:
    """Signed Euclidean distance to the silhouette boundary, in pixels.

    Negative inside the figure, positive outside, zero on boundary pixels
    (figure pixels 8-adjacent to background).
    """

    values: np.ndarray  # (H, W) float

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def _round_half_away(v: float) -> int:
    return int(math.floor(v + 0.5)) if v >= 0 else -int(math.floor(-v + 0.5))


def _parse_pgm(data: bytes) -> np.ndarray:
    # P5 with maxval 255; whitespace-separated header, '#' comments allowed
    if not data.startswith(b"P5"):
        raise FormatError("not a P5 PGM stream")
    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(data):
            raise FormatError("truncated PGM header")
        c = data[pos:pos + 1]
        if c == b"#":
            nl = data.find(b"\n", pos)
            if nl < 0:
                raise FormatError("unterminated PGM comment")
            pos = nl + 1
        elif c.isspace():
            pos += 1
        else:
            end = pos
            while end < len(data) and not data[end:end + 1].isspace():
                end += 1
            fields.append(data[pos:end])
            pos = end
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise FormatError("non-numeric PGM header field") from exc
    if maxval != 255:
        raise FormatError(f"unsupported PGM maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    raster = data[pos:pos + width * height]
    if len(raster) < width * height:
        raise FormatError("truncated PGM raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width)


def _decode_gray(data: bytes) -> np.ndarray:
    if data.startswith(b"P5"):
        return _parse_pgm(data)
    if data.startswith(b"\x89PNG"):
        from PIL import Image, UnidentifiedImageError
        try:
            img = Image.open(io.BytesIO(data))
            img.load()
        except UnidentifiedImageError as exc:
            raise FormatError("undecodable PNG stream") from exc
        return np.asarray(img.convert("L"))
    raise FormatError("unrecognized image format (expected P5 PGM or PNG)")


def load_mask(data: bytes) -> SilhouetteMask:
    """Decode a grayscale PGM/PNG into a mask, keeping only the largest
    8-connected figure component."""
    gray = _decode_gray(data)
    bits = gray >= 128
    if not bits.any():
        raise EmptySilhouetteError("image thresholds to an empty silhouette")
    labels, count = ndimage.label(bits, structure=_CONN8)
    if count > 1:
        sizes = np.bincount(labels.ravel())
        sizes[0] = 0
        bits = labels == sizes.argmax()
    return SilhouetteMask(bits)


def read_mask(path) -> SilhouetteMask:
    with open(path, "rb") as fh:
        return load_mask(fh.read())


def mask_to_pgm(mask: SilhouetteMask) -> bytes:
    """Canonical P5 encoding (0 background, 255 figure)."""
    header = f"P5\n{mask.width} {mask.height}\n255\n".encode()
    return header + (mask.bits.astype(np.uint8) * 255).tobytes()


def write_mask(mask: SilhouetteMask, path) -> None:
    with open(path, "wb") as fh:
        fh.write(mask_to_pgm(mask))


def boundary_pixels(mask: SilhouetteMask) -> np.ndarray:
    """Figure pixels with at least one background 8-neighbor (image border
    counts as background)."""
    interior = ndimage.binary_erosion(mask.bits, structure=_CONN8, border_value=0)
    return mask.bits & ~interior


def signed_distance(mask: SilhouetteMask) -> DistanceField:
    """Exact signed Euclidean distance to the boundary pixel set."""
    boundary = boundary_pixels(mask)
    dist = ndimage.distance_transform_edt(~boundary)
    return DistanceField(np.where(mask.bits, -dist, dist))


def is_inside(mask: SilhouetteMask, p) -> bool:
    """True iff the nearest pixel (half rounds away from zero) is figure."""
    x, y = float(p[0]), float(p[1])
    ix, iy = _round_half_away(x), _round_half_away(y)
    if ix < 0 or iy < 0 or ix >= mask.width or iy >= mask.height:
        return False
    return bool(mask.bits[iy, ix])


def points_inside(mask: SilhouetteMask, points) -> np.ndarray:
    """Vectorized is_inside for an (N, 2) array of points."""
    pts = np.asarray(points, dtype=float)
    ix = np.where(pts[:, 0] >= 0, np.floor(pts[:, 0] + 0.5),
                  -np.floor(-pts[:, 0] + 0.5)).astype(np.int64)
    iy = np.where(pts[:, 1] >= 0, np.floor(pts[:, 1] + 0.5),
                  -np.floor(-pts[:, 1] + 0.5)).astype(np.int64)
    ok = (ix >= 0) & (iy >= 0) & (ix < mask.width) & (iy < mask.height)
    out = np.zeros(len(pts), dtype=bool)
    out[ok] = mask.bits[iy[ok], ix[ok]]
    return out


def sample_distance(field: DistanceField, points) -> np.ndarray:
    """Bilinear sample of the distance field at continuous points.

    Points outside the image rectangle are clamped and the clamp distance
    is added, preserving "farther out means larger" monotonicity.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    h, w = field.values.shape
    cx = np.clip(pts[:, 0], 0.0, w - 1.0)
    cy = np.clip(pts[:, 1], 0.0, h - 1.0)
    overshoot = np.hypot(pts[:, 0] - cx, pts[:, 1] - cy)
    x0 = np.clip(np.floor(cx).astype(np.int64), 0, w - 2) if w > 1 else np.zeros(len(pts), np.int64)
    y0 = np.clip(np.floor(cy).astype(np.int64), 0, h - 2) if h > 1 else np.zeros(len(pts), np.int64)
    fx = cx - x0
    fy = cy - y0
    v = field.values
    if w == 1:
        fx = np.zeros_like(fx)
    if h == 1:
        fy = np.zeros_like(fy)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    top = v[y0, x0] * (1 - fx) + v[y0, x1] * fx
    bot = v[y1, x0] * (1 - fx) + v[y1, x1] * fx
    return top * (1 - fy) + bot * fy + overshoot


def nearest_inside_pixel(mask: SilhouetteMask, points) -> np.ndarray:
    """For each point, the (x, y) center of the nearest figure pixel."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    _, (iy, ix) = ndimage.distance_transform_edt(~mask.bits, return_indices=True)
    px = np.clip(np.rint(pts[:, 0]).astype(np.int64), 0, mask.width - 1)
    py = np.clip(np.rint(pts[:, 1]).astype(np.int64), 0, mask.height - 1)
    return np.stack([ix[py, px], iy[py, px]], axis=1).astype(float)
