"""Pixel kernels: horizontal flip, bicubic rotation, max-RGB normalization.

Images are ``uint8`` arrays of shape ``(height, width, 3)``, i.e. row-major
interleaved RGB. Every kernel returns a new array and never mutates its input.
"""

from __future__ import annotations

import math
import os

import numpy as np

CUBIC_A = -0.5


def check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise TypeError(f"expected uint8 image, got {img.dtype}")
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"expected (height, width, 3) image, got shape {img.shape}")
    return img


def round_half_away(values: np.ndarray) -> np.ndarray:
    """Round half away from zero, clamp to [0, 255], cast to uint8."""
    rounded = np.sign(values) * np.floor(np.abs(values) + 0.5)
    return np.clip(rounded, 0, 255).astype(np.uint8)


def hflip(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(check_image(img)[:, ::-1, :])


def cubic_weights(t: np.ndarray | float, a: float = CUBIC_A) -> np.ndarray:
    """Keys cubic-convolution weights for taps at offsets -1, 0, 1, 2.

    ``t`` is the fractional position in [0, 1); the result has a trailing axis
    of length 4.
    """
    t = np.asarray(t, dtype=np.float64)
    d0 = 1.0 + t
    d1 = t
    d2 = 1.0 - t
    d3 = 2.0 - t

    def near(d):
        return ((a + 2.0) * d - (a + 3.0)) * d * d + 1.0

    def far(d):
        return ((a * d - 5.0 * a) * d + 8.0 * a) * d - 4.0 * a

    return np.stack([far(d0), near(d1), near(d2), far(d3)], axis=-1)


_PAD = 3


def sample_bicubic(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bicubic samples at float coordinates with clamp-to-edge taps.

    Returns float64 values of shape ``xs.shape + (3,)``, unrounded.
    """
    h, w = img.shape[:2]
    # edge padding stands in for per-tap index clamping; base indices are
    # clipped so every tap of a far-outside position lands in the padding
    wp = w + 2 * _PAD
    flat = np.pad(img, ((_PAD, _PAD), (_PAD, _PAD), (0, 0)), mode="edge").reshape(-1, 3)
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    wx = cubic_weights(xs - x0)
    wy = cubic_weights(ys - y0)
    x0 = np.clip(x0.astype(np.int64), -2, w) + _PAD
    y0 = np.clip(y0.astype(np.int64), -2, h) + _PAD

    out = np.zeros(xs.shape + (3,), dtype=np.float64)
    for m in range(4):
        base = (y0 + (m - 1)) * wp + x0
        row = np.zeros_like(out)
        for n in range(4):
            row += wx[..., n, None] * flat[base + (n - 1)]
        out += wy[..., m, None] * row
    return out


def rotate_reference(img: np.ndarray, cos_t: float, sin_t: float) -> np.ndarray:
    """Vectorized numpy rotation; the compiled kernel must match it bit for bit."""
    h, w = img.shape[:2]
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    dx = xs - cx
    dy = ys - cy
    sx = cx + cos_t * dx - sin_t * dy
    sy = cy + sin_t * dx + cos_t * dy
    return round_half_away(sample_bicubic(img, sx, sy))


_jit_kernel = None


def _compiled_rotate():
    global _jit_kernel
    if _jit_kernel is None:
        if os.environ.get("LESIONAUG_NO_JIT"):
            _jit_kernel = False
        else:
            try:
                from ._bicubic_jit import rotate_bicubic
            except ImportError:
                _jit_kernel = False
            else:
                _jit_kernel = rotate_bicubic
    return _jit_kernel or None


def _quarter_turn_sources(h: int, w: int, k: int) -> tuple[np.ndarray, np.ndarray] | None:
    # doubled coordinates keep the centre offsets integral
    cos_t, sin_t = [(1, 0), (0, 1), (-1, 0), (0, -1)][k]
    ys, xs = np.mgrid[0:h, 0:w]
    dx2 = 2 * xs - (w - 1)
    dy2 = 2 * ys - (h - 1)
    sx2 = (w - 1) + cos_t * dx2 - sin_t * dy2
    sy2 = (h - 1) + sin_t * dx2 + cos_t * dy2
    if np.any(sx2 % 2) or np.any(sy2 % 2):
        return None
    return sx2 // 2, sy2 // 2


def rotate(img: np.ndarray, theta: float) -> np.ndarray:
    """Rotate about the exact image centre on a same-size canvas.

    Positive ``theta`` turns the picture counter-clockwise as displayed
    (``rotate(img, 90)`` equals ``np.rot90(img)`` for square images). An
    output pixel ``(x, y)`` samples the source at

        sx = cx + cos(theta) * (x - cx) - sin(theta) * (y - cy)
        sy = cy + sin(theta) * (x - cx) + cos(theta) * (y - cy)

    with ``(cx, cy) = ((w - 1) / 2, (h - 1) / 2)``. Quarter turns are exact
    index remaps; other angles use Keys bicubic sampling. Source positions
    outside the image take the nearest edge value.

    Uses the numba kernel when available (set ``LESIONAUG_NO_JIT=1`` to force
    the numpy path); both give identical bytes.
    """
    img = check_image(img)
    h, w = img.shape[:2]
    turns = theta / 90.0
    if float(turns).is_integer():
        k = int(turns) % 4
        if k == 0:
            return img.copy()
        remap = _quarter_turn_sources(h, w, k)
        if remap is not None:
            sx, sy = remap
            return img[np.clip(sy, 0, h - 1), np.clip(sx, 0, w - 1)]
        cos_t, sin_t = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)][k]
    else:
        rad = math.radians(theta)
        cos_t, sin_t = math.cos(rad), math.sin(rad)

    kernel = _compiled_rotate()
    if kernel is not None:
        return kernel(np.ascontiguousarray(img), cos_t, sin_t, CUBIC_A)
    return rotate_reference(img, cos_t, sin_t)


def max_rgb_normalize(img: np.ndarray) -> np.ndarray:
    """White-patch colour constancy: scale each channel so its maximum is 255.

    Each sample becomes ``round_half_up(s * 255 / m_c)`` computed in integer
    arithmetic; channels whose maximum is 0 are left alone.
    """
    img = check_image(img)
    out = img.copy()
    # rows first: contiguous reduction
    maxima = img.max(axis=0).max(axis=0)
    levels = np.arange(256, dtype=np.int64)
    for c in range(3):
        m = int(maxima[c])
        if m == 0 or m == 255:
            continue
        lut = np.minimum((2 * 255 * levels + m) // (2 * m), 255).astype(np.uint8)
        out[..., c] = lut[img[..., c]]
    return out


def apply_operation(
    img: np.ndarray,
    flip: bool,
    angle: float | None,
    normalize: bool = False,
    normalize_first: bool = False,
) -> np.ndarray:
    """Flip, then rotate, then (optionally) normalize; normalization may go first."""
    out = check_image(img)
    if normalize and normalize_first:
        out = max_rgb_normalize(out)
    if flip:
        out = hflip(out)
    if angle is not None:
        out = rotate(out, angle)
    if normalize and not normalize_first:
        out = max_rgb_normalize(out)
    return out
