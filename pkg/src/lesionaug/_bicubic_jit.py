"""Compiled bicubic rotation kernel.

Mirrors ``imgops.sample_bicubic`` + ``imgops.round_half_away`` operation for
operation (same weight polynomials, same summation order), so the two paths
produce identical bytes. Imported lazily: numba is slow to import.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _weights(t, a, out):
    d0 = 1.0 + t
    d1 = t
    d2 = 1.0 - t
    d3 = 2.0 - t
    out[0] = ((a * d0 - 5.0 * a) * d0 + 8.0 * a) * d0 - 4.0 * a
    out[1] = ((a + 2.0) * d1 - (a + 3.0)) * d1 * d1 + 1.0
    out[2] = ((a + 2.0) * d2 - (a + 3.0)) * d2 * d2 + 1.0
    out[3] = ((a * d3 - 5.0 * a) * d3 + 8.0 * a) * d3 - 4.0 * a


@njit(cache=True, nogil=True)
def rotate_bicubic(img, cos_t, sin_t, a):
    h, w, _ = img.shape
    out = np.empty((h, w, 3), np.uint8)
    cx = (w - 1) / 2.0
    cy = (h - 1) / 2.0
    wx = np.empty(4)
    wy = np.empty(4)
    for y in range(h):
        dy = y - cy
        for x in range(w):
            dx = x - cx
            sx = cx + cos_t * dx - sin_t * dy
            sy = cy + sin_t * dx + cos_t * dy
            fx = math.floor(sx)
            fy = math.floor(sy)
            _weights(sx - fx, a, wx)
            _weights(sy - fy, a, wy)
            ix = int(fx)
            iy = int(fy)
            for ch in range(3):
                acc = 0.0
                for m in range(4):
                    yy = min(max(iy + m - 1, 0), h - 1)
                    row = 0.0
                    for n in range(4):
                        xx = min(max(ix + n - 1, 0), w - 1)
                        row += wx[n] * img[yy, xx, ch]
                    acc += wy[m] * row
                sign = 1.0 if acc > 0 else (-1.0 if acc < 0 else 0.0)
                v = sign * math.floor(abs(acc) + 0.5)
                out[y, x, ch] = np.uint8(min(max(v, 0.0), 255.0))
    return out
