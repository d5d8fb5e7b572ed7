"""Shared raster helpers: decoding, color conversion, deterministic resampling.

Everything here is plain numpy on float64 arrays in [0, 1]; all operations
are deterministic so that downstream descriptors and thumbnails are
bit-reproducible.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


class DecodeError(Exception):
    """An image file could not be decoded."""


def load_rgb(path: str | Path) -> np.ndarray:
    """Decode an image file into an H x W x 3 float64 RGB array in [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except DecodeError:
        raise
    except Exception as exc:  # Pillow raises a zoo of exception types
        raise DecodeError(f"cannot decode {path}: {exc}") from exc
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DecodeError(f"unexpected image shape {arr.shape} for {path}")
    return arr


def luminance(rgb: np.ndarray) -> np.ndarray:
    """Rec. 601 luma of an RGB array in [0, 1]."""
    return rgb[..., 0] * 0.299 + rgb[..., 1] * 0.587 + rgb[..., 2] * 0.114


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Vectorized RGB -> HSV with hue and saturation in [0, 1).

    Matches the hexagonal-model semantics of ``colorsys.rgb_to_hsv``:
    V = max channel, S = chroma / V (0 where V = 0), H = 0 where chroma = 0.
    """
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = np.maximum(np.maximum(r, g), b)
    minc = np.minimum(np.minimum(r, g), b)
    c = maxc - minc
    safe_max = np.where(maxc > 0.0, maxc, 1.0)
    safe_c = np.where(c > 0.0, c, 1.0)
    s = np.where(maxc > 0.0, c / safe_max, 0.0)
    rc = (maxc - r) / safe_c
    gc = (maxc - g) / safe_c
    bc = (maxc - b) / safe_c
    h = np.select(
        [c == 0.0, maxc == r, maxc == g],
        [0.0, bc - gc, 2.0 + rc - bc],
        default=4.0 + gc - rc,
    )
    h = (h / 6.0) % 1.0
    return np.stack([h, s, maxc], axis=-1)


def _reduce_axis(arr: np.ndarray, out_len: int, axis: int) -> np.ndarray:
    """Exact area-averaging of one axis onto ``out_len`` equal-width cells.

    Treats the samples as a piecewise-constant profile; its integral is
    piecewise linear, so cell integrals follow from linearly interpolating
    the cumulative sum at the (possibly fractional) cell edges.
    """
    moved = np.moveaxis(np.asarray(arr, dtype=np.float64), axis, 0)
    n = moved.shape[0]
    csum = np.concatenate(
        [np.zeros((1,) + moved.shape[1:]), np.cumsum(moved, axis=0)], axis=0
    )
    edges = np.arange(out_len + 1, dtype=np.float64) * (n / out_len)
    lo = np.minimum(np.floor(edges).astype(np.int64), n)
    frac = edges - lo
    shape = (-1,) + (1,) * (moved.ndim - 1)
    vals = csum[lo] + frac.reshape(shape) * moved[np.minimum(lo, n - 1)]
    cells = (vals[1:] - vals[:-1]) * (out_len / n)
    return np.moveaxis(cells, 0, axis)


def area_resize(arr: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Area-average resample of a 2-D (or 2-D + channels) array to (h, w)."""
    h, w = out_hw
    if h < 1 or w < 1:
        raise ValueError(f"invalid target size {out_hw}")
    return _reduce_axis(_reduce_axis(arr, h, 0), w, 1)


def center_crop_square(arr: np.ndarray) -> np.ndarray:
    """Crop the longer axis symmetrically so the result is square."""
    h, w = arr.shape[:2]
    side = min(h, w)
    r0 = (h - side) // 2
    c0 = (w - side) // 2
    return arr[r0 : r0 + side, c0 : c0 + side]


def halve(arr: np.ndarray) -> np.ndarray:
    """2 x 2 box-mean downscale; both spatial dimensions must be even."""
    h, w = arr.shape[:2]
    if h % 2 or w % 2:
        raise ValueError(f"halve needs even dimensions, got {arr.shape}")
    half = arr.reshape((h // 2, 2, w // 2, 2) + arr.shape[2:])
    return half.mean(axis=(1, 3))


def to_uint8(arr: np.ndarray) -> np.ndarray:
    """Quantize a [0, 1] float array to uint8 with round-half-even."""
    return np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
