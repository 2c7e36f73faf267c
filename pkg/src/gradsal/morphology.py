"""Grayscale morphology with square structuring elements.

Max/min filters are computed from shifted slices of a padded array;
borders pad with -inf (dilation) or +inf (erosion) so the element only
ever sees in-image values. Pure max/min means closing and opening are
bit-exact idempotent.
"""

from __future__ import annotations

import numpy as np


def _shift_reduce(values: np.ndarray, size: int, pad_value: float, op) -> np.ndarray:
    if size < 1 or size % 2 == 0:
        raise ValueError(f"element size must be odd and positive, got {size}")
    r = size // 2
    padded = np.pad(values.astype(np.float64), r, constant_values=pad_value)
    h, w = values.shape
    out = padded[r:r + h, r:r + w].copy()
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dy == 0 and dx == 0:
                continue
            op(out, padded[r + dy:r + dy + h, r + dx:r + dx + w], out=out)
    return out


def dilate(values: np.ndarray, size: int = 3) -> np.ndarray:
    return _shift_reduce(values, size, -np.inf, np.maximum)


def erode(values: np.ndarray, size: int = 3) -> np.ndarray:
    return _shift_reduce(values, size, np.inf, np.minimum)


def close(values: np.ndarray, size: int = 3) -> np.ndarray:
    """Dilate then erode: fills gaps smaller than the element."""
    return erode(dilate(values, size), size)


def open_(values: np.ndarray, size: int = 3) -> np.ndarray:
    """Erode then dilate: removes specks smaller than the element."""
    return dilate(erode(values, size), size)


def binary_dilate(mask: np.ndarray, size: int = 3) -> np.ndarray:
    return dilate(mask.astype(np.float64), size) > 0.5


def binary_close(mask: np.ndarray, size: int = 3) -> np.ndarray:
    return close(mask.astype(np.float64), size) > 0.5
