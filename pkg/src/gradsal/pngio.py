"""PNG round-trips for images, masks, and saliency maps.

Images are 8-bit RGB, masks and maps 8-bit grayscale. Float arrays use
[0, 1] with channel-first layout (3, H, W) for color.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def save_rgb(path, image: np.ndarray) -> None:
    """Write a (3, H, W) float array in [0, 1] as an 8-bit RGB PNG."""
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    u8 = np.floor(arr * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(np.moveaxis(u8, 0, 2), mode="RGB").save(path, format="PNG")


def load_rgb(path) -> np.ndarray:
    """Read an RGB PNG as a (3, H, W) float64 array in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return np.ascontiguousarray(np.moveaxis(arr, 2, 0)) / 255.0


def save_gray_u8(path, values: np.ndarray) -> None:
    """Write a (H, W) uint8 array as an 8-bit grayscale PNG."""
    arr = np.asarray(values, dtype=np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def load_gray_u8(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8)


def save_mask(path, mask: np.ndarray) -> None:
    save_gray_u8(path, np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8))


def load_mask(path) -> np.ndarray:
    return load_gray_u8(path) >= 128


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
