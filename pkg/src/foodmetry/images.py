"""Image raster conventions and PNG I/O.

Array conventions (row-major, index [row, col]):

* gray image: (h, w) uint8
* RGB image: (h, w, 3) uint8
* depth map: (h, w) float64 meters, 0 means "no reading"; stored on disk
  as 16-bit single-channel PNG in millimeters
* binary mask: (h, w) bool; stored as 8-bit PNG, nonzero = foreground
"""

from __future__ import annotations

import numpy as np
from PIL import Image

# ITU-R 601 luma weights, fixed so hashes computed from RGB input are
# reproducible bit-for-bit across implementations.
_LUMA = np.array([0.299, 0.587, 0.114])


def luma(rgb: np.ndarray) -> np.ndarray:
    """Convert an (h, w, 3) RGB image to (h, w) uint8 gray via ITU-R 601."""
    rgb = np.asarray(rgb)
    if rgb.ndim == 2:
        return rgb.astype(np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected (h, w, 3) RGB, got shape {rgb.shape}")
    y = rgb.astype(np.float64) @ _LUMA
    return np.clip(np.rint(y), 0, 255).astype(np.uint8)


def load_gray(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB") if im.mode not in ("L", "I", "I;16") else im)
    if arr.ndim == 3:
        return luma(arr)
    if arr.dtype != np.uint8:
        arr = np.clip(arr, 0, 255).astype(np.uint8)
    return arr


def load_rgb(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def load_depth(path) -> np.ndarray:
    """Read a 16-bit millimeter PNG as float64 meters."""
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim != 2:
        raise ValueError(f"{path}: depth PNG must be single-channel, got shape {arr.shape}")
    return arr.astype(np.float64) / 1000.0


def load_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return arr != 0


def save_gray(img: np.ndarray, path) -> None:
    Image.fromarray(np.asarray(img, dtype=np.uint8), mode="L").save(path)


def save_rgb(img: np.ndarray, path) -> None:
    Image.fromarray(np.asarray(img, dtype=np.uint8), mode="RGB").save(path)


def save_depth(depth_m: np.ndarray, path) -> None:
    """Write meters as a 16-bit millimeter PNG (values clipped to uint16)."""
    mm = np.clip(np.rint(np.asarray(depth_m, dtype=np.float64) * 1000.0), 0, 65535)
    Image.fromarray(mm.astype(np.uint16)).save(path)


def save_mask(mask: np.ndarray, path) -> None:
    Image.fromarray(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8),
                    mode="L").save(path)
