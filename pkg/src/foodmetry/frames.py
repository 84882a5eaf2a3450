"""Keyframe selection: near-duplicate removal and blur rejection.

Frames are scanned in index order. A frame is dropped as a duplicate when
its 64-bit DCT hash is within a hamming-distance threshold of any frame
already kept, and dropped as blurry when its high-frequency energy score,
averaged over a sweep of even low-frequency cut radii, falls below a
threshold. Everything here is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dctn

from .images import luma

# Even cut radii swept by default when scoring blur.
DEFAULT_BLUR_RADII: tuple[int, ...] = tuple(range(0, 31, 2))

# Score threshold below which a frame counts as blurry. There is no
# universal value; calibrate per capture setup if needed.
DEFAULT_BLUR_THRESHOLD = 10.0

DEFAULT_HASH_THRESHOLD = 12


@dataclass(frozen=True)
class FrameRecord:
    """One capture instant: RGB plus optional depth and masks."""

    index: int
    rgb: np.ndarray
    depth: np.ndarray | None = None
    food_mask: np.ndarray | None = None
    reference_mask: np.ndarray | None = None

    def __post_init__(self):
        h, w = self.rgb.shape[:2]
        for name in ("depth", "food_mask", "reference_mask"):
            raster = getattr(self, name)
            if raster is not None and raster.shape[:2] != (h, w):
                raise ValueError(
                    f"frame {self.index}: {name} shape {raster.shape[:2]} "
                    f"does not match rgb {h}x{w}"
                )

    def gray(self) -> np.ndarray:
        return luma(self.rgb)


@dataclass(frozen=True)
class KeyframeSet:
    """Selection outcome: kept indices plus a per-frame decision log."""

    selected_indices: list[int]
    decisions: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "selected_indices", sorted(self.selected_indices))
        kept = {i for i, d in self.decisions.items() if d == "kept"}
        if set(self.selected_indices) != kept:
            raise ValueError("selected indices disagree with the decision log")


def _box_resample(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Exact area-average resample; deterministic for any input size."""

    def weights(n_in: int, n_out: int) -> np.ndarray:
        edges = np.linspace(0.0, n_in, n_out + 1)
        w = np.zeros((n_out, n_in))
        for i in range(n_out):
            lo, hi = edges[i], edges[i + 1]
            j0, j1 = int(np.floor(lo)), min(int(np.ceil(hi)), n_in)
            for j in range(j0, j1):
                w[i, j] = min(hi, j + 1) - max(lo, j)
        return w / w.sum(axis=1, keepdims=True)

    img = np.asarray(img, dtype=np.float64)
    return weights(img.shape[0], out_h) @ img @ weights(img.shape[1], out_w).T


def perceptual_hash(img: np.ndarray) -> int:
    """64-bit DCT signature of a gray image.

    The image is box-resampled to 32x32, transformed with an orthonormal
    2D DCT, and the top-left 8x8 coefficient block is binarized against
    the median of its 63 AC terms (one bit per coefficient, row-major,
    first coefficient in the most significant bit).
    """
    img = np.asarray(img)
    if img.size == 0:
        raise ValueError("cannot hash an empty image")
    if img.ndim == 3:
        img = luma(img)
    small = _box_resample(img, 32, 32)
    block = dctn(small, type=2, norm="ortho")[:8, :8].ravel()
    median = np.median(block[1:])
    h = 0
    for bit in block > median:
        h = (h << 1) | int(bit)
    return h


def hamming(h1: int, h2: int) -> int:
    """Number of differing bits between two 64-bit hashes."""
    return ((h1 ^ h2) & 0xFFFFFFFFFFFFFFFF).bit_count()


def blur_score(img: np.ndarray, radius: int) -> float:
    """High-frequency energy after suppressing a central FFT window.

    Takes the center-shifted 2D FFT magnitude, zeroes the central
    (2*radius+1)^2 low-frequency window, and returns the mean of
    log(1 + magnitude) over the remaining bins. Sharper images score
    higher; a constant image scores 0 for every radius.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ValueError(f"blur_score expects a non-empty gray image, got shape {img.shape}")
    h, w = img.shape
    if radius < 0 or radius % 2 != 0:
        raise ValueError(f"cut radius must be an even non-negative integer, got {radius}")
    if radius > min(h, w) // 2:
        raise ValueError(f"cut radius {radius} exceeds min(width, height)/2 = {min(h, w) // 2}")
    mag = np.abs(np.fft.fftshift(np.fft.fft2(img)))
    cy, cx = h // 2, w // 2
    keep = np.ones((h, w), dtype=bool)
    keep[max(0, cy - radius):cy + radius + 1, max(0, cx - radius):cx + radius + 1] = False
    if not keep.any():
        return 0.0
    return float(np.log1p(mag[keep]).mean())


def mean_blur_score(img: np.ndarray, radii=DEFAULT_BLUR_RADII) -> float:
    """Arithmetic mean of :func:`blur_score` over a radius sweep."""
    radii = list(radii)
    if not radii:
        raise ValueError("need at least one cut radius")
    return float(np.mean([blur_score(img, r) for r in radii]))


def select_keyframes(
    frames,
    hash_threshold: int = DEFAULT_HASH_THRESHOLD,
    blur_radii=DEFAULT_BLUR_RADII,
    blur_threshold: float = DEFAULT_BLUR_THRESHOLD,
) -> KeyframeSet:
    """Greedily keep frames that are neither near-duplicates nor blurry.

    Frames are visited in increasing index order. Each frame is compared
    against already-kept frames only, so permuting frames that come later
    can never change the decision on an earlier frame.
    """
    frames = sorted(frames, key=lambda f: f.index)
    if not frames:
        raise ValueError("no frames to select from")
    kept: list[tuple[int, int]] = []  # (index, hash)
    decisions: dict[int, str] = {}
    for frame in frames:
        gray = frame.gray()
        h = perceptual_hash(gray)
        witness = next((k for k, kh in kept if hamming(h, kh) <= hash_threshold), None)
        if witness is not None:
            decisions[frame.index] = f"duplicate-of-{witness}"
            continue
        if mean_blur_score(gray, blur_radii) < blur_threshold:
            decisions[frame.index] = "blurry"
            continue
        decisions[frame.index] = "kept"
        kept.append((frame.index, h))
    return KeyframeSet([i for i, _ in kept], decisions)
