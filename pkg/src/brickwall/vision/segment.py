"""Local-contrast segmentation of the white top patches."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import cv2
import numpy as np


@dataclass(frozen=True)
class SegmentationParams:
    """Thresholds are in 0..255 HSV units; the kernel acts on the half-resolution image."""

    box_kernel: int = 290
    lambda_s: int = 40
    lambda_v: int = 30
    corner_probe_dist: int = 4
    min_saturation: int = 100
    min_area: int = 20
    simplify_rel_tol: float = 0.25

    def __post_init__(self):
        if self.box_kernel < 1:
            raise ValueError("box_kernel must be >= 1")
        if self.lambda_s < 0 or self.lambda_v < 0:
            raise ValueError("thresholds must be non-negative")
        if self.corner_probe_dist < 1:
            raise ValueError("corner_probe_dist must be >= 1")

    @property
    def half_window(self) -> int:
        """Half width of the odd kernel actually used (even sizes are rounded up)."""
        return self.box_kernel // 2


def to_hsv(image: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Hexcone HSV: hue in degrees [0, 360), integer saturation and value in 0..255."""
    rgb = np.ascontiguousarray(image, dtype=np.uint8)
    hsv8 = cv2.cvtColor(rgb, cv2.COLOR_RGB2HSV_FULL)
    hue = cv2.cvtColor(rgb.astype(np.float32) / 255.0, cv2.COLOR_RGB2HSV)[..., 0].astype(float) % 360.0
    return hue, hsv8[..., 1].astype(np.int64), hsv8[..., 2].astype(np.int64)


def downsample(image: np.ndarray) -> np.ndarray:
    """Halve each dimension by 2x2 area averaging."""
    h, w = image.shape[:2]
    return cv2.resize(np.ascontiguousarray(image), (w // 2, h // 2), interpolation=cv2.INTER_AREA)


def box_sums(channel: np.ndarray, half: int) -> Tuple[np.ndarray, np.ndarray]:
    """Exact window sums and pixel counts with windows clamped at the borders."""
    H, W = channel.shape
    ii = np.zeros((H + 1, W + 1), np.int64)
    ii[1:, 1:] = np.cumsum(np.cumsum(channel.astype(np.int64), axis=0), axis=1)
    r = np.arange(H)
    c = np.arange(W)
    r0, r1 = np.clip(r - half, 0, H), np.clip(r + half + 1, 0, H)
    c0, c1 = np.clip(c - half, 0, W), np.clip(c + half + 1, 0, W)
    s = ii[r1][:, c1] - ii[r0][:, c1] - ii[r1][:, c0] + ii[r0][:, c0]
    n = np.outer(r1 - r0, c1 - c0).astype(np.int64)
    return s, n


def segment_hsv(sat: np.ndarray, val: np.ndarray, params: SegmentationParams = SegmentationParams(),
                exclusion_mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Apply ``S < mean(S) - lambda_S`` and ``V > mean(V) + lambda_V`` exactly in integers."""
    s_sum, n = box_sums(sat, params.half_window)
    v_sum, _ = box_sums(val, params.half_window)
    mask = (sat * n < s_sum - params.lambda_s * n) & (val * n > v_sum + params.lambda_v * n)
    if exclusion_mask is not None:
        ex = np.asarray(exclusion_mask, bool)
        if ex.shape != mask.shape:
            ex = cv2.resize(ex.astype(np.uint8), (mask.shape[1], mask.shape[0]), interpolation=cv2.INTER_NEAREST) > 0
        mask &= ~ex
    return mask.astype(np.uint8)


def segment_patches(image: np.ndarray, params: SegmentationParams = SegmentationParams(),
                    exclusion_mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Binary patch mask at half resolution.

    ``exclusion_mask`` (full or half resolution, nonzero = excluded) marks
    pixels to discard, e.g. around the gripper.
    """
    small = downsample(image)
    _, sat, val = to_hsv(small)
    return segment_hsv(sat, val, params, exclusion_mask)
