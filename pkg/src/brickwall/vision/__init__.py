"""Camera pipeline: patch segmentation, quad extraction, planar pose and tracking."""

from .mht import Detection, Hypothesis, MHTParams, TrackSet, mht_update, wrap_half_turn
from .pipeline import detect_patches, read_jsonl, to_world, write_jsonl
from .pnp import PnPResult, patch_object_points, planar_pnp, pose_from_homography
from .quads import HUE_WINDOWS, PatchDetection, classify_hue, extract_quads, signed_area, simplify_contour
from .segment import SegmentationParams, box_sums, downsample, segment_hsv, segment_patches, to_hsv

__all__ = [
    "Detection", "Hypothesis", "MHTParams", "TrackSet", "mht_update", "wrap_half_turn", "detect_patches",
    "read_jsonl", "to_world", "write_jsonl", "PnPResult", "patch_object_points", "planar_pnp",
    "pose_from_homography", "HUE_WINDOWS", "PatchDetection", "classify_hue", "extract_quads", "signed_area",
    "simplify_contour", "SegmentationParams", "box_sums", "downsample", "segment_hsv", "segment_patches", "to_hsv",
]
