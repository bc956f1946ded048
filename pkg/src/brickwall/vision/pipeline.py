"""Per-frame detection pipeline and JSON-lines I/O."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, List, Optional

import numpy as np

from ..errors import DegenerateQuad
from ..geom import Pose3
from ..synth import CameraIntrinsics
from .mht import Detection
from .pnp import planar_pnp
from .quads import PatchDetection, extract_quads
from .segment import SegmentationParams, segment_patches


def detect_patches(image: np.ndarray, intrinsics: CameraIntrinsics = CameraIntrinsics(),
                   params: SegmentationParams = SegmentationParams(),
                   exclusion_mask: Optional[np.ndarray] = None) -> List[PatchDetection]:
    """Segment, extract quads and estimate each patch pose (camera <- patch)."""
    mask = segment_patches(image, params, exclusion_mask)
    out = []
    for det in extract_quads(mask, image, params):
        try:
            res = planar_pnp(det.quad, det.type, intrinsics)
        except DegenerateQuad:
            continue
        det.pose, det.rmse, det.ambiguous = res.pose, res.rmse, res.ambiguous
        out.append(det)
    return out


def to_world(dets: Iterable[PatchDetection], cam_pose: Pose3) -> List[Detection]:
    """Patch centers and yaw in the world frame; ``cam_pose`` maps the optical frame to the world."""
    out = []
    for d in dets:
        if d.pose is None:
            continue
        w = cam_pose.with_frames("camera", cam_pose.to_frame) @ d.pose
        out.append(Detection(w.t, w.yaw(), d.type))
    return out


def write_jsonl(path, records: Iterable[dict]) -> None:
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r) + "\n")


def read_jsonl(path) -> List[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
