"""Pose of a rectangular patch from its four image corners."""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from ..errors import DegenerateQuad
from ..geom import Pose3
from ..synth import CameraIntrinsics
from ..world import brick_spec

AMBIGUITY_RATIO = 1.2


@dataclass
class PnPResult:
    pose: Pose3
    rmse: float
    rmse_initial: float
    ambiguous: bool


def patch_object_points(length: float, width: float) -> np.ndarray:
    """Patch corners in the patch frame (x along the long side, z out of the top face)."""
    return np.array([[-length / 2, -width / 2, 0], [length / 2, -width / 2, 0],
                     [length / 2, width / 2, 0], [-length / 2, width / 2, 0]], float)


def _reprojection_rmse(obj, img, R, t, K) -> float:
    pc = obj @ R.T + t
    uv = (pc @ K.T)[:, :2] / pc[:, 2:3]
    return float(np.sqrt(np.mean(np.sum((uv - img) ** 2, axis=1))))


def pose_from_homography(H: np.ndarray, K: np.ndarray):
    """Rotation and translation of the plane z = 0 from a metric homography."""
    B = np.linalg.solve(K, H)
    scale = 2.0 / (np.linalg.norm(B[:, 0]) + np.linalg.norm(B[:, 1]))
    B = B * scale
    if B[2, 2] < 0:  # plane must sit in front of the camera
        B = -B
    r1, r2, t = B[:, 0], B[:, 1], B[:, 2]
    M = np.column_stack([r1, r2, np.cross(r1, r2)])
    U, _, Vt = np.linalg.svd(M)
    R = U @ np.diag([1.0, 1.0, np.linalg.det(U @ Vt)]) @ Vt
    return R, t


def planar_pnp(quad, brick_type, intrinsics: CameraIntrinsics = CameraIntrinsics(), patch_size=None) -> PnPResult:
    """Pose camera<-patch: homography DLT, decomposition, then reprojection refinement.

    The longer pair of image sides is matched to the patch's long side.  The
    remaining 180 degree symmetry of a rectangle is resolved arbitrarily, and
    the result is flagged ambiguous when the image side ratio is below 1.2.
    """
    q = np.asarray(quad, float).reshape(4, 2)
    area = 0.5 * abs(q[:, 0] @ np.roll(q[:, 1], -1) - q[:, 1] @ np.roll(q[:, 0], -1))
    sides = np.linalg.norm(np.roll(q, -1, axis=0) - q, axis=1)
    if area < 1.0 or sides.min() < 1e-6:
        raise DegenerateQuad("quad has (near) zero area")
    for k in range(4):
        a, b, c = q[k], q[(k + 1) % 4], q[(k + 2) % 4]
        cr = (b - a)[0] * (c - b)[1] - (b - a)[1] * (c - b)[0]
        if abs(cr) < 1e-3 * np.linalg.norm(b - a) * np.linalg.norm(c - b):
            raise DegenerateQuad("three corners are collinear")
    length, width = patch_size if patch_size is not None else brick_spec(brick_type).patch_size
    long_pair = (sides[0] + sides[2]) >= (sides[1] + sides[3])
    img = q if long_pair else np.roll(q, -1, axis=0)
    pair = sorted([(sides[0] + sides[2]) / 2, (sides[1] + sides[3]) / 2])
    ambiguous = pair[1] / pair[0] < AMBIGUITY_RATIO
    obj = patch_object_points(length, width)
    K = intrinsics.K
    best = None
    # the image corner order may be mirrored relative to the object order
    for cand in (img, img[[1, 0, 3, 2]]):
        Hm, _ = cv2.findHomography(obj[:, :2], cand, 0)
        if Hm is None:
            continue
        R, t = pose_from_homography(Hm, K)
        if R[:, 2] @ t >= 0:  # patch top face must look at the camera
            continue
        e = _reprojection_rmse(obj, cand, R, t, K)
        if best is None or e < best[3]:
            best = (cand, R, t, e)
    if best is None:
        raise DegenerateQuad("no consistent homography")
    cand, R0, t0, e0 = best
    rvec, _ = cv2.Rodrigues(R0)
    rvec, tvec = cv2.solvePnPRefineLM(obj, cand.astype(np.float64), K, None, rvec.copy(), t0.reshape(3, 1).copy())
    R1 = cv2.Rodrigues(rvec)[0]
    t1 = tvec.reshape(3)
    e1 = _reprojection_rmse(obj, cand, R1, t1, K)
    if e1 > e0:
        R1, t1, e1 = R0, t0, e0
    return PnPResult(Pose3.from_rt(R1, t1, "patch", "camera"), e1, e0, bool(ambiguous))
