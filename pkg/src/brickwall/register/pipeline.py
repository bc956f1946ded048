"""Glue that turns nominal bricks plus raw scans into a refinement problem."""

from __future__ import annotations

from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from ..errors import Diverged
from ..geom import PointCloud, Pose3, voxel_downsample
from ..synth import render_model_cloud, split_brick_clouds
from ..world import BrickInstance
from .multi import AlignmentResult, BrickModel, CorrespondenceParams, MultiBrickProblem, contact_pairs
from .preprocess import preprocess_scan
from .rough import rough_align


def model_clouds(bricks: Sequence[BrickInstance], viewpoints: Sequence[Pose3], d: float = 0.02,
                 resolution=(600, 600), ground_margin: float = 0.05) -> Dict[int, PointCloud]:
    """Visible model samples per brick id, merged over all viewpoints.

    The ground is the plane z = 0.  Points within ``ground_margin`` of it are
    dropped, mirroring what scan preprocessing removes.
    """
    parts: Dict[int, List[PointCloud]] = {b.id: [] for b in bricks}
    for vp in viewpoints:
        clouds, _ = split_brick_clouds(render_model_cloud(bricks, vp, d, resolution=resolution))
        for bid, c in clouds:
            parts[bid].append(c)
    out = {}
    for bid, cs in parts.items():
        if cs:
            c = voxel_downsample(PointCloud.concatenate(cs), d, origin=np.full(3, d / 2))
            out[bid] = c.select(c.points[:, 2] > ground_margin)
    return out


def build_multi_problem(
    bricks: Sequence[BrickInstance],
    scans: Sequence[PointCloud],
    viewpoints: Sequence[Pose3],
    center: Pose3,
    cube_half_extent: float,
    d: float = 0.02,
    corr: Optional[CorrespondenceParams] = None,
    lambda_r: float = 1.0,
    lambda_t: float = 1.0,
    contact_eps: float = 0.01,
    model_resolution=(600, 600),
    ground_margin: float = 0.05,
) -> MultiBrickProblem:
    """Preprocess each scan with its own viewpoint, render models at the initial poses.

    Bricks that no viewpoint can see are left out of the problem.
    """
    if len(scans) != len(viewpoints):
        raise ValueError("one viewpoint per scan is required")
    pre = [preprocess_scan(s, center, cube_half_extent, d, viewpoint=vp.t, ground_margin=ground_margin)
           for s, vp in zip(scans, viewpoints)]
    scan = PointCloud.concatenate(pre)
    models = model_clouds(bricks, viewpoints, d, model_resolution, ground_margin)
    visible = [b for b in bricks if b.id in models and len(models[b.id])]
    contacts = contact_pairs(visible, contact_eps)
    entries = [BrickModel(b.id, models[b.id], b.pose) for b in visible]
    return MultiBrickProblem(entries, scan, contacts, lambda_r, lambda_t, corr or CorrespondenceParams())


def align_to_pile(
    scan: PointCloud,
    viewpoint: Pose3,
    init: Pose3,
    bricks: Sequence[BrickInstance],
    cube_half_extent: float = 2.0,
    score_dist: float = 0.03,
    cfg=None,
    flips: Sequence[float] = (0.0, np.pi),
) -> Tuple[Pose3, float]:
    """Rough-align a nominal pile model to a raw scan, resolving the half-turn ambiguity.

    ``init`` (pile -> world) typically comes from pile detection, whose axis
    is only defined up to a half turn.  Both ``init`` and ``init`` rotated by
    pi about z are refined (or only the yaw offsets in ``flips``); the one
    whose model points land within ``score_dist`` of the scan most often
    wins.  Returns the pose and that inlier fraction.
    """
    pre = preprocess_scan(scan, init, cube_half_extent, viewpoint=viewpoint.t)
    tree = cKDTree(pre.points)
    vp = viewpoint.with_frames(None, None)
    best = None
    for flip in flips:
        start = (init.with_frames(None, None) @ Pose3.from_xyz_yaw(0, 0, 0, flip)).with_frames("pile", "world")
        local_vp = start.inverse().with_frames(None, None) @ vp
        model = PointCloud.concatenate(list(model_clouds(bricks, [local_vp]).values()))
        try:
            T = rough_align(model, pre, start, cfg=cfg)
        except Diverged:
            continue
        d, _ = tree.query(T.apply(model.points))
        score = float(np.mean(d < score_dist))
        if best is None or score > best[1]:
            best = (T, score)
    if best is None:
        raise Diverged("both pile orientations lost their correspondences")
    return best


def register_pile(
    scan: PointCloud,
    viewpoint: Pose3,
    init: Pose3,
    bricks: Sequence[BrickInstance],
    cube_half_extent: float = 2.0,
    rough_cfg=None,
    solver_cfg=None,
) -> Tuple[Pose3, "AlignmentResult"]:
    """Rough alignment plus per-brick refinement of a pile for both half-turn starts.

    Bricks perturbed inside the pile make rigid inlier scores of the two
    orientations nearly equal, so each start is refined and the result with
    the higher mean brick confidence is kept.  ``bricks`` are nominal (pile
    frame); returns the rough pose and the refinement result.
    """
    from .multi import solve_multi_brick

    best = None
    for flip in (0.0, np.pi):
        try:
            T, _ = align_to_pile(scan, viewpoint, init, bricks, cube_half_extent, cfg=rough_cfg, flips=(flip,))
        except Diverged:
            continue
        Tn = T.with_frames(None, None)
        moved = [b.moved(Tn @ b.pose.with_frames(None, None)) for b in bricks]
        res = solve_multi_brick(build_multi_problem(moved, [scan], [viewpoint], T, cube_half_extent), solver_cfg)
        score = float(np.mean(res.confidence)) if len(res.ids) else 0.0
        if best is None or score > best[0]:
            best = (score, T, res)
    if best is None:
        raise Diverged("both pile orientations lost their correspondences")
    return best[1], best[2]
