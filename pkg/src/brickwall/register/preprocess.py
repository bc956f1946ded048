"""Scan preprocessing ahead of model alignment."""

from __future__ import annotations

import numpy as np

from ..errors import EmptyAfterPreprocess
from ..geom import PointCloud, Pose3, crop_box, estimate_normals, fit_plane_ransac, voxel_downsample


def preprocess_scan(
    scan: PointCloud,
    center: Pose3,
    cube_half_extent: float,
    d: float = 0.02,
    viewpoint=None,
    ground_threshold: float = 0.02,
    ground_margin: float = 0.05,
    normal_radius: float = 0.06,
    rng_seed: int = 0,
) -> PointCloud:
    """Crop a cube around ``center``, downsample, drop the ground and add normals.

    Points closer than ``ground_margin`` to the RANSAC ground plane (or below
    it) are removed.  Normals are flipped toward ``viewpoint`` (defaults to a
    point high above the cube center).
    """
    if len(scan) == 0:
        raise EmptyAfterPreprocess("empty scan")
    cloud = crop_box(scan, center, cube_half_extent)
    if len(cloud) == 0:
        raise EmptyAfterPreprocess("no points inside the crop cube")
    cloud = voxel_downsample(cloud, d, origin=np.full(3, d / 2))
    if len(cloud) >= 3:
        plane = fit_plane_ransac(cloud.points, ground_threshold, rng_seed=rng_seed)
        n, off = plane.normal, plane.offset
        if n[2] < 0:
            n, off = -n, -off
        cloud = cloud.select(cloud.points @ n + off > ground_margin)
    if len(cloud) == 0:
        raise EmptyAfterPreprocess("nothing left after ground removal")
    if viewpoint is None:
        viewpoint = center.t + np.array([0.0, 0.0, 10.0])
    cloud = estimate_normals(cloud, normal_radius, viewpoint)
    if len(cloud) == 0:
        raise EmptyAfterPreprocess("no point has enough neighbors for a normal")
    return cloud
