"""Rough pile detection from a world-frame scan."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .errors import NotFound
from .geom import PointCloud, Pose3, cluster_indices, fit_plane_ransac, min_oriented_rect
from .world import default_pile_layout, pile_footprint


@dataclass(frozen=True)
class Geofence:
    """Axis-aligned search rectangle in world xy."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError("geofence must have positive area")

    @property
    def center(self) -> np.ndarray:
        return np.array([(self.x_min + self.x_max) / 2, (self.y_min + self.y_max) / 2])

    def contains(self, xy) -> np.ndarray:
        xy = np.asarray(xy, float).reshape(-1, 2)
        return (xy[:, 0] >= self.x_min) & (xy[:, 0] <= self.x_max) & (xy[:, 1] >= self.y_min) & (xy[:, 1] <= self.y_max)

    def corners(self) -> np.ndarray:
        return np.array([[self.x_min, self.y_min], [self.x_max, self.y_min], [self.x_max, self.y_max], [self.x_min, self.y_max]])


@dataclass
class PileParams:
    ransac_threshold: float = 0.02
    ransac_iterations: int = 200
    near_plane_dist: float = 0.05
    cluster_tolerance: float = 0.30
    min_cluster_size: int = 10
    expected_extent: Tuple[float, float] = field(default_factory=lambda: tuple(pile_footprint(default_pile_layout())))
    size_window: Tuple[float, float] = (0.5, 1.5)
    component_tolerance: float = 0.06
    rng_seed: int = 0


@dataclass
class PileDetection:
    pose: Pose3
    cluster_size: int
    extents: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "pose": self.pose.to_dict(),
            "yaw": self.pose.yaw(),
            "cluster_size": self.cluster_size,
            "extents": [float(v) for v in self.extents],
            "diagnostics": self.diagnostics,
        }


def footprint_moments(xy: np.ndarray, tolerance: float, min_size: int = 5):
    """Area, centroid and 2x2 covariance of a cluster's ground footprint.

    The cluster is split into tightly connected components (single bricks when
    they are not touching); each is replaced by its minimum-area rectangle and
    the moments of the union are computed analytically.  Unlike point means
    this is insensitive to the scanner's uneven sampling density.
    """
    area = 0.0
    first = np.zeros(2)
    second = np.zeros((2, 2))
    rects = []
    for idx in cluster_indices(np.column_stack([xy, np.zeros(len(xy))]), tolerance, min_size):
        rect = min_oriented_rect(xy[idx])
        a = 4 * rect.half_extents[0] * rect.half_extents[1]
        if a <= 0:
            continue
        local = np.diag(rect.half_extents ** 2 / 3.0)
        R = rect.axes.T  # columns are the rectangle axes
        area += a
        first += a * rect.center
        second += a * (np.outer(rect.center, rect.center) + R @ local @ R.T)
        rects.append(rect)
    if area <= 0:
        return 0.0, np.zeros(2), np.zeros((2, 2)), rects
    mean = first / area
    return area, mean, second / area - np.outer(mean, mean), rects


def _oriented_extents(rects, center, ax):
    ay = np.array([-ax[1], ax[0]])
    corners = np.vstack([r.corners() for r in rects]) - center
    return np.array([np.ptp(corners @ ax), np.ptp(corners @ ay)])


def detect_pile(scan: PointCloud, fence: Geofence, robot_pose: Pose3, params: Optional[PileParams] = None) -> PileDetection:
    """Locate the brick pile and return its ground-aligned pose.

    The origin is the centroid of the best cluster's ground footprint and x
    follows the footprint's principal axis, signed to point away from the
    robot.  Raises ``NotFound`` with per-stage counts on failure.
    """
    params = params or PileParams()
    diag = {"input": len(scan)}
    pts = scan.points[fence.contains(scan.points[:, :2])]
    diag["in_fence"] = len(pts)
    if len(pts) < 3:
        raise NotFound("no points inside the geofence", diag)
    plane = fit_plane_ransac(pts, params.ransac_threshold, params.ransac_iterations, params.rng_seed)
    diag["ground_inliers"] = plane.inlier_count
    n, off = plane.normal, plane.offset
    if n[2] < 0:
        n, off = -n, -off
    height = pts @ n + off
    above = pts[height > params.near_plane_dist]
    diag["above_ground"] = len(above)
    if len(above) == 0:
        raise NotFound("nothing above the ground plane", diag)
    clusters = cluster_indices(above, params.cluster_tolerance, params.min_cluster_size)
    diag["clusters"] = len(clusters)
    lo, hi = params.size_window
    exp = np.sort(np.asarray(params.expected_extent, float))[::-1]
    survivors = []
    sizes = []
    for idx in clusters:
        area, center, cov, rects = footprint_moments(above[idx, :2], params.component_tolerance)
        if area <= 0:
            continue
        w, v = np.linalg.eigh(cov)
        ax = v[:, 1]
        ext = _oriented_extents(rects, center, ax)
        sizes.append([float(v) for v in ext])
        if np.all(ext >= lo * exp) and np.all(ext <= hi * exp):
            dist = float(np.linalg.norm(center - fence.center))
            survivors.append((-len(idx), dist, center, ax, ext, len(idx)))
    diag["cluster_extents"] = sizes
    diag["in_size_window"] = len(survivors)
    if not survivors:
        raise NotFound("no cluster matches the expected pile size", diag)
    survivors.sort(key=lambda s: (s[0], s[1]))
    _, _, center, ax, ext, count = survivors[0]
    if ax @ (center - robot_pose.t[:2]) < 0:
        ax = -ax
    # ground height under the centroid
    z = -(off + n[0] * center[0] + n[1] * center[1]) / n[2]
    yaw = float(np.arctan2(ax[1], ax[0]))
    pose = Pose3.from_xyz_yaw(center[0], center[1], z, yaw, from_frame="pile", to_frame="world")
    return PileDetection(pose, count, ext, diag)
