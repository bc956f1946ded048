"""UAV wall-segment localization from depth and the cone-of-descent gate."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import NotFound
from .geom import Line2, PointCloud, Pose3, fit_lines_ransac


@dataclass(frozen=True)
class WallSearchParams:
    """Geometry of the target wall and tolerances of the pair search.

    ``thickness`` is the depth of a wall segment; each fitted face line is
    moved half of it away from the viewpoint so the pair spacing and the
    resulting midline refer to segment centerlines.
    """

    band: Tuple[float, float] = (1.0, 1.7)
    segment_length: float = 4.0
    length_tol: float = 0.5
    min_extent: float = 2.0
    pair_distance: float = 4.0
    distance_tol: float = 0.3
    max_angle: float = np.deg2rad(5.0)
    line_threshold: float = 0.05
    min_inliers: int = 30
    max_lines: int = 8
    max_gap: float = 0.5
    thickness: float = 0.2

    def __post_init__(self):
        if not self.band[0] < self.band[1]:
            raise ValueError("height band must be ordered")
        if min(self.length_tol, self.distance_tol, self.max_angle, self.line_threshold) <= 0:
            raise ValueError("tolerances must be positive")
        if self.thickness < 0:
            raise ValueError("thickness must be non-negative")


# ---------------------------------------------------------------- height


def estimate_height(down_cloud: PointCloud, bin_size: float = 0.1, min_fraction: float = 0.2) -> float:
    """Height above ground from a downward depth cloud in the UAV frame (z up).

    Points are histogrammed by depth below the UAV.  Bins holding at least
    ``min_fraction`` of the fullest bin and peaking over their neighbours are
    modes; the deepest mode is the ground (piles and walls sit above it).
    The result is the median depth of points within one bin of that mode.
    """
    if len(down_cloud) == 0:
        raise ValueError("empty cloud")
    depth = -down_cloud.points[:, 2]
    lo = np.floor(depth.min() / bin_size) * bin_size
    nbins = max(1, int(np.ceil((depth.max() - lo) / bin_size)) + 1)
    counts, edges = np.histogram(depth, bins=nbins, range=(lo, lo + nbins * bin_size))
    padded = np.concatenate([[0], counts, [0]])
    peak = (counts >= padded[:-2]) & (counts >= padded[2:]) & (counts >= min_fraction * counts.max())
    k = int(np.nonzero(peak)[0].max())
    center = 0.5 * (edges[k] + edges[k + 1])
    near = np.abs(depth - center) <= bin_size
    return float(np.median(depth[near]))


# ---------------------------------------------------------------- wall


def _main_run(s: np.ndarray, max_gap: float) -> Tuple[float, float]:
    """Extent of the longest run of sorted projections without a gap above ``max_gap``."""
    s = np.sort(s)
    breaks = np.nonzero(np.diff(s) > max_gap)[0]
    starts = np.concatenate([[0], breaks + 1])
    ends = np.concatenate([breaks, [len(s) - 1]])
    k = int(np.argmax(s[ends] - s[starts]))
    return float(s[starts[k]]), float(s[ends[k]])


def extract_segments(points2d: np.ndarray, params: WallSearchParams, viewpoint=None,
                     rng_seed=0) -> List[Line2]:
    """Lines through the projected band points, trimmed to their main run.

    With a ``viewpoint`` (2-D) each line is offset half the wall thickness
    away from it.
    """
    pts = np.asarray(points2d, float).reshape(-1, 2)
    out = []
    for ln in fit_lines_ransac(pts, params.line_threshold, params.min_inliers, params.max_lines, rng_seed=rng_seed):
        inl = pts[ln.distance(pts) <= params.line_threshold]
        s0, s1 = _main_run((inl - ln.point) @ ln.direction, params.max_gap)
        point = ln.point
        if viewpoint is not None and params.thickness > 0:
            side = np.sign((np.asarray(viewpoint, float)[:2] - point) @ ln.normal)
            point = point - side * 0.5 * params.thickness * ln.normal
        out.append(Line2(ln.direction, point, (s0, s1), ln.inlier_count))
    return out


def _line_distance(a: Line2, b: Line2) -> float:
    """Spacing of two near-parallel lines, measured at b's midpoint."""
    return float(abs((b.midpoint - a.point) @ a.normal))


def find_wall_pairs(segments: Sequence[Line2], params: WallSearchParams) -> List[Tuple[int, int]]:
    """Index pairs of valid-length segments that are parallel and one spacing apart."""
    ok = [params.min_extent <= s.length <= params.segment_length + params.length_tol for s in segments]
    pairs = []
    for i in range(len(segments)):
        for j in range(i + 1, len(segments)):
            if not (ok[i] and ok[j]):
                continue
            a, b = segments[i], segments[j]
            ang = np.arccos(np.clip(abs(a.direction @ b.direction), 0.0, 1.0))
            if ang >= params.max_angle:
                continue
            d = 0.5 * (_line_distance(a, b) + _line_distance(b, a))
            if abs(d - params.pair_distance) <= params.distance_tol:
                pairs.append((i, j))
    return pairs


def pair_pose(a: Line2, b: Line2, reference: Pose3, z: float = 0.0) -> Pose3:
    """Midline frame of a segment pair with x pointing along ``reference``'s x-axis."""
    da = a.direction
    db = b.direction if b.direction @ da >= 0 else -b.direction
    d = da + db
    d = d / np.linalg.norm(d)
    ref = reference.R[:2, 0]
    if d @ ref < 0:
        d = -d
    # origin: midpoint of the two segment centers, on the midline
    center = 0.5 * (a.midpoint + b.midpoint)
    R = np.array([[d[0], -d[1], 0.0], [d[1], d[0], 0.0], [0.0, 0.0, 1.0]])
    return Pose3.from_rt(R, [center[0], center[1], z], "wall", reference.to_frame)


@dataclass
class WallDetection:
    pose: Pose3
    segments: List[Line2]
    pair: Tuple[int, int]


def detect_wall(clouds: Iterable[PointCloud], height: float, search_pose: Pose3,
                params: Optional[WallSearchParams] = None, uav_z: Optional[float] = None,
                viewpoint=None, rng_seed=0) -> WallDetection:
    """Locate the wall as the midline of two parallel segments one spacing apart.

    ``clouds`` are in the world frame.  ``height`` is the UAV height above
    ground and ``uav_z`` its world altitude (defaults to ``height``, i.e. a
    ground-referenced world frame); the band filter uses height above ground.
    Among valid pairs the one best aligned with ``search_pose`` wins, and its
    x-axis is resolved to within 90 degrees of the search pose's.  Raises
    ``NotFound`` with the fitted segments in ``diagnostics`` otherwise.
    """
    params = params or WallSearchParams()
    ground_z = (height if uav_z is None else uav_z) - height
    clouds = list(clouds)
    pts = np.vstack([c.points for c in clouds]) if clouds else np.zeros((0, 3))
    rel = pts[:, 2] - ground_z
    band = pts[(rel >= params.band[0]) & (rel <= params.band[1])]
    if len(band) < params.min_inliers:
        raise NotFound("too few points in the height band", {"band_points": len(band)})
    segments = extract_segments(band[:, :2], params, viewpoint, rng_seed)
    pairs = find_wall_pairs(segments, params)
    if not pairs:
        raise NotFound("no parallel segment pair at the wall spacing", {"segments": segments})
    ref = search_pose.R[:2, 0]
    ref_xy = search_pose.t[:2]

    def score(p):
        a, b = segments[p[0]], segments[p[1]]
        misalign = 1.0 - abs(a.direction @ ref)
        return misalign, float(np.linalg.norm(0.5 * (a.midpoint + b.midpoint) - ref_xy))

    best = min(pairs, key=score)
    pose = pair_pose(segments[best[0]], segments[best[1]], search_pose, search_pose.t[2])
    return WallDetection(pose, segments, best)


def project_goal(wall: Pose3, target, segments: Sequence[Line2]) -> np.ndarray:
    """Snap a wall-frame target onto the nearest detected segment (world frame).

    The target is mapped to the world with ``wall``; the segment closest to it
    is taken as the expected one, and the target is projected orthogonally
    onto that segment, clamped to its extent.  z is preserved.
    """
    if not segments:
        raise ValueError("need at least one segment")
    p = wall.apply(np.asarray(target, float))
    best = None
    for seg in segments:
        s = np.clip((p[:2] - seg.point) @ seg.direction, *seg.extent)
        q = seg.point + s * seg.direction
        d = float(np.linalg.norm(p[:2] - q))
        if best is None or d < best[0]:
            best = (d, q)
    return np.array([best[1][0], best[1][1], p[2]])


# ---------------------------------------------------------------- cone of descent


@dataclass(frozen=True)
class ConeParams:
    """Angles in degrees.  Re-entry after a lock uses ``angle - hysteresis``."""

    angle: float = 10.0
    hysteresis: float = 3.0
    radius: float = 0.09

    def __post_init__(self):
        if not 0 <= self.hysteresis < self.angle < 90:
            raise ValueError("need 0 <= hysteresis < angle < 90 degrees")
        if self.radius < 0:
            raise ValueError("radius must be non-negative")


@dataclass(frozen=True)
class ConeState:
    locked: bool = False


def cone_radius(h: float, angle_deg: float, radius: float = 0.09) -> float:
    """Admission radius ``radius + h * tan(angle)``."""
    return radius + h * np.tan(np.deg2rad(angle_deg))


def cone_gate(state: ConeState, r: float, h: float,
              params: Optional[ConeParams] = None) -> Tuple[bool, ConeState]:
    """Decide whether descent is allowed at horizontal offset ``r`` and height ``h`` above target."""
    params = params or ConeParams()
    if r < 0 or h < 0:
        raise ValueError("r and h must be non-negative")
    if not state.locked:
        if r <= cone_radius(h, params.angle, params.radius):
            return True, ConeState(False)
        return False, ConeState(True)
    if r <= cone_radius(h, params.angle - params.hysteresis, params.radius):
        return True, ConeState(False)
    return False, ConeState(True)


def write_cone_log(path, rows: Iterable[Tuple[float, float, float, bool, bool]]) -> None:
    """CSV with columns t, r, h, locked, allowed."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "r", "h", "locked", "allowed"])
        for t, r, h, locked, allowed in rows:
            w.writerow([f"{t:.6f}", f"{r:.6f}", f"{h:.6f}", int(locked), int(allowed)])


def simulate_descent(seed: int, h0: float = 2.0, rate: float = 0.3, dt: float = 0.1, sigma: float = 0.02,
                     gust_time: float = 2.0, gust: float = 0.35, params: Optional[ConeParams] = None,
                     max_steps: int = 2000) -> List[Tuple[float, float, float, bool, bool]]:
    """Scripted descent with a random-walk drift, a lateral gust and proportional recentering.

    Returns log rows ``(t, r, h, locked, allowed)``; the UAV only descends
    while the gate allows it.
    """
    params = params or ConeParams()
    rng = np.random.default_rng(seed)
    state = ConeState()
    xy = rng.normal(0, 0.03, 2)
    h = h0
    rows = []
    for k in range(max_steps):
        t = k * dt
        if abs(t - gust_time) < dt / 2:
            a = rng.uniform(0, 2 * np.pi)
            xy = xy + gust * np.array([np.cos(a), np.sin(a)])
        r = float(np.linalg.norm(xy))
        allowed, state = cone_gate(state, r, h, params)
        rows.append((t, r, h, state.locked, allowed))
        if h <= 0 and allowed:
            break
        if allowed:
            h = max(0.0, h - rate * dt)
        xy = 0.8 * xy + rng.normal(0, sigma, 2) * np.sqrt(dt)
    return rows
