"""Synthetic sensing by analytic ray casting against boxes and the ground plane."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import cv2
import numpy as np

from .geom import GROUND_LABEL, UNLABELED, PointCloud, Pose3, voxel_downsample
from .world import GROUND_COLOR, PATCH_COLOR, BrickInstance, Scene

SKY_COLOR = (150, 170, 200)
SIDE_SHADE = 0.75
_EPS = 1e-12


@dataclass
class Box:
    """Axis-aligned box in its own frame; ``pose`` maps box coordinates to world."""

    pose: Pose3
    dims: np.ndarray
    label: int = UNLABELED
    color: Tuple[int, int, int] = (128, 128, 128)
    patch_size: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        self.dims = np.asarray(self.dims, dtype=float).reshape(3)


def brick_boxes(bricks: Sequence[BrickInstance]) -> List[Box]:
    return [Box(b.pose, b.spec.dims, b.id, b.spec.color, b.spec.patch_size) for b in bricks]


def scene_boxes(scene: Scene) -> List[Box]:
    return brick_boxes(scene.world_bricks())


@dataclass
class SensorModel:
    """Depth sensor with a regular azimuth/elevation grid.

    The sensor frame has x forward, y left and z up; ``pose`` maps it into the
    world.  Column 0 is the leftmost ray and row 0 the topmost.
    """

    pose: Pose3 = field(default_factory=Pose3.identity)
    h_fov: float = np.deg2rad(90.0)
    v_fov: float = np.deg2rad(90.0)
    resolution: Tuple[int, int] = (400, 400)
    range_noise_sigma: float = 0.008
    dropout_prob: float = 0.02
    max_range: float = 50.0

    def __post_init__(self):
        if not (0 < self.h_fov < np.pi and 0 < self.v_fov < np.pi):
            raise ValueError("field of view must lie in (0, pi)")
        cols, rows = self.resolution
        if cols < 1 or rows < 1:
            raise ValueError("resolution must be at least 1x1")
        if not 0 <= self.dropout_prob <= 1:
            raise ValueError("dropout_prob must lie in [0, 1]")

    def ray_directions(self) -> np.ndarray:
        """Unit ray directions in the sensor frame, row-major (rows*cols, 3)."""
        cols, rows = self.resolution
        az = self.h_fov / 2 - (np.arange(cols) + 0.5) * self.h_fov / cols
        el = self.v_fov / 2 - (np.arange(rows) + 0.5) * self.v_fov / rows
        A, E = np.meshgrid(az, el)
        d = np.stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], axis=-1)
        return d.reshape(-1, 3)


def look_at(eye, target, up=(0.0, 0.0, 1.0), optical: bool = False) -> Pose3:
    """Pose of a sensor at ``eye`` looking at ``target``.

    With ``optical=False`` the sensor frame is x forward / z up (depth sensors);
    with ``optical=True`` it is the camera convention x right / y down / z forward.
    """
    eye = np.asarray(eye, float)
    fwd = np.asarray(target, float) - eye
    fwd /= np.linalg.norm(fwd)
    up = np.asarray(up, float)
    if abs(fwd @ up) > 0.999:
        up = np.array([1.0, 0.0, 0.0]) if abs(fwd[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    left = np.cross(up, fwd)
    left /= np.linalg.norm(left)
    upv = np.cross(fwd, left)
    if optical:
        R = np.column_stack([-left, -upv, fwd])
    else:
        R = np.column_stack([fwd, left, upv])
    return Pose3.from_rt(R, eye)


def intersect_boxes(origin, dirs: np.ndarray, boxes: Sequence[Box], ground: bool = True):
    """Nearest hit for rays ``origin + t * dirs`` (world frame).

    Returns ``(t, index, normal)`` where ``index`` is the box index, -1 for the
    ground and -2 for a miss (``t = inf``).  Normals are outward world-frame face
    normals.
    """
    origin = np.asarray(origin, float)
    n = len(dirs)
    best_t = np.full(n, np.inf)
    best_i = np.full(n, -2, dtype=np.int64)
    best_n = np.zeros((n, 3))
    if ground:
        dz = dirs[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            tg = -origin[2] / dz
        ok = (dz < -_EPS) & (tg > 0)
        best_t[ok] = tg[ok]
        best_i[ok] = -1
        best_n[ok] = (0.0, 0.0, 1.0)
    for k, box in enumerate(boxes):
        R = box.pose.R
        o = R.T @ (origin - box.pose.t)
        d = dirs @ R  # == (R.T @ dirs.T).T
        h = box.dims / 2
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t1 = (-h - o) * inv
            t2 = (h - o) * inv
        # rays parallel to a slab: inside -> unbounded, outside -> miss
        par = np.abs(d) < _EPS
        inside = np.abs(o) <= h
        t1 = np.where(par, np.where(inside, -np.inf, np.inf), t1)
        t2 = np.where(par, np.where(inside, np.inf, -np.inf), t2)
        tlo = np.minimum(t1, t2)
        thi = np.maximum(t1, t2)
        tmin = tlo.max(axis=1)
        tmax = thi.min(axis=1)
        hit = (tmax >= tmin) & (tmin > 0) & (tmin < best_t)
        if not hit.any():
            continue
        idx = np.nonzero(hit)[0]
        axis = np.argmax(tlo[idx], axis=1)
        nl = np.zeros((len(idx), 3))
        nl[np.arange(len(idx)), axis] = -np.sign(d[idx, axis])
        best_t[idx] = tmin[idx]
        best_i[idx] = k
        best_n[idx] = nl @ R.T
    return best_t, best_i, best_n


def _labels_for(index: np.ndarray, boxes: Sequence[Box]) -> np.ndarray:
    lut = np.array([b.label for b in boxes] + [GROUND_LABEL], dtype=np.int64)
    return lut[index]  # index -1 wraps to the ground entry


def raycast_boxes(boxes: Sequence[Box], sensor: SensorModel, rng_seed=0, ground: bool = True,
                  noise: bool = True) -> PointCloud:
    """Scan arbitrary boxes.  Noise and dropout are drawn per pixel index."""
    dirs = sensor.pose.rotate(sensor.ray_directions())
    origin = sensor.pose.t
    t, idx, nrm = intersect_boxes(origin, dirs, boxes, ground)
    rng = np.random.default_rng(rng_seed)
    # one draw per pixel regardless of hit, so values are keyed by pixel index
    eps = rng.standard_normal(len(dirs))
    drop = rng.random(len(dirs)) < sensor.dropout_prob
    if noise:
        t_noisy = t + sensor.range_noise_sigma * eps
    else:
        t_noisy = t
        drop = np.zeros(len(dirs), bool)
    keep = (idx != -2) & (t <= sensor.max_range) & ~drop
    pts = origin + t_noisy[keep, None] * dirs[keep]
    return PointCloud(pts, nrm[keep], _labels_for(idx[keep], boxes))


def raycast_scan(scene: Scene, sensor: SensorModel, rng_seed=0) -> PointCloud:
    """Noisy labelled scan of the scene in world coordinates (normals are not sensed)."""
    cloud = raycast_boxes(scene_boxes(scene), sensor, rng_seed)
    return PointCloud(cloud.points, None, cloud.labels)


def render_model_cloud(
    bricks: Sequence[BrickInstance],
    sensor_pose: Pose3,
    d: float = 0.02,
    include_ground: bool = False,
    h_fov: float = np.deg2rad(90.0),
    v_fov: float = np.deg2rad(90.0),
    resolution: Tuple[int, int] = (600, 600),
) -> PointCloud:
    """Noiseless visible-surface samples with face normals, voxel-downsampled.

    The voxel grid is shifted by half a voxel so that faces lying on multiples
    of ``d`` do not straddle two voxel layers.  Ground points are generated to
    occlude correctly but only kept with ``include_ground``.
    """
    if d <= 0:
        raise ValueError("voxel size must be positive")
    sensor = SensorModel(sensor_pose, h_fov, v_fov, resolution, 0.0, 0.0)
    cloud = raycast_boxes(brick_boxes(bricks), sensor, ground=True, noise=False)
    if not include_ground:
        cloud = cloud.select(cloud.labels != GROUND_LABEL)
    return voxel_downsample(cloud, d, origin=np.full(3, d / 2))


def split_brick_clouds(model: PointCloud):
    """Partition a labelled cloud into ``([(id, cloud), ...], ground_cloud)``."""
    if model.labels is None or np.any(model.labels == UNLABELED):
        raise ValueError("cloud has no per-brick labels")
    ground = model.select(model.labels == GROUND_LABEL)
    parts = []
    for lab in np.unique(model.labels):
        if lab == GROUND_LABEL:
            continue
        parts.append((int(lab), model.select(model.labels == lab)))
    return parts, ground


@dataclass
class CameraIntrinsics:
    """Pinhole intrinsics; pixel centers sit at integer coordinates."""

    fx: float = 920.0
    fy: float = 920.0
    cx: float = 639.5
    cy: float = 359.5
    width: int = 1280
    height: int = 720

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("fx", "fy", "cx", "cy", "width", "height")}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(**d)


def project_points(cam: CameraIntrinsics, cam_pose: Pose3, pts) -> np.ndarray:
    """Project world points; ``cam_pose`` maps the optical frame to the world."""
    pc = cam_pose.inverse().apply(np.asarray(pts, float).reshape(-1, 3))
    return np.column_stack([cam.fx * pc[:, 0] / pc[:, 2] + cam.cx, cam.fy * pc[:, 1] / pc[:, 2] + cam.cy])


def patch_corners(brick: BrickInstance) -> np.ndarray:
    """World coordinates of the four top-patch corners (CCW seen from above)."""
    pl, pw = brick.spec.patch_size
    z = brick.spec.height / 2
    local = np.array([[-pl / 2, -pw / 2, z], [pl / 2, -pw / 2, z], [pl / 2, pw / 2, z], [-pl / 2, pw / 2, z]])
    return brick.pose.apply(local)


def render_rgb(scene: Scene, cam: CameraIntrinsics, cam_pose: Pose3, rng_seed=0, noise_sigma: float = 0.0) -> np.ndarray:
    """Flat-shaded RGB image (H, W, 3) uint8.

    Top faces carry the brick color with a white patch; side faces are
    darkened.  ``noise_sigma`` is additive Gaussian noise as a fraction of the
    full 0..255 range.
    """
    H, W = cam.height, cam.width
    u, v = np.meshgrid(np.arange(W, dtype=float), np.arange(H, dtype=float))
    rays_c = np.stack([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, np.ones_like(u)], axis=-1).reshape(-1, 3)
    rays_c /= np.linalg.norm(rays_c, axis=1, keepdims=True)
    dirs = cam_pose.rotate(rays_c)
    origin = cam_pose.t

    img = np.empty((H * W, 3))
    img[:] = SKY_COLOR
    t, _, _ = intersect_boxes(origin, dirs, [], ground=True)
    img[np.isfinite(t)] = GROUND_COLOR
    zbuf = t

    world = scene.world_bricks()
    to_cam = cam_pose.inverse()
    for b in world:
        corners = to_cam.apply(b.corners())
        if np.all(corners[:, 2] <= 1e-6):
            continue
        if np.all(corners[:, 2] > 1e-6):
            uu = cam.fx * corners[:, 0] / corners[:, 2] + cam.cx
            vv = cam.fy * corners[:, 1] / corners[:, 2] + cam.cy
            u0, u1 = int(max(0, np.floor(uu.min()))), int(min(W - 1, np.ceil(uu.max())))
            v0, v1 = int(max(0, np.floor(vv.min()))), int(min(H - 1, np.ceil(vv.max())))
            if u0 > u1 or v0 > v1:
                continue
            sel = (np.arange(v0, v1 + 1)[:, None] * W + np.arange(u0, u1 + 1)[None, :]).ravel()
        else:
            sel = np.arange(H * W)
        box = brick_boxes([b])[0]
        tb, ib, nb = intersect_boxes(origin, dirs[sel], [box], ground=False)
        front = (ib == 0) & (tb < zbuf[sel])
        if not front.any():
            continue
        px = sel[front]
        zbuf[px] = tb[front]
        col = np.array(b.spec.color, float)
        n_local = nb[front] @ b.pose.R  # world normal back into the brick frame
        top = n_local[:, 2] > 0.5
        shade = np.where(top, 1.0, SIDE_SHADE)
        img[px] = shade[:, None] * col
        # white patch on the top face
        hit = origin + tb[front, None] * dirs[px]
        loc = b.pose.inverse().apply(hit)
        pl, pw = b.spec.patch_size
        patch = top & (np.abs(loc[:, 0]) <= pl / 2) & (np.abs(loc[:, 1]) <= pw / 2)
        img[px[patch]] = PATCH_COLOR

    img = img.reshape(H, W, 3)
    if noise_sigma > 0:
        rng = np.random.default_rng(rng_seed)
        img = img + rng.normal(0.0, noise_sigma * 255.0, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def write_ppm(path, image: np.ndarray) -> None:
    if not cv2.imwrite(str(path), cv2.cvtColor(np.ascontiguousarray(image), cv2.COLOR_RGB2BGR)):
        raise OSError(f"could not write {path}")


def read_ppm(path) -> np.ndarray:
    bgr = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if bgr is None:
        raise OSError(f"could not read {path}")
    return cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)


def sample_l_marker(corner, direction, legs=(2.0, 1.5), arm_width=0.2, spacing=0.03, rng_seed=None, jitter=0.0):
    """Ground-projected points covering an L-shaped marker footprint.

    The long leg runs from ``corner`` along ``direction``, the short leg along
    its left-hand normal; both arms have width ``arm_width`` and share the
    outer corner.
    """
    corner = np.asarray(corner, float)
    ex = np.asarray(direction, float)
    ex = ex / np.linalg.norm(ex)
    ey = np.array([-ex[1], ex[0]])
    xs = np.arange(spacing / 2, legs[0], spacing)
    ys = np.arange(spacing / 2, legs[1], spacing)
    ws = np.arange(spacing / 2, arm_width, spacing)
    a = np.array([(x, w) for x in xs for w in ws])
    b = np.array([(w, y) for w in ws for y in ys if y >= arm_width])
    local = np.vstack([a, b])
    if jitter > 0:
        local = local + np.random.default_rng(rng_seed).normal(0, jitter, local.shape)
    return corner + local[:, :1] * ex + local[:, 1:] * ey
