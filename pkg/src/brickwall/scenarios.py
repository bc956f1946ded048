"""Seeded scenario generators shared by tests, benchmarks and the CLI."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, List

import numpy as np

from .world import random_blueprint

if TYPE_CHECKING:
    from .geom import Pose3
    from .pile import Geofence
    from .synth import CameraIntrinsics, SensorModel
    from .world import Blueprint, Scene

SMALL_WALL_LENGTHS = (1.5, 2.0, 2.5, 3.0)


def small_blueprint(seed: int, max_positions: int = 9, attempts: int = 1000):
    """Random blueprint with at most ``max_positions`` place positions.

    Draws a small random inventory and wall length per attempt; the first
    draw meeting the bound is returned, so the result is a pure function of
    ``seed``.
    """
    from .planner import place_positions

    rng = np.random.default_rng([seed, 7])
    for _ in range(attempts):
        inv = {"red": int(rng.integers(0, 9)), "green": int(rng.integers(0, 5)), "blue": int(rng.integers(0, 3))}
        if not any(inv.values()):
            continue
        length = float(rng.choice(SMALL_WALL_LENGTHS))
        if max(l for t, l in (("red", 0.3), ("green", 0.6), ("blue", 1.2)) if inv[t]) >= length:
            continue
        bp = random_blueprint(int(rng.integers(2**31)), inv, length, max_layers=int(rng.integers(1, 5)))
        if len(place_positions(bp)) <= max_positions:
            return bp
    raise RuntimeError("no blueprint within the position bound")


def perturb_layout(layout, rng, max_xy: float = 0.05, max_yaw: float = np.deg2rad(10.0), tries: int = 100):
    """Uniformly perturb each pile entry, resampling any draw that makes bricks collide."""
    from .world import PileEntry, assemble_scene

    for _ in range(tries):
        out = []
        for e in layout:
            r = max_xy * np.sqrt(rng.random())
            a = rng.uniform(0, 2 * np.pi)
            out.append(PileEntry(e.type, e.x + r * np.cos(a), e.y + r * np.sin(a), e.layer,
                                 e.yaw + rng.uniform(-max_yaw, max_yaw)))
        try:
            assemble_scene(out)
        except ValueError:
            continue
        return out
    raise RuntimeError("could not draw a collision-free perturbation")


@dataclass
class PileScenario:
    scene: "Scene"
    sensor: "SensorModel"
    fence: "Geofence"
    robot_pose: "Pose3"
    truth: "Pose3"


def pile_scenario(seed: int, sigma: float = 0.008, perturb: bool = True, standoff: float = 4.0,
                  sensor_height: float = 2.0, resolution=(400, 400), dropout: float = 0.02,
                  layout=None, fov_deg=(60.0, 45.0), max_xy: float = 0.05,
                  max_yaw: float = np.deg2rad(10.0)) -> PileScenario:
    """UGV pile at a random world pose seen by a robot-mounted depth sensor."""
    from .geom import Pose3
    from .pile import Geofence
    from .synth import SensorModel, look_at
    from .world import assemble_scene, default_pile_layout

    rng = np.random.default_rng([seed, 11])
    layout = default_pile_layout() if layout is None else layout
    if perturb:
        layout = perturb_layout(layout, rng, max_xy, max_yaw)
    truth = Pose3.from_xyz_yaw(rng.uniform(-5, 5), rng.uniform(-5, 5), 0.0, rng.uniform(-np.pi, np.pi), "pile", "world")
    scene = assemble_scene(layout, truth)
    bearing = rng.uniform(-np.pi, np.pi)
    eye_xy = truth.t[:2] + standoff * np.array([np.cos(bearing), np.sin(bearing)])
    robot = Pose3.from_xyz_yaw(eye_xy[0], eye_xy[1], 0.0, bearing + np.pi, "robot", "world")
    sensor = SensorModel(look_at([*eye_xy, sensor_height], truth.t), np.deg2rad(fov_deg[0]), np.deg2rad(fov_deg[1]),
                         resolution, sigma, dropout)
    c = truth.t[:2]
    fence = Geofence(c[0] - 3.0, c[1] - 3.0, c[0] + 3.0, c[1] + 3.0)
    return PileScenario(scene, sensor, fence, robot, truth)


REGISTRATION_TYPES = ("red", "green", "blue", "orange")


@dataclass
class RegistrationScenario:
    nominal: list
    truth: list
    scans: list
    viewpoints: list
    center: "Pose3"


def registration_layout(rng, n_bricks: int = 20, per_row: int = 5, gap: float = 0.3, row_pitch: float = 0.6):
    """Bricks of random type in rows along x, centered on the origin."""
    from .world import PileEntry, brick_spec

    types = [REGISTRATION_TYPES[int(k)] for k in rng.integers(0, len(REGISTRATION_TYPES), n_bricks)]
    rows = [types[i:i + per_row] for i in range(0, n_bricks, per_row)]
    out = []
    for r, row in enumerate(rows):
        lengths = [brick_spec(t).length for t in row]
        x = -(sum(lengths) + gap * (len(row) - 1)) / 2
        y = (r - (len(rows) - 1) / 2) * row_pitch
        for t, l in zip(row, lengths):
            out.append(PileEntry(t, x + l / 2, y))
            x += l + gap
    return out


def registration_scenario(seed: int, sigma: float = 0.008, n_bricks: int = 20, max_xy: float = 0.05,
                          max_yaw: float = np.deg2rad(10.0), resolution=(400, 400), dropout: float = 0.02,
                          sensor_height: float = 3.0, standoff: float = 4.0) -> RegistrationScenario:
    """Nominal brick layout, a perturbed ground truth and two diagonal scans of the truth."""
    from .geom import Pose3
    from .synth import SensorModel, look_at, raycast_scan
    from .world import assemble_scene

    rng = np.random.default_rng([seed, 13])
    layout = registration_layout(rng, n_bricks)
    moved = perturb_layout(layout, rng, max_xy, max_yaw)
    nominal = assemble_scene(layout)
    truth = assemble_scene(moved)
    scans, views = [], []
    for k, bearing in enumerate((np.deg2rad(-135.0), np.deg2rad(45.0))):
        bearing += rng.uniform(-np.deg2rad(10), np.deg2rad(10))
        eye = np.array([standoff * np.cos(bearing), standoff * np.sin(bearing), sensor_height])
        sensor = SensorModel(look_at(eye, [0.0, 0.0, 0.0]), np.deg2rad(90.0), np.deg2rad(90.0), resolution, sigma,
                             dropout)
        scans.append(raycast_scan(truth, sensor, rng_seed=int(rng.integers(2**31))))
        views.append(sensor.pose)
    return RegistrationScenario(nominal.bricks, truth.bricks, scans, views, Pose3.identity())


@dataclass
class WallScenario:
    blueprint: "Blueprint"
    scene: "Scene"
    sensor: "SensorModel"
    truth: "Pose3"


def wall_scenario(seed: int, sigma: float = 0.008, dropout: float = 0.02, standoff: float = 4.0,
                  sensor_height: float = 2.0, resolution=(400, 400), built_subset=None) -> WallScenario:
    """A random blueprint assembled at a random wall-frame pose, seen obliquely from the front."""
    from .geom import Pose3
    from .synth import SensorModel, look_at
    from .world import assemble_scene

    rng = np.random.default_rng([seed, 17])
    bp = random_blueprint(int(rng.integers(2**31)))
    truth = Pose3.from_xyz_yaw(rng.uniform(-5, 5), rng.uniform(-5, 5), 0.0, rng.uniform(-np.pi, np.pi), "wall", "world")
    scene = assemble_scene(bp, truth, built_subset)
    center_local = np.array([bp.wall_length / 2, 0.0, 0.4])
    # stand off to one side so that a wall end face is in view
    side = rng.choice([-1.0, 1.0])
    eye_local = np.array([bp.wall_length / 2 + side * (bp.wall_length / 2 + rng.uniform(1.0, 2.0)),
                          -standoff + rng.uniform(-0.5, 0.5), sensor_height])
    sensor = SensorModel(look_at(truth.apply(eye_local), truth.apply(center_local)), np.deg2rad(90.0),
                         np.deg2rad(90.0), resolution, sigma, dropout)
    return WallScenario(bp, scene, sensor, truth)


@dataclass
class VisionFrame:
    scene: "Scene"
    camera: "CameraIntrinsics"
    cam_pose: "Pose3"
    image: np.ndarray
    visible: list


# seven rows 0.35 m apart spanning about 4.2 m x 2.4 m; equal types are >= 0.7 m apart
UAV_PILE = (
    ("red", -1.93, -1.05), ("blue", -1.08, -1.05), ("orange", 0.52, -1.05), ("red", 1.67, -1.05),
    ("orange", -1.17, -0.70), ("red", -0.02, -0.70), ("orange", 1.13, -0.70),
    ("green", -1.70, -0.35), ("orange", -0.40, -0.35), ("blue", 1.20, -0.35),
    ("red", -1.93, 0.00), ("blue", -1.08, 0.00), ("orange", 0.52, 0.00), ("red", 1.67, 0.00),
    ("orange", -1.07, 0.35), ("green", 0.23, 0.35), ("green", 0.93, 0.35), ("green", 1.63, 0.35),
    ("green", -1.52, 0.70), ("blue", -0.52, 0.70), ("orange", 1.08, 0.70),
    ("orange", -1.11, 1.05), ("red", 0.04, 1.05), ("green", 0.59, 1.05), ("green", 1.29, 1.05), ("red", 1.84, 1.05),
)


def uav_pile_layout():
    """Dense pile that fills the downward camera's view from 2 m."""
    from .world import PileEntry

    return [PileEntry(t, x, y) for t, x, y in UAV_PILE]


def _render_frame(scene, rng, noise_sigma, height, max_offset, max_tilt, margin) -> VisionFrame:
    from .geom import Pose3, rotvec_to_matrix
    from .synth import CameraIntrinsics, project_points, render_rgb

    cam = CameraIntrinsics()
    # optical frame looking straight down, then a random heading and tilt
    down = np.array([[1.0, 0, 0], [0, -1.0, 0], [0, 0, -1.0]])
    heading = rotvec_to_matrix([0, 0, rng.uniform(-np.pi, np.pi)])
    axis = rng.normal(size=2)
    tilt = rotvec_to_matrix(np.append(axis / np.linalg.norm(axis), 0.0) * rng.uniform(0, max_tilt))
    eye = np.array([*rng.uniform(-max_offset, max_offset, 2), height])
    cam_pose = Pose3.from_rt(tilt @ heading @ down, eye, "camera", "pile")
    image = render_rgb(scene, cam, cam_pose, rng_seed=int(rng.integers(2**31)), noise_sigma=noise_sigma)
    visible = []
    for b in scene.world_bricks():
        # the whole top face must be in view: corner probes sample the colored rim
        top = b.corners()[b.pose.inverse().apply(b.corners())[:, 2] > 0]
        uv = project_points(cam, cam_pose, top)
        if np.all((uv[:, 0] >= margin) & (uv[:, 0] <= cam.width - 1 - margin)
                  & (uv[:, 1] >= margin) & (uv[:, 1] <= cam.height - 1 - margin)):
            visible.append(b)
    return VisionFrame(scene, cam, cam_pose, image, visible)


def _vision_scene(rng, layout, perturb):
    from .world import assemble_scene

    layout = uav_pile_layout() if layout is None else layout
    if perturb:
        layout = perturb_layout(layout, rng, max_xy=0.02, max_yaw=np.deg2rad(2.0))
    return assemble_scene(layout)


def vision_frame(seed: int, noise_sigma: float = 0.0, height: float = 2.0, max_offset: float = 0.3,
                 max_tilt: float = np.deg2rad(8.0), layout=None, perturb: bool = True, margin: int = 8) -> VisionFrame:
    """Downward camera over a dense pile; ``visible`` lists bricks whose top face is fully in view."""
    rng = np.random.default_rng([seed, 19])
    scene = _vision_scene(rng, layout, perturb)
    return _render_frame(scene, rng, noise_sigma, height, max_offset, max_tilt, margin)


def vision_sequence(seed: int, n_frames: int = 5, noise_sigma: float = 0.0, height: float = 2.0,
                    max_offset: float = 0.3, max_tilt: float = np.deg2rad(8.0), layout=None,
                    perturb: bool = True, margin: int = 8) -> List[VisionFrame]:
    """Frames of one static pile seen from independently drawn camera poses."""
    rng = np.random.default_rng([seed, 23])
    scene = _vision_scene(rng, layout, perturb)
    return [_render_frame(scene, rng, noise_sigma, height, max_offset, max_tilt, margin) for _ in range(n_frames)]


W_SEGMENT = (4.0, 0.2, 1.7)


def w_wall_boxes(pose, segment=W_SEGMENT):
    """Four segments in a W with right angles between neighbours.

    In the wall frame segments 1 and 3 run along +x and segments 2 and 4
    along -y, so each parallel pair is one segment length apart.  Returns the
    boxes and the wall-frame pose of the (1, 3) midline.
    """
    from .geom import Pose3, rot_z
    from .synth import Box

    L, T, H = segment
    dirs = [np.array([1.0, 0.0]), np.array([0.0, -1.0])] * 2
    v = np.zeros(2)
    boxes = []
    centers = []
    for d in dirs:
        c = v + d * L / 2
        yaw = np.arctan2(d[1], d[0])
        local = Pose3.from_rt(rot_z(yaw), [c[0], c[1], H / 2])
        boxes.append(Box(pose @ local, (L, T, H), color=(180, 180, 180)))
        centers.append(c)
        v = v + d * L
    mid = 0.5 * (centers[0] + centers[2])
    truth = pose @ Pose3.from_rt(np.eye(3), [mid[0], mid[1], 0.0])
    return boxes, truth


@dataclass
class WallLocalizationScenario:
    boxes: list
    truth: "object"
    search_pose: "object"
    side_sensors: list
    down_sensor: "object"
    uav_position: np.ndarray


def w_wall_scenario(seed: int, sigma: float = 0.008, dropout: float = 0.02, standoff: float = 4.0,
                    uav_height: float = 1.4, distractor: bool = False, single_segment: bool = False,
                    search_yaw: float = np.deg2rad(20.0), search_xy: float = 1.0) -> WallLocalizationScenario:
    """UAV in front of a randomly placed W-wall, with side and downward depth sensors.

    The UAV hovers ``standoff`` m in front of segment 3 and sees the faces of
    the (1, 3) pair.  With ``single_segment`` only segment 1 is built; ``distractor``
    adds a long fence 10 m behind the wall.
    """
    from .geom import Pose3, rot_z
    from .synth import Box, SensorModel, look_at

    rng = np.random.default_rng([seed, 29])
    yaw = rng.uniform(-np.pi, np.pi)
    wall = Pose3.from_rt(rot_z(yaw), [*rng.uniform(-5, 5, 2), 0.0], "wall", "world")
    boxes, truth = w_wall_boxes(wall)
    truth = truth.with_frames("wall", "world")
    if single_segment:
        boxes = boxes[:1]
    if distractor:
        fence = wall @ Pose3.from_rt(np.eye(3), [2.0, 10.0, 1.0])
        boxes.append(Box(fence, (20.0, 0.05, 2.0), color=(90, 90, 90)))
    # hover beyond segment 3 (wall frame y = -4), seeing the -y faces of segments 1 and 3
    local = np.array([rng.uniform(2.5, 3.5), -W_SEGMENT[0] - standoff, uav_height])
    uav = wall.apply(local)
    target = wall.apply([4.0 + rng.uniform(-0.5, 0.5), -2.0, uav_height])
    side = [SensorModel(look_at(uav, target), np.deg2rad(100.0), np.deg2rad(60.0), (320, 120), sigma, dropout)]
    down = SensorModel(look_at(uav, uav - np.array([0, 0, 1.0])), np.deg2rad(60.0), np.deg2rad(45.0),
                       (80, 60), sigma, dropout)
    search = truth @ Pose3.from_xyz_yaw(*rng.uniform(-search_xy, search_xy, 2), 0.0,
                                        rng.uniform(-search_yaw, search_yaw), "wall", "wall")
    return WallLocalizationScenario(boxes, truth, search.with_frames("wall", "world"), side, down, uav)
