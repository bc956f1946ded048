"""Parametrized world model: brick catalog, blueprints, piles and scenes."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .geom import Pose3

BRICK_WIDTH = 0.20
BRICK_HEIGHT = 0.20
DEFAULT_WALL_LENGTH = 4.0
DEFAULT_INVENTORY = {"red": 20, "green": 10, "blue": 5}
PATCH_MARGIN = 0.10
PATCH_WIDTH = 0.10


class BrickType(str, Enum):
    RED = "red"
    GREEN = "green"
    BLUE = "blue"
    ORANGE = "orange"


_LENGTHS = {BrickType.RED: 0.30, BrickType.GREEN: 0.60, BrickType.BLUE: 1.20, BrickType.ORANGE: 1.80}
_MASSES = {BrickType.RED: 1.0, BrickType.GREEN: 1.5, BrickType.BLUE: 1.5, BrickType.ORANGE: 2.0}
# saturated, but darker than the white patch so the brightness contrast holds
BRICK_COLORS = {
    BrickType.RED: (200, 20, 20),
    BrickType.GREEN: (20, 160, 40),
    BrickType.BLUE: (20, 40, 200),
    BrickType.ORANGE: (230, 120, 20),
}
PATCH_COLOR = (255, 255, 255)
GROUND_COLOR = (110, 110, 110)


@dataclass(frozen=True)
class BrickSpec:
    type: BrickType
    length: float
    width: float
    height: float
    mass: float
    color: Tuple[int, int, int]
    patch_size: Tuple[float, float]

    @property
    def dims(self) -> np.ndarray:
        return np.array([self.length, self.width, self.height])


def brick_spec(brick_type, patch_size: Optional[Tuple[float, float]] = None) -> BrickSpec:
    t = BrickType(brick_type)
    length = _LENGTHS[t]
    if patch_size is None:
        patch_size = (length - PATCH_MARGIN, PATCH_WIDTH)
    return BrickSpec(t, length, BRICK_WIDTH, BRICK_HEIGHT, _MASSES[t], BRICK_COLORS[t], tuple(patch_size))


@dataclass
class BrickInstance:
    """A brick whose ``pose`` maps brick-center coordinates into its parent frame."""

    id: int
    spec: BrickSpec
    pose: Pose3

    def corners(self) -> np.ndarray:
        he = self.spec.dims / 2
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
        return self.pose.apply(signs * he)

    def moved(self, pose: Pose3) -> "BrickInstance":
        return BrickInstance(self.id, self.spec, pose)


@dataclass(frozen=True)
class BlueprintBrick:
    type: BrickType
    left_x: float

    @property
    def length(self) -> float:
        return _LENGTHS[self.type]

    @property
    def right_x(self) -> float:
        return self.left_x + self.length

    @property
    def center_x(self) -> float:
        return self.left_x + 0.5 * self.length


@dataclass
class Blueprint:
    wall_length: float
    layers: List[List[BlueprintBrick]] = field(default_factory=list)

    def __post_init__(self):
        self.layers = [
            sorted((b if isinstance(b, BlueprintBrick) else BlueprintBrick(BrickType(b[0]), float(b[1])) for b in layer),
                   key=lambda b: b.left_x)
            for layer in self.layers
        ]
        self.validate()

    def validate(self) -> None:
        for k, layer in enumerate(self.layers):
            for a, b in zip(layer, layer[1:]):
                if b.left_x < a.right_x - 1e-9:
                    raise ValueError(f"layer {k}: bricks at {a.left_x} and {b.left_x} overlap")
            for b in layer:
                if b.left_x < -1e-9 or b.right_x > self.wall_length + 1e-9:
                    raise ValueError(f"layer {k}: brick at {b.left_x} outside wall")

    def bricks(self) -> List[Tuple[int, int, BlueprintBrick]]:
        """``(id, layer, brick)`` in (layer, left_x) order; ids are positions in this list."""
        out = []
        for k, layer in enumerate(self.layers):
            for b in layer:
                out.append((len(out), k, b))
        return out

    @property
    def brick_count(self) -> int:
        return sum(len(l) for l in self.layers)

    def to_dict(self) -> dict:
        return {
            "wall_length": self.wall_length,
            "layers": [[{"type": b.type.value, "left_x": b.left_x} for b in layer] for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Blueprint":
        return cls(
            float(d["wall_length"]),
            [[BlueprintBrick(BrickType(b["type"]), float(b["left_x"])) for b in layer] for layer in d["layers"]],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "Blueprint":
        return cls.from_dict(json.loads(s))


def random_blueprint(
    seed,
    inventory: Optional[Dict[str, int]] = None,
    wall_length: float = DEFAULT_WALL_LENGTH,
    max_layers: int = 5,
) -> Blueprint:
    """Random left-aligned blueprint.

    Layer 0 spans the whole wall; every upper layer spans only the filled
    extent of the layer beneath it, so each brick has full support.  Types
    are drawn uniformly among those with stock left that still fit.
    """
    inventory = dict(DEFAULT_INVENTORY if inventory is None else inventory)
    stock = {BrickType(k): int(v) for k, v in inventory.items() if v > 0}
    if not stock:
        raise ValueError("empty inventory")
    if wall_length <= max(_LENGTHS[t] for t in stock):
        raise ValueError("wall shorter than the longest brick")
    rng = np.random.default_rng(seed)
    layers: List[List[BlueprintBrick]] = []
    span = wall_length
    while len(layers) < max_layers and any(stock.values()):
        x = 0.0
        layer = []
        while True:
            fits = [t for t in BrickType if stock.get(t, 0) > 0 and x + _LENGTHS[t] <= span + 1e-9]
            if not fits:
                break
            t = fits[int(rng.integers(len(fits)))]
            layer.append(BlueprintBrick(t, round(x, 9)))
            stock[t] -= 1
            x += _LENGTHS[t]
        if not layer:
            break
        layers.append(layer)
        span = x
    return Blueprint(wall_length, layers)


def blueprint_brick_pose(layer: int, brick: BlueprintBrick, frame: str = "wall") -> Pose3:
    return Pose3.from_xyz_yaw(brick.center_x, 0.0, layer * BRICK_HEIGHT + BRICK_HEIGHT / 2, 0.0,
                              from_frame="brick", to_frame=frame)


@dataclass
class PileEntry:
    """One brick of a pile layout in pile coordinates (center x, y, layer, yaw)."""

    type: BrickType
    x: float
    y: float
    layer: int = 0
    yaw: float = 0.0


def default_pile_layout(row_gap: float = 0.20, brick_gap: float = 0.20) -> List[PileEntry]:
    """Four-brick UGV pickup arrangement, one brick of each type in two rows.

    The back row is shifted so both rows share the same area-weighted x
    centroid; the footprint's principal axis then coincides with x.  The
    frame origin is the footprint centroid.
    """
    w = BRICK_WIDTH
    front = [(BrickType.ORANGE, 0.0), (BrickType.RED, _LENGTHS[BrickType.ORANGE] + brick_gap)]
    back = [(BrickType.BLUE, 0.0), (BrickType.GREEN, _LENGTHS[BrickType.BLUE] + brick_gap)]

    def row_centroid(row):
        a = np.array([_LENGTHS[t] for t, _ in row])
        c = np.array([x + _LENGTHS[t] / 2 for t, x in row])
        return float(a @ c / a.sum()), float(a.sum())

    cf, af = row_centroid(front)
    cb, ab = row_centroid(back)
    shift = cf - cb
    y_back = w + row_gap
    cy = ab * y_back / (af + ab)
    out = [PileEntry(t, x + _LENGTHS[t] / 2 - cf, -cy) for t, x in front]
    out += [PileEntry(t, x + shift + _LENGTHS[t] / 2 - cf, y_back - cy) for t, x in back]
    return out


def pile_footprint(layout: Sequence[PileEntry]) -> np.ndarray:
    """Extents (along x, along y) of the axis-aligned bounding box of a layout."""
    pts = []
    for e in layout:
        c, s = np.cos(e.yaw), np.sin(e.yaw)
        hl, hw = _LENGTHS[e.type] / 2, BRICK_WIDTH / 2
        for sx in (-1, 1):
            for sy in (-1, 1):
                pts.append([e.x + c * sx * hl - s * sy * hw, e.y + s * sx * hl + c * sy * hw])
    pts = np.array(pts)
    return np.ptp(pts, axis=0)


@dataclass
class Scene:
    bricks: List[BrickInstance]
    target_frame_pose: Pose3 = field(default_factory=Pose3.identity)
    marker_pose: Optional[Pose3] = None

    def __post_init__(self):
        ids = [b.id for b in self.bricks]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate brick ids")

    def world_bricks(self) -> List[BrickInstance]:
        """Bricks with poses composed into the world frame."""
        T = self.target_frame_pose.with_frames(None, None)
        return [b.moved(T @ b.pose.with_frames(None, None)) for b in self.bricks]

    def brick(self, brick_id: int) -> BrickInstance:
        for b in self.bricks:
            if b.id == brick_id:
                return b
        raise KeyError(brick_id)

    def to_dict(self) -> dict:
        return {
            "target_frame_pose": self.target_frame_pose.to_dict(),
            "marker_pose": None if self.marker_pose is None else self.marker_pose.to_dict(),
            "bricks": [{"id": b.id, "type": b.spec.type.value, "pose": b.pose.to_dict()} for b in self.bricks],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        bricks = [BrickInstance(int(b["id"]), brick_spec(b["type"]), Pose3.from_dict(b["pose"])) for b in d["bricks"]]
        mp = d.get("marker_pose")
        return cls(bricks, Pose3.from_dict(d["target_frame_pose"]), None if mp is None else Pose3.from_dict(mp))


def box_penetration(a: BrickInstance, b: BrickInstance) -> float:
    """Penetration depth between two bricks (<= 0 when separated).

    Separating-axis test on the face normals and edge cross products of both
    boxes; the result is the minimum overlap over all axes.
    """
    Ra, Rb = a.pose.R, b.pose.R
    ha, hb = a.spec.dims / 2, b.spec.dims / 2
    d = b.pose.t - a.pose.t
    axes = [Ra[:, i] for i in range(3)] + [Rb[:, i] for i in range(3)]
    for i in range(3):
        for j in range(3):
            c = np.cross(Ra[:, i], Rb[:, j])
            n = np.linalg.norm(c)
            if n > 1e-9:
                axes.append(c / n)
    depth = np.inf
    for ax in axes:
        ra = np.sum(ha * np.abs(Ra.T @ ax))
        rb = np.sum(hb * np.abs(Rb.T @ ax))
        depth = min(depth, ra + rb - abs(d @ ax))
    return float(depth)


def check_no_overlap(bricks: Sequence[BrickInstance], tol: float = 1e-6) -> None:
    for i in range(len(bricks)):
        for j in range(i + 1, len(bricks)):
            if box_penetration(bricks[i], bricks[j]) > tol:
                raise ValueError(f"bricks {bricks[i].id} and {bricks[j].id} interpenetrate")


def assemble_scene(
    source,
    frame_pose: Optional[Pose3] = None,
    built_subset: Optional[Iterable[int]] = None,
    patch_size=None,
) -> Scene:
    """Build a ``Scene`` from a ``Blueprint`` or a pile layout.

    ``built_subset`` selects brick ids (blueprint order or layout index); ``None``
    means all.  Raises ``ValueError`` on interpenetrating bricks.
    """
    frame_pose = Pose3.identity() if frame_pose is None else frame_pose
    bricks: List[BrickInstance] = []
    if isinstance(source, Blueprint):
        entries = [(i, b.type, blueprint_brick_pose(k, b)) for i, k, b in source.bricks()]
    else:
        entries = [
            (i, e.type, Pose3.from_xyz_yaw(e.x, e.y, e.layer * BRICK_HEIGHT + BRICK_HEIGHT / 2, e.yaw, "brick", "pile"))
            for i, e in enumerate(source)
        ]
    wanted = None if built_subset is None else set(built_subset)
    if wanted is not None:
        unknown = wanted - {i for i, _, _ in entries}
        if unknown:
            raise ValueError(f"unknown brick ids {sorted(unknown)}")
    for i, t, pose in entries:
        if wanted is None or i in wanted:
            bricks.append(BrickInstance(i, brick_spec(t, patch_size), pose))
    check_no_overlap(bricks)
    return Scene(bricks, frame_pose)
