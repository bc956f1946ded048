"""L-shaped ground marker detection from ground-projected points."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .errors import Invalid, NotFound
from .geom import OrientedRect, Pose3, cluster_indices, min_oriented_rect


@dataclass(frozen=True)
class MarkerModel:
    leg_lengths: Tuple[float, float] = (2.0, 1.5)
    tolerance: float = 0.20

    def __post_init__(self):
        l_long, l_short = self.leg_lengths
        if not l_long >= l_short > 0:
            raise ValueError("leg lengths must satisfy long >= short > 0")


@dataclass
class MarkerDetection:
    corner: np.ndarray
    direction: np.ndarray
    rect: OrientedRect

    def pose(self) -> Pose3:
        """Wall-base frame: origin at the corner, x along the long leg."""
        yaw = float(np.arctan2(self.direction[1], self.direction[0]))
        return Pose3.from_xyz_yaw(self.corner[0], self.corner[1], 0.0, yaw, "wall", "world")

    def to_dict(self) -> dict:
        return {
            "corner": [float(v) for v in self.corner],
            "direction": [float(v) for v in self.direction],
            "sides": [float(v) for v in self.rect.sides],
        }


@dataclass
class ProjectionBuffer:
    """Time-stamped ground points kept over a closed sliding window ``[t - window, t]``."""

    window: float = 10.0
    times: List[float] = field(default_factory=list)
    batches: List[np.ndarray] = field(default_factory=list)

    def accumulate(self, points, t: float) -> "ProjectionBuffer":
        if self.times and t < self.times[-1]:
            raise ValueError("timestamps must be non-decreasing")
        self.times.append(float(t))
        self.batches.append(np.asarray(points, float).reshape(-1, 2))
        self._evict(t)
        return self

    def _evict(self, t: float) -> None:
        keep = [i for i, ti in enumerate(self.times) if ti >= t - self.window]
        self.times = [self.times[i] for i in keep]
        self.batches = [self.batches[i] for i in keep]

    def query(self, t: Optional[float] = None) -> np.ndarray:
        """Points whose timestamp lies in ``[t - window, t]`` (latest time by default)."""
        if t is None:
            t = self.times[-1] if self.times else 0.0
        sel = [b for ti, b in zip(self.times, self.batches) if t - self.window <= ti <= t]
        return np.vstack(sel) if sel else np.zeros((0, 2))

    def to_csv(self, path) -> None:
        rows = [np.column_stack([np.full(len(b), ti), b]) for ti, b in zip(self.times, self.batches)]
        data = np.vstack(rows) if rows else np.zeros((0, 3))
        np.savetxt(path, data, delimiter=",", header="t,x,y", comments="", fmt="%.9g")

    @classmethod
    def from_csv(cls, path, window: float = 10.0) -> "ProjectionBuffer":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2).reshape(-1, 3)
        buf = cls(window)
        for t in np.unique(data[:, 0]):
            buf.times.append(float(t))
            buf.batches.append(data[data[:, 0] == t, 1:])
        return buf


def accumulate(buffer: ProjectionBuffer, points, t: float) -> ProjectionBuffer:
    return buffer.accumulate(points, t)


def detect_l_marker(source, model: MarkerModel = MarkerModel(), t: Optional[float] = None,
                    cluster_tolerance: float = 0.3) -> MarkerDetection:
    """Corner and long-leg direction of an L marker.

    ``source`` is a ``ProjectionBuffer`` or an (N, 2) array.  The empty corner
    of the minimum-area rectangle is the one farthest (summed distance) from
    the points; the L corner is diagonally opposite it.
    """
    pts = source.query(t) if isinstance(source, ProjectionBuffer) else np.asarray(source, float).reshape(-1, 2)
    if len(pts) < 3:
        raise NotFound("not enough marker points")
    clusters = cluster_indices(np.column_stack([pts, np.zeros(len(pts))]), cluster_tolerance, 3)
    if not clusters:
        raise NotFound("no marker cluster")
    cl = pts[clusters[0]]
    rect = min_oriented_rect(cl)
    corners = rect.corners()
    score = [np.linalg.norm(cl - c, axis=1).sum() for c in corners]
    empty = int(np.argmax(score))
    corner = corners[(empty + 2) % 4]
    long_len, short_len = rect.sides
    l_long, l_short = model.leg_lengths
    tol = model.tolerance
    ok = abs(long_len - l_long) <= tol * l_long and abs(short_len - l_short) <= tol * l_short
    if not ok:
        raise Invalid(
            f"rectangle sides {long_len:.3f} x {short_len:.3f} do not match legs {l_long} x {l_short}",
            {"sides": [float(long_len), float(short_len)]},
        )
    d = rect.axes[0].copy()
    if d @ (rect.center - corner) < 0:
        d = -d
    return MarkerDetection(corner, d / np.linalg.norm(d), rect)

