"""Rough rigid alignment of the whole model to the scan."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.spatial import cKDTree

from ..errors import Diverged
from ..geom import PointCloud, Pose3, rotvec_to_matrix
from .solver import SolverConfig, damped_step

MIN_CORRESPONDENCES = 10


@dataclass(frozen=True)
class RoughAlignConfig:
    coarse_dist: float = 0.5
    fine_dist: float = 0.1
    dir_weight: float = 1.0
    min_normal_dot: float = 0.8
    max_iterations: int = 50
    solver: SolverConfig = field(default_factory=lambda: SolverConfig(max_iterations=50))


def _apply(R, t, pts):
    return pts @ R.T + t


def _fibonacci_sphere(n: int) -> np.ndarray:
    k = np.arange(n) + 0.5
    z = 1 - 2 * k / n
    phi = np.pi * (1 + 5**0.5) * k
    r = np.sqrt(1 - z * z)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


class _Matcher:
    """Nearest-neighbour search, optionally restricted to compatible normals.

    Scan points are indexed per anchor direction; a query uses the tree of the
    anchor closest to its normal, which holds every scan point whose normal can
    pass the ``min_dot`` gate for any normal in that anchor's cell.
    """

    def __init__(self, points, normals, min_dot: float, n_anchors: int = 40):
        self.points, self.normals, self.min_dot = points, normals, min_dot
        self.full = cKDTree(points)
        self.anchors = _fibonacci_sphere(n_anchors)
        cover = np.max(np.min(np.arccos(np.clip(_fibonacci_sphere(4000) @ self.anchors.T, -1, 1)), axis=1))
        reach = np.cos(min(np.pi, np.arccos(np.clip(min_dot, -1, 1)) + cover))
        self.members = []
        self.trees = []
        dots = normals @ self.anchors.T
        for a in range(n_anchors):
            m = np.nonzero(dots[:, a] >= reach)[0]
            self.members.append(m)
            self.trees.append(cKDTree(points[m]) if len(m) else None)

    def __call__(self, X, N, max_dist, k: int = 8):
        if N is None:
            dist, idx = self.full.query(X, distance_upper_bound=max_dist)
            return np.isfinite(dist), np.where(np.isfinite(dist), idx, 0)
        ok = np.zeros(len(X), bool)
        out = np.zeros(len(X), int)
        cell = np.argmax(N @ self.anchors.T, axis=1)
        for a in np.unique(cell):
            rows = np.nonzero(cell == a)[0]
            tree = self.trees[a]
            if tree is None:
                continue
            kk = min(k, len(self.members[a]))
            dist, idx = tree.query(X[rows], k=kk, distance_upper_bound=max_dist)
            dist, idx = dist.reshape(len(rows), -1), idx.reshape(len(rows), -1)
            valid = np.isfinite(dist)
            glob = self.members[a][np.where(valid, idx, 0)]
            good = valid & (np.einsum("ikj,ij->ik", self.normals[glob], N[rows]) >= self.min_dot)
            first = np.argmax(good, axis=1)
            r = np.arange(len(rows))
            ok[rows] = good[r, first]
            out[rows] = glob[r, first]
        return ok, out


def _stage(model_pts, model_normals, scan_pts, scan_normals, match, R, t, max_dist, point_to_plane, l3, w_dir, cfg,
           history):
    """One ICP stage.  The pose is perturbed on the left about the model centroid."""
    scfg = cfg.solver
    mu = scfg.damping_init
    for _ in range(cfg.max_iterations):
        X = _apply(R, t, model_pts)
        ok, idx = match(X, None if model_normals is None else model_normals @ R.T, max_dist)
        if ok.sum() < MIN_CORRESPONDENCES:
            raise Diverged(f"only {int(ok.sum())} correspondences within {max_dist} m")
        P = model_pts[ok]
        Q = scan_pts[idx[ok]]
        N = scan_normals[idx[ok]] if point_to_plane else None
        wpt = 1.0 / np.sqrt(len(P))

        def residuals(Rc, tc):
            Xc = _apply(Rc, tc, P)
            if point_to_plane:
                r = wpt * np.einsum("ij,ij->i", N, Xc - Q)
            else:
                r = wpt * (Xc - Q).ravel()
            if l3 is not None:
                r = np.append(r, np.sqrt(w_dir) * (1.0 - (Rc[:, 0] @ l3)))
            return r, Xc

        r, Xc = residuals(R, t)
        cost = float(r @ r)
        c = Xc.mean(axis=0)
        d = Xc - c
        if point_to_plane:
            J = wpt * np.hstack([np.cross(d, N), N])
        else:
            m = len(d)
            J = np.zeros((3 * m, 6))
            S = np.zeros((m, 3, 3))
            S[:, 0, 1], S[:, 0, 2] = d[:, 2], -d[:, 1]
            S[:, 1, 0], S[:, 1, 2] = -d[:, 2], d[:, 0]
            S[:, 2, 0], S[:, 2, 1] = d[:, 1], -d[:, 0]
            J[:, :3] = S.reshape(3 * m, 3)  # -[d]x
            J[:, 3:] = np.tile(np.eye(3), (m, 1))
            J *= wpt
        if l3 is not None:
            v = R[:, 0]
            J = np.vstack([J, np.sqrt(w_dir) * np.append(-np.cross(v, l3), np.zeros(3))])
        A, g = J.T @ J, J.T @ r
        accepted = False
        for _ in range(scfg.max_damping_tries):
            delta = damped_step(A, g, mu)
            dR = rotvec_to_matrix(delta[:3])
            Rn = dR @ R
            tn = dR @ (t - c) + c + delta[3:]
            rn, _ = residuals(Rn, tn)
            new_cost = float(rn @ rn)
            if new_cost < cost:
                accepted = True
                mu = max(mu / scfg.damping_down, 1e-12)
                break
            mu *= scfg.damping_up
        if not accepted:
            break
        U, _, Vt = np.linalg.svd(Rn)
        R, t = U @ Vt, tn
        history.append((cost, new_cost))
        if np.linalg.norm(delta) < scfg.pose_change_tol or abs(cost - new_cost) <= scfg.cost_change_tol * max(cost, 1e-300):
            break
    return R, t


def rough_align(
    model: PointCloud,
    scan: PointCloud,
    init: Pose3,
    marker_dir=None,
    cfg: Optional[RoughAlignConfig] = None,
    history: Optional[List] = None,
) -> Pose3:
    """Refine ``init`` (target frame -> base frame) so the model overlays the scan.

    ``model`` is in target-frame coordinates and ``scan`` in base-frame
    coordinates with normals.  A coarse point-to-plane stage is followed by a
    fine point-to-point stage; an optional marker direction adds the cost
    ``w * (1 - x_axis . l)^2`` to both.
    """
    cfg = cfg or RoughAlignConfig()
    if len(model) == 0 or len(scan) == 0:
        raise ValueError("model and scan must be non-empty")
    if scan.normals is None:
        raise ValueError("scan needs normals")
    history = [] if history is None else history
    match = _Matcher(scan.points, scan.normals, cfg.min_normal_dot)
    l3 = None
    if marker_dir is not None:
        l = np.asarray(marker_dir, float).reshape(-1)[:2]
        l3 = np.array([l[0], l[1], 0.0]) / np.linalg.norm(l)
    R, t = init.R, init.t
    R, t = _stage(model.points, model.normals, scan.points, scan.normals, match, R, t, cfg.coarse_dist, True, l3, cfg.dir_weight, cfg, history)
    R, t = _stage(model.points, model.normals, scan.points, scan.normals, match, R, t, cfg.fine_dist, False, l3, cfg.dir_weight, cfg, history)
    return Pose3.from_rt(R, t, init.from_frame, init.to_frame)
