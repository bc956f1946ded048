"""Joint per-brick refinement with pairwise rigidity terms.

Each brick j gets a yaw ``theta_j`` about the problem's up axis and a
translation ``t_j``, applied about its initial center ``c_j``:
``C_j(p) = R(theta_j) (p - c_j) + c_j + t_j``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from ..geom import PointCloud, Pose3
from ..world import BrickInstance, box_penetration
from .solver import SolverConfig, damped_step


@dataclass(frozen=True)
class CorrespondenceParams:
    max_dist: float = 0.10
    min_normal_dot: float = 0.8

    def __post_init__(self):
        if self.max_dist <= 0:
            raise ValueError("max_dist must be positive")
        if not -1 <= self.min_normal_dot <= 1:
            raise ValueError("min_normal_dot must lie in [-1, 1]")


@dataclass
class BrickModel:
    """Model samples of one brick (base frame, with normals) and its initial pose."""

    id: int
    cloud: PointCloud
    pose: Pose3


@dataclass
class MultiBrickProblem:
    bricks: List[BrickModel]
    scan: PointCloud
    contacts: List[Tuple[int, int]] = field(default_factory=list)
    lambda_r: float = 1.0
    lambda_t: float = 1.0
    corr: CorrespondenceParams = field(default_factory=CorrespondenceParams)
    up: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        self.up = np.asarray(self.up, float) / np.linalg.norm(self.up)
        pairs = set()
        for i, j in self.contacts:
            if i == j:
                raise ValueError("a brick cannot contact itself")
            key = (min(i, j), max(i, j))
            if key in pairs:
                raise ValueError(f"duplicate contact pair {key}")
            pairs.add(key)
        self.contacts = sorted(pairs)
        for b in self.bricks:
            if len(b.cloud) == 0:
                raise ValueError(f"brick {b.id} has an empty model cloud")
            if b.cloud.normals is None:
                raise ValueError(f"brick {b.id} model cloud needs normals")
        if len(self.scan) and self.scan.normals is None:
            raise ValueError("scan needs normals")
        # flattened model arrays
        self._P = np.vstack([b.cloud.points for b in self.bricks]) if self.bricks else np.zeros((0, 3))
        self._Np = np.vstack([b.cloud.normals for b in self.bricks]) if self.bricks else np.zeros((0, 3))
        self._owner = np.concatenate([np.full(len(b.cloud), k) for k, b in enumerate(self.bricks)]).astype(int) \
            if self.bricks else np.zeros(0, int)
        self._centers = np.array([b.pose.t for b in self.bricks]).reshape(-1, 3)
        self._tree = cKDTree(self.scan.points) if len(self.scan) else None

    @property
    def n_params(self) -> int:
        return 4 * len(self.bricks)

    def transformed(self, G: Pose3) -> "MultiBrickProblem":
        """The same problem with every geometric input mapped by ``G``."""
        bricks = [BrickModel(b.id, b.cloud.transformed(G), G.with_frames(b.pose.to_frame, b.pose.to_frame) @ b.pose)
                  for b in self.bricks]
        return MultiBrickProblem(bricks, self.scan.transformed(G), list(self.contacts), self.lambda_r, self.lambda_t,
                                 self.corr, G.rotate(self.up))

    def to_dict(self) -> dict:
        def cloud(c: PointCloud):
            return {"points": c.points.tolist(), "normals": None if c.normals is None else c.normals.tolist()}

        return {
            "bricks": [{"id": b.id, "pose": b.pose.to_dict(), "cloud": cloud(b.cloud)} for b in self.bricks],
            "scan": cloud(self.scan),
            "contacts": [list(p) for p in self.contacts],
            "lambda_r": self.lambda_r,
            "lambda_t": self.lambda_t,
            "corr": {"max_dist": self.corr.max_dist, "min_normal_dot": self.corr.min_normal_dot},
            "up": self.up.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MultiBrickProblem":
        def cloud(c):
            return PointCloud(np.array(c["points"], float).reshape(-1, 3),
                              None if c["normals"] is None else np.array(c["normals"], float).reshape(-1, 3))

        bricks = [BrickModel(int(b["id"]), cloud(b["cloud"]), Pose3.from_dict(b["pose"])) for b in d["bricks"]]
        return cls(bricks, cloud(d["scan"]), [tuple(p) for p in d["contacts"]], d["lambda_r"], d["lambda_t"],
                   CorrespondenceParams(**d["corr"]), np.array(d["up"], float))


@dataclass
class AlignmentResult:
    target_pose: Optional[Pose3]
    ids: List[int]
    yaw: np.ndarray
    translation: np.ndarray
    confidence: np.ndarray
    correspondences: np.ndarray
    flagged: List[int]
    poses: List[Pose3]
    objective: float
    iterations: int
    step_costs: List[Tuple[float, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "target_pose": None if self.target_pose is None else self.target_pose.to_dict(),
            "bricks": [
                {"id": int(i), "yaw": float(th), "translation": [float(v) for v in tj], "confidence": float(c),
                 "correspondences": int(m), "pose": p.to_dict()}
                for i, th, tj, c, m, p in zip(self.ids, self.yaw, self.translation, self.confidence,
                                              self.correspondences, self.poses)
            ],
            "flagged": [int(i) for i in self.flagged],
            "objective": self.objective,
            "iterations": self.iterations,
        }


def contact_pairs(bricks: Sequence[BrickInstance], eps: float = 0.01) -> List[Tuple[int, int]]:
    """Index pairs whose boxes, each grown by ``eps``, intersect."""
    out = []
    for i in range(len(bricks)):
        for j in range(i + 1, len(bricks)):
            if box_penetration(bricks[i], bricks[j]) > -2 * eps:
                out.append((i, j))
    return out


# ---------------------------------------------------------------------------
# residual model


def _axis_rotation(u: np.ndarray, theta) -> np.ndarray:
    """Rotation matrices about unit axis ``u``; ``theta`` scalar or (k,)."""
    th = np.atleast_1d(np.asarray(theta, float))
    K = np.array([[0, -u[2], u[1]], [u[2], 0, -u[0]], [-u[1], u[0], 0]])
    s, c = np.sin(th)[:, None, None], np.cos(th)[:, None, None]
    return np.eye(3)[None] + s * K[None] + (1 - c) * (K @ K)[None]


def _rotate_about(u, theta_per_point, v):
    """Rodrigues rotation of rows ``v`` by per-row angles about ``u``."""
    c, s = np.cos(theta_per_point)[:, None], np.sin(theta_per_point)[:, None]
    return v * c + np.cross(u, v) * s + np.outer(v @ u, u) * (1 - c)


class _Evaluator:
    def __init__(self, prob: MultiBrickProblem):
        self.p = prob
        self.nb = len(prob.bricks)

    def model_points(self, x: np.ndarray):
        p = self.p
        th = x[0::4][p._owner]
        t = x.reshape(-1, 4)[:, 1:][p._owner]
        c = p._centers[p._owner]
        rel = _rotate_about(p.up, th, p._P - c)
        return rel + c + t, rel, _rotate_about(p.up, th, p._Np)

    def correspondences(self, x: np.ndarray):
        """(model index, scan index) pairs passing the distance and normal gates."""
        p = self.p
        if p._tree is None or len(p._P) == 0:
            return np.zeros(0, int), np.zeros(0, int)
        X, _, Nm = self.model_points(x)
        dist, idx = p._tree.query(X, distance_upper_bound=p.corr.max_dist)
        ok = np.isfinite(dist)
        mi = np.nonzero(ok)[0]
        si = idx[ok]
        dots = np.einsum("ij,ij->i", Nm[mi], p.scan.normals[si])
        keep = dots >= p.corr.min_normal_dot
        return mi[keep], si[keep]

    def counts(self, corr) -> np.ndarray:
        return np.bincount(self.p._owner[corr[0]], minlength=self.nb)

    def residuals(self, x: np.ndarray, corr, jacobian: bool = False):
        p = self.p
        mi, si = corr
        M = self.counts(corr)
        w = np.zeros(self.nb)
        w[M > 0] = 1.0 / np.sqrt(M[M > 0])
        X, rel, _ = self.model_points(x)
        own = p._owner[mi]
        nq = p.scan.normals[si] if len(si) else np.zeros((0, 3))
        wd = w[own]
        r_data = wd * np.einsum("ij,ij->i", nq, X[mi] - p.scan.points[si]) if len(mi) else np.zeros(0)
        r_pair, J_pair = self._pair_terms(x, jacobian)
        r = np.concatenate([r_data, r_pair])
        if not jacobian:
            return r
        m = len(mi)
        rows = np.repeat(np.arange(m), 4)
        cols = (4 * own[:, None] + np.arange(4)[None]).ravel()
        dth = wd * np.einsum("ij,ij->i", nq, np.cross(p.up, rel[mi]))
        vals = np.column_stack([dth, wd[:, None] * nq]).ravel()
        Jd = sparse.csr_matrix((vals, (rows, cols)), shape=(m, 4 * self.nb))
        J = sparse.vstack([Jd, sparse.csr_matrix(J_pair)]).tocsr() if len(r_pair) else Jd
        return r, J

    def _pair_terms(self, x, jacobian):
        p = self.p
        if not p.contacts:
            return np.zeros(0), np.zeros((0, 4 * self.nb))
        u = p.up
        K = np.array([[0, -u[2], u[1]], [u[2], 0, -u[0]], [-u[1], u[0], 0]])
        sr, st = np.sqrt(p.lambda_r), np.sqrt(p.lambda_t)
        res = []
        jac = []
        for i, j in p.contacts:
            th_i, th_j = x[4 * i], x[4 * j]
            t_i, t_j = x[4 * i + 1:4 * i + 4], x[4 * j + 1:4 * j + 4]
            Ri, Rj = _axis_rotation(u, th_i)[0], _axis_rotation(u, th_j)[0]
            ci, cj = p._centers[i], p._centers[j]
            Q = p.bricks[j].pose.R
            A = Rj.T @ Ri
            # written so both parts vanish exactly at the initialization
            ER = Q.T @ (A - np.eye(3)) @ Q
            inner = (Ri - np.eye(3)) @ (cj - ci) + t_i - t_j
            v = Q.T @ (Rj.T @ inner)
            res.append(np.concatenate([sr * ER.ravel(), st * v]))
            if jacobian:
                Jp = np.zeros((12, 4 * self.nb))
                # rotation block: dA/dth_i = Rj^T K Ri, dA/dth_j = -Rj^T K Ri
                dA_i = Rj.T @ K @ Ri
                Jp[:9, 4 * i] = sr * (Q.T @ dA_i @ Q).ravel()
                Jp[:9, 4 * j] = -sr * (Q.T @ dA_i @ Q).ravel()
                QR = Q.T @ Rj.T
                Jp[9:, 4 * i] = st * QR @ (K @ Ri @ (cj - ci))
                Jp[9:, 4 * i + 1:4 * i + 4] = st * QR
                Jp[9:, 4 * j + 1:4 * j + 4] = -st * QR
                Jp[9:, 4 * j] = st * Q.T @ (-(Rj.T @ K) @ inner)
                jac.append(Jp)
        r = np.concatenate(res)
        J = np.vstack(jac) if jacobian else None
        return r, J


def objective(prob: MultiBrickProblem, x: np.ndarray, corr=None) -> float:
    ev = _Evaluator(prob)
    corr = ev.correspondences(x) if corr is None else corr
    r = ev.residuals(x, corr)
    return float(r @ r)


def solve_multi_brick(prob: MultiBrickProblem, cfg: Optional[SolverConfig] = None, x0=None,
                      target_pose: Optional[Pose3] = None) -> AlignmentResult:
    """Damped Gauss-Newton over per-brick yaw and translation.

    Correspondences are re-found every iteration; a step is accepted only if it
    lowers the cost for the current correspondences.
    """
    cfg = cfg or SolverConfig()
    ev = _Evaluator(prob)
    x = np.zeros(prob.n_params) if x0 is None else np.asarray(x0, float).copy()
    mu = cfg.damping_init
    steps: List[Tuple[float, float]] = []
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        corr = ev.correspondences(x)
        r, J = ev.residuals(x, corr, jacobian=True)
        cost = float(r @ r)
        A = (J.T @ J).toarray()
        g = J.T @ r
        accepted = False
        for _ in range(cfg.max_damping_tries):
            delta = damped_step(A, g, mu)
            rn = ev.residuals(x + delta, corr)
            new_cost = float(rn @ rn)
            if new_cost < cost:
                accepted = True
                mu = max(mu / cfg.damping_down, 1e-12)
                break
            mu *= cfg.damping_up
        if not accepted:
            break
        x = x + delta
        steps.append((cost, new_cost))
        if np.linalg.norm(delta) < cfg.pose_change_tol or abs(cost - new_cost) <= cfg.cost_change_tol * max(cost, 1e-300):
            break
    corr = ev.correspondences(x)
    M = ev.counts(corr)
    sizes = np.array([len(b.cloud) for b in prob.bricks])
    conf = np.minimum(1.0, M / sizes) if len(sizes) else np.zeros(0)
    final = float(np.sum(ev.residuals(x, corr) ** 2))
    xs = x.reshape(-1, 4)
    poses = []
    for k, b in enumerate(prob.bricks):
        Rk = _axis_rotation(prob.up, xs[k, 0])[0]
        c = prob._centers[k]
        C = Pose3.from_rt(Rk, c + xs[k, 1:] - Rk @ c)
        poses.append(Pose3.from_rt(C.R @ b.pose.R, C.apply(b.pose.t), b.pose.from_frame, b.pose.to_frame))
    return AlignmentResult(
        target_pose=target_pose,
        ids=[b.id for b in prob.bricks],
        yaw=xs[:, 0].copy(),
        translation=xs[:, 1:].copy(),
        confidence=conf,
        correspondences=M,
        flagged=[b.id for b, m in zip(prob.bricks, M) if m == 0],
        poses=poses,
        objective=final,
        iterations=it,
        step_costs=steps,
    )


def jacobian_check(prob: MultiBrickProblem, x, h: float = 1e-6, corr=None) -> float:
    """Max |J_analytic - J_fd| relative to max |J_fd| (central differences, fixed correspondences)."""
    ev = _Evaluator(prob)
    x = np.asarray(x, float)
    corr = ev.correspondences(x) if corr is None else corr
    _, J = ev.residuals(x, corr, jacobian=True)
    Ja = J.toarray()
    Jfd = np.zeros_like(Ja)
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = h
        Jfd[:, k] = (ev.residuals(x + e, corr) - ev.residuals(x - e, corr)) / (2 * h)
    if Ja.size == 0:
        return 0.0
    scale = np.max(np.abs(Jfd))
    if scale == 0:
        return float(np.max(np.abs(Ja)))
    return float(np.max(np.abs(Ja - Jfd)) / scale)
