"""Multi-hypothesis tracking of detected bricks, one Kalman filter per hypothesis."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np


def wrap_half_turn(a):
    """Wrap angles to [-pi/2, pi/2); patch yaw is only defined modulo pi."""
    return (np.asarray(a, float) + np.pi / 2) % np.pi - np.pi / 2


@dataclass(frozen=True)
class MHTParams:
    gate: float = 0.5
    max_misses: int = 10
    process_noise: float = 1e-3  # variance growth per second (m^2/s, rad^2/s)
    position_sigma: float = 0.03
    yaw_sigma: float = np.deg2rad(3.0)

    def __post_init__(self):
        if self.gate <= 0 or self.max_misses < 1:
            raise ValueError("gate must be positive and max_misses >= 1")

    @property
    def R(self) -> np.ndarray:
        return np.diag([self.position_sigma**2] * 3 + [self.yaw_sigma**2])


@dataclass
class Detection:
    position: np.ndarray
    yaw: float
    type: str

    def __post_init__(self):
        self.position = np.asarray(self.position, float).reshape(3)

    def to_dict(self) -> dict:
        return {"position": self.position.tolist(), "yaw": float(self.yaw), "type": self.type}

    @classmethod
    def from_dict(cls, d: dict) -> "Detection":
        return cls(d["position"], d["yaw"], d["type"])


@dataclass
class Hypothesis:
    id: int
    state: np.ndarray  # x, y, z, yaw
    cov: np.ndarray
    type: str
    hits: int = 1
    misses: int = 0

    @property
    def position(self) -> np.ndarray:
        return self.state[:3]

    def to_dict(self) -> dict:
        return {"id": self.id, "state": self.state.tolist(), "cov": self.cov.tolist(), "type": self.type,
                "hits": self.hits, "misses": self.misses}

    @classmethod
    def from_dict(cls, d: dict) -> "Hypothesis":
        return cls(int(d["id"]), np.array(d["state"], float), np.array(d["cov"], float), d["type"], int(d["hits"]),
                   int(d["misses"]))


@dataclass
class TrackSet:
    hypotheses: List[Hypothesis] = field(default_factory=list)
    next_id: int = 0

    def __len__(self):
        return len(self.hypotheses)

    def copy(self) -> "TrackSet":
        return TrackSet([Hypothesis(h.id, h.state.copy(), h.cov.copy(), h.type, h.hits, h.misses)
                         for h in self.hypotheses], self.next_id)

    def to_dict(self) -> dict:
        return {"next_id": self.next_id, "hypotheses": [h.to_dict() for h in self.hypotheses]}

    @classmethod
    def from_dict(cls, d: dict) -> "TrackSet":
        return cls([Hypothesis.from_dict(h) for h in d["hypotheses"]], int(d["next_id"]))


def _kalman_update(h: Hypothesis, z: np.ndarray, R: np.ndarray) -> None:
    innov = z - h.state
    innov[3] = wrap_half_turn(innov[3])
    S = h.cov + R
    K = np.linalg.solve(S, h.cov).T  # P S^-1 with P, S symmetric
    h.state = h.state + K @ innov
    h.state[3] = wrap_half_turn(h.state[3])
    I_K = np.eye(4) - K
    h.cov = I_K @ h.cov @ I_K.T + K @ R @ K.T  # Joseph form stays symmetric positive definite


def _fuse(a: Hypothesis, b: Hypothesis) -> Hypothesis:
    """Information-weighted combination of two estimates of the same brick."""
    za = a.state.copy()
    zb = b.state.copy()
    zb[3] = za[3] + wrap_half_turn(zb[3] - za[3])
    Ia, Ib = np.linalg.inv(a.cov), np.linalg.inv(b.cov)
    cov = np.linalg.inv(Ia + Ib)
    cov = (cov + cov.T) / 2
    state = cov @ (Ia @ za + Ib @ zb)
    state[3] = wrap_half_turn(state[3])
    keep = a if (a.hits, -a.id) >= (b.hits, -b.id) else b
    return Hypothesis(keep.id, state, cov, a.type, a.hits + b.hits, min(a.misses, b.misses))


def mht_update(tracks: TrackSet, detections: Sequence[Detection], dt: float,
               params: Optional[MHTParams] = None) -> TrackSet:
    """Predict, associate greedily by distance within the gate, update, spawn, prune and merge.

    Returns a new ``TrackSet``; the input is left untouched.
    """
    params = params or MHTParams()
    if dt < 0:
        raise ValueError("dt must be non-negative")
    out = tracks.copy()
    Q = np.eye(4) * params.process_noise * dt
    for h in out.hypotheses:
        h.cov = h.cov + Q
    dets = list(detections)
    pairs = []
    for i, h in enumerate(out.hypotheses):
        for j, d in enumerate(dets):
            if d.type != h.type:
                continue
            dist = float(np.linalg.norm(d.position - h.position))
            if dist < params.gate:
                pairs.append((dist, i, j))
    pairs.sort()
    used_h, used_d = set(), set()
    R = params.R
    for _, i, j in pairs:
        if i in used_h or j in used_d:
            continue
        used_h.add(i)
        used_d.add(j)
        h = out.hypotheses[i]
        _kalman_update(h, np.append(dets[j].position, wrap_half_turn(dets[j].yaw)), R)
        h.hits += 1
        h.misses = 0
    for i, h in enumerate(out.hypotheses):
        if i not in used_h:
            h.misses += 1
    for j, d in enumerate(dets):
        if j not in used_d:
            out.hypotheses.append(Hypothesis(out.next_id, np.append(d.position, wrap_half_turn(d.yaw)), R.copy(),
                                             d.type))
            out.next_id += 1
    out.hypotheses = [h for h in out.hypotheses if h.misses < params.max_misses]
    out.hypotheses = _merge(out.hypotheses, params.gate)
    return out


def _merge(hyps: List[Hypothesis], gate: float) -> List[Hypothesis]:
    """Fuse same-type hypotheses closer than the gate until none remain."""
    hyps = list(hyps)
    while True:
        best = None
        for a in range(len(hyps)):
            for b in range(a + 1, len(hyps)):
                if hyps[a].type != hyps[b].type:
                    continue
                d = np.linalg.norm(hyps[a].position - hyps[b].position)
                if d < gate and (best is None or d < best[0]):
                    best = (d, a, b)
        if best is None:
            return hyps
        _, a, b = best
        fused = _fuse(hyps[a], hyps[b])
        hyps = [h for k, h in enumerate(hyps) if k not in (a, b)] + [fused]
        hyps.sort(key=lambda h: h.id)
