"""Quadrilateral extraction from the patch mask with per-corner color voting."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import cv2
import numpy as np

from ..geom import Pose3
from .segment import SegmentationParams, downsample, to_hsv

# half-open hue windows in degrees; red wraps through 0
HUE_WINDOWS: Dict[str, Tuple[float, float]] = {
    "red": (345.0, 15.0),
    "orange": (15.0, 45.0),
    "green": (75.0, 165.0),
    "blue": (195.0, 285.0),
}


def classify_hue(hue: float, windows: Dict[str, Tuple[float, float]] = HUE_WINDOWS) -> Optional[str]:
    h = hue % 360.0
    for name, (lo, hi) in windows.items():
        if (lo <= h < hi) if lo < hi else (h >= lo or h < hi):
            return name
    return None


@dataclass
class PatchDetection:
    """Quad corners are full-resolution pixels, counter-clockwise in (u, v)."""

    quad: np.ndarray
    type: str
    pose: Optional[Pose3] = None
    rmse: Optional[float] = None
    ambiguous: bool = False
    probes: List[Optional[str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "quad": np.asarray(self.quad).tolist(),
            "type": self.type,
            "pose": None if self.pose is None else self.pose.to_dict(),
            "rmse": self.rmse,
            "ambiguous": self.ambiguous,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PatchDetection":
        return cls(np.array(d["quad"], float), d["type"], None if d["pose"] is None else Pose3.from_dict(d["pose"]),
                   d["rmse"], d["ambiguous"])


def signed_area(poly) -> float:
    p = np.asarray(poly, float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(x @ np.roll(y, -1) - y @ np.roll(x, -1))


def simplify_contour(contour: np.ndarray, max_vertices: int = 8) -> np.ndarray:
    """Douglas-Peucker with the tolerance doubled from 1 px until at most ``max_vertices`` remain."""
    eps = 1.0
    poly = cv2.approxPolyDP(contour, eps, True).reshape(-1, 2)
    while len(poly) > max_vertices:
        eps *= 2.0
        poly = cv2.approxPolyDP(contour, eps, True).reshape(-1, 2)
    return poly


def reduce_polygon(poly: np.ndarray, target: int = 4) -> np.ndarray:
    """Drop the vertex spanning the smallest triangle with its neighbours until ``target`` remain."""
    p = np.asarray(poly, float)
    while len(p) > target:
        prev, nxt = np.roll(p, 1, axis=0), np.roll(p, -1, axis=0)
        a = prev - p
        b = nxt - p
        areas = np.abs(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])
        p = np.delete(p, int(np.argmin(areas)), axis=0)
    return p


def boundary_distance(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Distance of each point to the closest edge of the closed polygon."""
    pts = np.asarray(points, float).reshape(-1, 2)
    best = np.full(len(pts), np.inf)
    for k in range(len(poly)):
        a, b = poly[k], poly[(k + 1) % len(poly)]
        ab = b - a
        t = np.clip((pts - a) @ ab / max(ab @ ab, 1e-12), 0, 1)
        best = np.minimum(best, np.linalg.norm(pts - (a + t[:, None] * ab), axis=1))
    return best


def _probe(mask, sat, hue, corner, prev, nxt, d, params):
    """Probe along the corner bisector: the inside pixel must be patch, the outside hue votes."""
    H, W = mask.shape
    u = (prev - corner) / np.linalg.norm(prev - corner) + (nxt - corner) / np.linalg.norm(nxt - corner)
    u = u / np.linalg.norm(u)
    inside = np.rint(corner + d * u).astype(int)
    outside = np.rint(corner - d * u).astype(int)
    for p in (inside, outside):
        if not (0 <= p[0] < W and 0 <= p[1] < H):
            return None
    if not mask[inside[1], inside[0]]:
        return None
    if sat[outside[1], outside[0]] < params.min_saturation:
        return None
    return classify_hue(hue[outside[1], outside[0]])


def fit_quad_edges(contour: np.ndarray, poly: np.ndarray, offset: float = 0.5) -> np.ndarray:
    """Corners from total-least-squares lines fitted to each side's contour pixels.

    Contour pixels lie inside the region; each line is pushed ``offset`` px
    outward to sit on the region boundary.  Falls back to ``poly`` when a side
    has too few pixels.
    """
    pts = contour.reshape(-1, 2).astype(float)
    n = len(poly)
    lines = []
    for k in range(n):
        a, b = poly[k], poly[(k + 1) % n]
        ab = b - a
        L = np.linalg.norm(ab)
        if L < 1e-9:
            return poly
        t = (pts - a) @ ab / L**2
        nrm = np.array([ab[1], -ab[0]]) / L  # outward for counter-clockwise order
        dist = (pts - a) @ nrm
        trim = min(0.2, 2.0 / L)
        sel = (t > trim) & (t < 1 - trim) & (np.abs(dist) < 3.0)
        if sel.sum() < 3:
            return poly
        q = pts[sel]
        c = q.mean(axis=0)
        _, _, vt = np.linalg.svd(q - c)
        d = vt[0]
        nn = np.array([d[1], -d[0]])
        if nn @ nrm < 0:
            nn = -nn
        lines.append((nn, nn @ c + offset))
    out = np.zeros_like(poly, dtype=float)
    for k in range(n):
        (n1, c1), (n2, c2) = lines[k - 1], lines[k]
        A = np.array([n1, n2])
        if abs(np.linalg.det(A)) < 1e-6:
            return poly
        out[k] = np.linalg.solve(A, [c1, c2])
    shortest = np.min(np.linalg.norm(poly - np.roll(poly, 1, axis=0), axis=1))
    if np.max(np.linalg.norm(out - poly, axis=1)) > max(4.0, 0.5 * shortest):
        return poly
    return out


def _refine_corners(sat_full: np.ndarray, quad: np.ndarray) -> np.ndarray:
    """Sub-pixel corners on the full-resolution saturation channel."""
    img = np.clip(sat_full, 0, 255).astype(np.float32)
    side = min(np.linalg.norm(quad - np.roll(quad, 1, axis=0), axis=1))
    win = int(max(2, min(5, side / 4)))
    crit = (cv2.TERM_CRITERIA_EPS + cv2.TERM_CRITERIA_MAX_ITER, 40, 0.01)
    pts = quad.astype(np.float32).reshape(-1, 1, 2).copy()
    cv2.cornerSubPix(img, pts, (win, win), (-1, -1), crit)
    out = pts.reshape(-1, 2).astype(float)
    # reject refinements that wander off the coarse corner
    bad = np.linalg.norm(out - quad, axis=1) > 3.0
    out[bad] = quad[bad]
    return out


def extract_quads(mask: np.ndarray, image: np.ndarray, params: SegmentationParams = SegmentationParams(),
                  refine: bool = True) -> List[PatchDetection]:
    """Four-cornered mask components whose outside corner probes agree on a brick color.

    ``mask`` is the half-resolution output of ``segment_patches``; returned
    quads are in full-resolution pixel coordinates.
    """
    small = downsample(image)
    hue, sat, _ = to_hsv(small)
    m = (np.asarray(mask) > 0).astype(np.uint8)
    contours, _ = cv2.findContours(m, cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_NONE)
    sat_full = to_hsv(image)[1] if refine else None
    out = []
    for c in contours:
        if cv2.contourArea(c) < params.min_area:
            continue
        poly = simplify_contour(cv2.convexHull(c))
        if len(poly) < 4:
            continue
        poly = reduce_polygon(poly)
        short_side = min(cv2.minAreaRect(c)[1])
        if boundary_distance(c, poly).max() > max(1.5, params.simplify_rel_tol * short_side):
            continue
        poly = poly.astype(float)
        if signed_area(poly) < 0:
            poly = poly[::-1]
        if not cv2.isContourConvex(np.rint(poly).astype(np.int32).reshape(-1, 1, 2)):
            continue
        edges = fit_quad_edges(c, poly)
        votes = [_probe(m, sat, hue, poly[k], poly[k - 1], poly[(k + 1) % 4], params.corner_probe_dist, params)
                 for k in range(4)]
        if votes[0] is None or any(v != votes[0] for v in votes):
            continue
        # half-resolution pixel centers map to full resolution as 2x + 0.5
        quad = 2.0 * edges + 0.5
        if refine:
            quad = _refine_corners(sat_full, quad)
        out.append(PatchDetection(quad, votes[0], probes=votes))
    return out
