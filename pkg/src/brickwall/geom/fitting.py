"""Robust geometric model fitting: planes, lines, principal axes, rectangles."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.spatial import ConvexHull, QhullError


@dataclass
class Plane:
    """Plane ``normal · x + offset = 0``."""

    normal: np.ndarray
    offset: float
    inlier_count: int
    inliers: Optional[np.ndarray] = field(default=None, repr=False)

    def distance(self, points) -> np.ndarray:
        """Signed distance of each point."""
        return np.asarray(points, dtype=float) @ self.normal + self.offset


@dataclass
class Line2:
    direction: np.ndarray
    point: np.ndarray
    extent: Tuple[float, float]
    inlier_count: int

    @property
    def normal(self) -> np.ndarray:
        return np.array([-self.direction[1], self.direction[0]])

    def endpoints(self) -> np.ndarray:
        return np.array([self.point + s * self.direction for s in self.extent])

    @property
    def length(self) -> float:
        return float(self.extent[1] - self.extent[0])

    @property
    def midpoint(self) -> np.ndarray:
        return self.point + 0.5 * (self.extent[0] + self.extent[1]) * self.direction

    def distance(self, points) -> np.ndarray:
        """Unsigned perpendicular distance to the infinite line."""
        return np.abs((np.asarray(points, dtype=float) - self.point) @ self.normal)


@dataclass
class OrientedRect:
    """Rectangle with ``axes[0]`` the longer side (half_extents sorted descending)."""

    center: np.ndarray
    axes: np.ndarray
    half_extents: np.ndarray

    @property
    def area(self) -> float:
        return float(4 * self.half_extents[0] * self.half_extents[1])

    @property
    def sides(self) -> np.ndarray:
        return 2 * self.half_extents

    def corners(self) -> np.ndarray:
        """Four corners in counter-clockwise order when the axes are right-handed."""
        a0 = self.axes[0] * self.half_extents[0]
        a1 = self.axes[1] * self.half_extents[1]
        c = self.center
        return np.array([c - a0 - a1, c + a0 - a1, c + a0 + a1, c - a0 + a1])


def fit_plane_ransac(points, threshold: float, iterations: int = 200, rng_seed=0) -> Plane:
    """RANSAC plane with three-point hypotheses.

    The returned plane is the best sampled hypothesis itself (no refit), so the
    reported inliers are exactly those within ``threshold`` of it.
    """
    pts = np.asarray(getattr(points, "points", points), dtype=float)
    n = len(pts)
    if n < 3:
        raise ValueError(f"need at least 3 points for a plane, got {n}")
    rng = np.random.default_rng(rng_seed)
    if n == 3:
        samples = np.array([[0, 1, 2]])
    else:
        samples = np.array([rng.choice(n, 3, replace=False) for _ in range(iterations)])

    best = None
    best_count = -1
    a, b, c = pts[samples[:, 0]], pts[samples[:, 1]], pts[samples[:, 2]]
    normals = np.cross(b - a, c - a)
    norms = np.linalg.norm(normals, axis=1)
    chunk = max(1, int(4e6 // max(n, 1)))
    for start in range(0, len(samples), chunk):
        sl = slice(start, start + chunk)
        nrm, nn, base = normals[sl], norms[sl], a[sl]
        valid = nn > 1e-12
        if not np.any(valid):
            continue
        unit = nrm[valid] / nn[valid, None]
        offs = -np.einsum("ij,ij->i", unit, base[valid])
        counts = np.count_nonzero(np.abs(pts @ unit.T + offs) <= threshold, axis=0)
        k = int(np.argmax(counts))
        if counts[k] > best_count:
            best_count = int(counts[k])
            best = (unit[k], offs[k])
    if best is None:
        raise ValueError("all samples degenerate (collinear points)")
    normal, offset = best
    if normal[2] < 0 or (normal[2] == 0 and normal[np.argmax(np.abs(normal))] < 0):
        normal, offset = -normal, -offset
    inliers = np.flatnonzero(np.abs(pts @ normal + offset) <= threshold)
    return Plane(normal, float(offset), len(inliers), inliers)


def pca(points) -> Tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and matching eigenvectors (columns) of the covariance."""
    pts = np.asarray(points, dtype=float)
    if len(pts) < 2:
        raise ValueError("PCA needs at least two points")
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / len(pts)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    return vals[order], vecs[:, order]


def pca_axis(points) -> np.ndarray:
    """Largest principal direction.  Sign is left to the caller."""
    vals, vecs = pca(points)
    if vals[0] <= 1e-18:
        raise ValueError("degenerate point set: all points coincide")
    return vecs[:, 0]


def _fit_line_tls(pts: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    c = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - c, full_matrices=False)
    return vt[0], c


def fit_lines_ransac(
    points,
    threshold: float,
    min_inliers: int = 20,
    max_lines: int = 8,
    iterations: int = 300,
    rng_seed=0,
) -> List[Line2]:
    """Sequential RANSAC for 2-D lines.

    Each accepted hypothesis is refined by total least squares on its
    inliers; its inliers are then removed before searching for the next.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    rng = np.random.default_rng(rng_seed)
    remaining = np.arange(len(pts))
    lines: List[Line2] = []
    while len(lines) < max_lines and len(remaining) >= max(2, min_inliers):
        sub = pts[remaining]
        m = len(sub)
        i = rng.integers(0, m, iterations)
        j = rng.integers(0, m, iterations)
        d = sub[j] - sub[i]
        ln = np.linalg.norm(d, axis=1)
        ok = ln > 1e-9
        if not np.any(ok):
            break
        i, d, ln = i[ok], d[ok], ln[ok]
        nrm = np.stack([-d[:, 1], d[:, 0]], axis=1) / ln[:, None]
        offs = -np.einsum("ij,ij->i", nrm, sub[i])
        counts = np.count_nonzero(np.abs(sub @ nrm.T + offs) <= threshold, axis=0)
        k = int(np.argmax(counts))
        if counts[k] < min_inliers:
            break
        mask = np.abs(sub @ nrm[k] + offs[k]) <= threshold
        direction, center = _fit_line_tls(sub[mask])
        refined = np.abs((sub - center) @ np.array([-direction[1], direction[0]])) <= threshold
        if refined.sum() >= mask.sum():
            mask = refined
        else:
            direction = d[k] / ln[k]
            center = sub[i[k]]
        if direction[0] < 0 or (direction[0] == 0 and direction[1] < 0):
            direction = -direction
        s = (sub[mask] - center) @ direction
        lines.append(Line2(direction, center, (float(s.min()), float(s.max())), int(mask.sum())))
        remaining = remaining[~mask]
    return lines


def min_oriented_rect(points) -> OrientedRect:
    """Minimum-area enclosing rectangle by rotating calipers over the hull."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("no points")
    try:
        hull = pts[ConvexHull(pts).vertices]
    except (QhullError, ValueError):
        # collinear or too few points: degenerate, zero-width rectangle
        if len(pts) == 1 or np.ptp(pts, axis=0).max() == 0:
            return OrientedRect(pts[0].copy(), np.eye(2), np.zeros(2))
        axis = pts[np.argmax(np.linalg.norm(pts - pts[0], axis=1))] - pts[0]
        axis /= np.linalg.norm(axis)
        perp = np.array([-axis[1], axis[0]])
        s = pts @ axis
        w = pts @ perp
        center = 0.5 * (s.min() + s.max()) * axis + 0.5 * (w.min() + w.max()) * perp
        return OrientedRect(center, np.stack([axis, perp]), np.array([0.5 * np.ptp(s), 0.5 * np.ptp(w)]))

    edges = np.roll(hull, -1, axis=0) - hull
    lens = np.linalg.norm(edges, axis=1)
    edges = edges[lens > 0] / lens[lens > 0, None]
    best = None
    for e in edges:
        perp = np.array([-e[1], e[0]])
        s = hull @ e
        w = hull @ perp
        area = np.ptp(s) * np.ptp(w)
        if best is None or area < best[0] - 1e-15:
            best = (area, e, perp, s, w)
    _, e, perp, s, w = best
    center = 0.5 * (s.min() + s.max()) * e + 0.5 * (w.min() + w.max()) * perp
    half = np.array([0.5 * np.ptp(s), 0.5 * np.ptp(w)])
    axes = np.stack([e, perp])
    if half[1] > half[0]:
        half = half[::-1]
        axes = np.stack([perp, -e])
    return OrientedRect(center, axes, half)
