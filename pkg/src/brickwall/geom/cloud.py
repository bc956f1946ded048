"""Point cloud container and neighborhood operations."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

GROUND_LABEL = -1
UNLABELED = -2


@dataclass
class PointCloud:
    """Points with optional unit normals and integer labels.

    Labels are brick ids, ``GROUND_LABEL`` for ground hits, or ``UNLABELED``.
    """

    points: np.ndarray
    normals: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        n = len(self.points)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=float).reshape(-1, 3)
            if len(self.normals) != n:
                raise ValueError(f"{len(self.normals)} normals for {n} points")
            if n and np.max(np.abs(np.linalg.norm(self.normals, axis=1) - 1.0)) > 1e-6:
                raise ValueError("normals must be unit length")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if len(self.labels) != n:
                raise ValueError(f"{len(self.labels)} labels for {n} points")

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def empty(cls, with_normals=False, with_labels=False) -> "PointCloud":
        return cls(
            np.zeros((0, 3)),
            np.zeros((0, 3)) if with_normals else None,
            np.zeros(0, dtype=np.int64) if with_labels else None,
        )

    def select(self, index) -> "PointCloud":
        """Subset by boolean mask or integer index array."""
        return PointCloud(
            self.points[index],
            None if self.normals is None else self.normals[index],
            None if self.labels is None else self.labels[index],
        )

    def transformed(self, pose) -> "PointCloud":
        return PointCloud(
            pose.apply(self.points),
            None if self.normals is None else pose.rotate(self.normals),
            None if self.labels is None else self.labels.copy(),
        )

    @staticmethod
    def concatenate(clouds: List["PointCloud"]) -> "PointCloud":
        clouds = [c for c in clouds if len(c)] or clouds[:1]
        if not clouds:
            return PointCloud.empty()
        pts = np.vstack([c.points for c in clouds])
        normals = labels = None
        if all(c.normals is not None for c in clouds):
            normals = np.vstack([c.normals for c in clouds])
        if all(c.labels is not None for c in clouds):
            labels = np.concatenate([c.labels for c in clouds])
        return PointCloud(pts, normals, labels)


def voxel_downsample(cloud: PointCloud, d: float, origin=None) -> PointCloud:
    """Replace the points in each voxel of edge ``d`` by their centroid.

    Voxel indices are ``floor((p - origin) / d)`` with ``origin`` defaulting to
    the coordinate origin.  Normals are averaged and renormalized; labels are
    decided by majority vote (ties go to the smaller label).
    """
    if d <= 0:
        raise ValueError("voxel size must be positive")
    if len(cloud) == 0:
        return cloud.select(slice(0, 0))
    origin = np.zeros(3) if origin is None else np.asarray(origin, dtype=float)
    keys = np.floor((cloud.points - origin) / d).astype(np.int64)
    _, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inv = inv.reshape(-1)
    m = len(counts)
    centroids = np.zeros((m, 3))
    np.add.at(centroids, inv, cloud.points)
    centroids /= counts[:, None]

    normals = None
    if cloud.normals is not None:
        acc = np.zeros((m, 3))
        np.add.at(acc, inv, cloud.normals)
        norm = np.linalg.norm(acc, axis=1)
        # opposing normals in one voxel cancel; fall back to the first member
        first = np.full(m, -1)
        first[inv[::-1]] = np.arange(len(inv))[::-1]
        bad = norm < 1e-9
        acc[bad] = cloud.normals[first[bad]]
        norm[bad] = 1.0
        normals = acc / norm[:, None]

    labels = None
    if cloud.labels is not None:
        uniq, lab_idx = np.unique(cloud.labels, return_inverse=True)
        votes = sparse.coo_matrix(
            (np.ones(len(inv)), (inv, lab_idx.reshape(-1))), shape=(m, len(uniq))
        ).toarray()
        labels = uniq[np.argmax(votes, axis=1)]
    return PointCloud(centroids, normals, labels)


def estimate_normals(cloud: PointCloud, radius: float, viewpoint) -> PointCloud:
    """Local-PCA normals oriented toward ``viewpoint``.

    Points with fewer than three neighbors (self included) within ``radius``
    are dropped.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    n = len(cloud)
    if n == 0:
        return PointCloud(np.zeros((0, 3)), np.zeros((0, 3)), None if cloud.labels is None else cloud.labels[:0])
    pts = cloud.points
    tree = cKDTree(pts)
    pairs = tree.query_pairs(radius, output_type="ndarray")
    rows = np.concatenate([pairs[:, 0], pairs[:, 1], np.arange(n)])
    cols = np.concatenate([pairs[:, 1], pairs[:, 0], np.arange(n)])
    A = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    count = np.asarray(A.sum(axis=1)).reshape(-1)
    keep = count >= 3

    # Center on each query point before accumulating second moments to avoid
    # cancellation at large coordinates.
    mean = (A @ pts) / count[:, None]
    diff = pts[cols] - mean[rows]
    outer = diff[:, :, None] * diff[:, None, :]
    cov = np.zeros((n, 3, 3))
    np.add.at(cov, rows, outer)
    cov /= count[:, None, None]

    cov = cov[keep]
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    kept_pts = pts[keep]
    flip = np.einsum("ij,ij->i", normals, np.asarray(viewpoint, dtype=float) - kept_pts) < 0
    normals[flip] *= -1
    normals /= np.linalg.norm(normals, axis=1)[:, None]
    return PointCloud(kept_pts, normals, None if cloud.labels is None else cloud.labels[keep])


def cluster_indices(points: np.ndarray, tolerance: float, min_size: int = 1) -> List[np.ndarray]:
    """Connected components under the ``distance <= tolerance`` relation.

    Returned largest first; ties keep the order of their smallest member.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    if n == 0:
        return []
    pairs = cKDTree(pts).query_pairs(tolerance, output_type="ndarray")
    graph = sparse.coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    ncomp, comp = connected_components(graph, directed=False)
    groups = [np.flatnonzero(comp == c) for c in range(ncomp)]
    groups = [g for g in groups if len(g) >= min_size]
    groups.sort(key=lambda g: (-len(g), g[0]))
    return groups


def euclidean_cluster(cloud: PointCloud, tolerance: float, min_size: int = 1) -> List[PointCloud]:
    return [cloud.select(g) for g in cluster_indices(cloud.points, tolerance, min_size)]


def crop_box(cloud: PointCloud, center_pose, half_extent) -> PointCloud:
    """Keep points inside an axis-aligned box expressed in ``center_pose``'s frame."""
    local = center_pose.inverse().apply(cloud.points)
    he = np.broadcast_to(np.asarray(half_extent, dtype=float), (3,))
    mask = np.all(np.abs(local) <= he, axis=1)
    return cloud.select(mask)
