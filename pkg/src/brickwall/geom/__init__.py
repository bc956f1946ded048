from .cloud import (
    GROUND_LABEL,
    UNLABELED,
    PointCloud,
    cluster_indices,
    crop_box,
    estimate_normals,
    euclidean_cluster,
    voxel_downsample,
)
from .fitting import (
    Line2,
    OrientedRect,
    Plane,
    fit_lines_ransac,
    fit_plane_ransac,
    min_oriented_rect,
    pca,
    pca_axis,
)
from .pose import Pose3, rot_z, rotvec_to_matrix, skew, wrap_angle

__all__ = [
    "GROUND_LABEL", "UNLABELED", "PointCloud", "cluster_indices", "crop_box",
    "estimate_normals", "euclidean_cluster", "voxel_downsample", "Line2",
    "OrientedRect", "Plane", "fit_lines_ransac", "fit_plane_ransac",
    "min_oriented_rect", "pca", "pca_axis", "Pose3", "rot_z",
    "rotvec_to_matrix", "skew", "wrap_angle",
]
