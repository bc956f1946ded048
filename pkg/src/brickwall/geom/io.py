"""PLY (binary little-endian) and CSV serialization for point clouds."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .cloud import UNLABELED, PointCloud

_PLY_DTYPE = np.dtype(
    [
        ("x", "<f8"), ("y", "<f8"), ("z", "<f8"),
        ("nx", "<f8"), ("ny", "<f8"), ("nz", "<f8"),
        ("label", "<i4"),
    ]
)
_TYPE_NAMES = {"<f8": "double", "<f4": "float", "<i4": "int"}
_PLY_TYPES = {"double": "<f8", "float": "<f4", "int": "<i4", "int32": "<i4", "uchar": "u1", "float32": "<f4", "float64": "<f8"}


def write_ply(path, cloud: PointCloud) -> None:
    """Write x,y,z,nx,ny,nz,label.  Missing normals are stored as zeros."""
    n = len(cloud)
    data = np.zeros(n, dtype=_PLY_DTYPE)
    data["x"], data["y"], data["z"] = cloud.points.T
    if cloud.normals is not None:
        data["nx"], data["ny"], data["nz"] = cloud.normals.T
    data["label"] = UNLABELED if cloud.labels is None else cloud.labels
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    for name in _PLY_DTYPE.names:
        header.append(f"property {_TYPE_NAMES[_PLY_DTYPE[name].str]} {name}")
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(data.tobytes())


def read_ply(path) -> PointCloud:
    raw = Path(path).read_bytes()
    end = raw.index(b"end_header\n") + len(b"end_header\n")
    lines = raw[:end].decode("ascii").splitlines()
    if lines[0] != "ply" or "binary_little_endian" not in lines[1]:
        raise ValueError(f"{path}: only binary little-endian PLY is supported")
    n = 0
    fields = []
    for ln in lines:
        parts = ln.split()
        if parts[:2] == ["element", "vertex"]:
            n = int(parts[2])
        elif parts and parts[0] == "property":
            fields.append((parts[2], _PLY_TYPES[parts[1]]))
    data = np.frombuffer(raw, dtype=np.dtype(fields), count=n, offset=end)
    names = set(data.dtype.names)
    pts = np.stack([data["x"], data["y"], data["z"]], axis=1).astype(float)
    normals = labels = None
    if {"nx", "ny", "nz"} <= names:
        nrm = np.stack([data["nx"], data["ny"], data["nz"]], axis=1).astype(float)
        if n and np.all(np.abs(np.linalg.norm(nrm, axis=1) - 1) < 1e-6):
            normals = nrm
    if "label" in names:
        lab = data["label"].astype(np.int64)
        if not np.all(lab == UNLABELED):
            labels = lab
    return PointCloud(pts, normals, labels)


def write_csv(path, cloud: PointCloud) -> None:
    cols = [cloud.points]
    header = ["x", "y", "z"]
    if cloud.normals is not None:
        cols.append(cloud.normals)
        header += ["nx", "ny", "nz"]
    if cloud.labels is not None:
        cols.append(cloud.labels[:, None])
        header.append("label")
    np.savetxt(path, np.hstack(cols) if len(cloud) else np.zeros((0, len(header))),
               delimiter=",", header=",".join(header), comments="", fmt="%.9g")


def read_csv(path) -> PointCloud:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2).reshape(-1, len(header))
    col = {h: i for i, h in enumerate(header)}
    pts = data[:, [col["x"], col["y"], col["z"]]]
    normals = data[:, [col["nx"], col["ny"], col["nz"]]] if "nx" in col else None
    labels = data[:, col["label"]].astype(np.int64) if "label" in col else None
    return PointCloud(pts, normals, labels)
