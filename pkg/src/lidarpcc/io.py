"""Point-cloud file I/O: KITTI velodyne ``.bin`` and PLY (ASCII / binary LE)."""
import os
import tempfile
from pathlib import Path

import numpy as np
import plyfile

from .errors import FormatError

KITTI_RECORD = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("reflectance", "<f4")])


def atomic_write(path, data):
    """Write bytes via a temporary file in the same directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_kitti_bin(path):
    """(N, 3) float64 points; reflectance dropped, order preserved."""
    raw = Path(path).read_bytes()
    if len(raw) % KITTI_RECORD.itemsize:
        raise FormatError(f"{path}: size {len(raw)} is not a multiple of {KITTI_RECORD.itemsize} bytes")
    rec = np.frombuffer(raw, dtype=KITTI_RECORD)
    return np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)


def write_kitti_bin(points, path, reflectance=None):
    pts = np.asarray(points)
    rec = np.zeros(pts.shape[0], dtype=KITTI_RECORD)
    rec["x"], rec["y"], rec["z"] = pts[:, 0], pts[:, 1], pts[:, 2]
    if reflectance is not None:
        rec["reflectance"] = reflectance
    atomic_write(path, rec.tobytes())


def read_ply(path):
    """(N, 3) float64 points from the ``vertex`` element; other properties ignored."""
    try:
        ply = plyfile.PlyData.read(str(path))
    except (plyfile.PlyParseError, plyfile.PlyHeaderParseError, ValueError, EOFError) as exc:
        raise FormatError(f"{path}: {exc}") from None
    if "vertex" not in ply:
        raise FormatError(f"{path}: no vertex element")
    data = ply["vertex"].data
    missing = [a for a in "xyz" if a not in (data.dtype.names or ())]
    if missing:
        raise FormatError(f"{path}: vertex element lacks {', '.join(missing)}")
    return np.stack([data["x"], data["y"], data["z"]], axis=1).astype(np.float64)


def write_ply(points, path, binary=True, dtype="<f8"):
    """Write x/y/z as ``double`` (default) or another float type."""
    pts = np.asarray(points)
    rec = np.zeros(pts.shape[0], dtype=[("x", dtype), ("y", dtype), ("z", dtype)])
    rec["x"], rec["y"], rec["z"] = pts[:, 0], pts[:, 1], pts[:, 2]
    el = plyfile.PlyElement.describe(rec, "vertex")
    doc = plyfile.PlyData([el], text=not binary, byte_order="<")
    fd, tmp = tempfile.mkstemp(dir=Path(path).parent or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            doc.write(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_cloud(path, scale=1.0):
    """Dispatch on extension (``.bin`` KITTI, ``.ply``); ``scale`` converts to metres."""
    suffix = Path(path).suffix.lower()
    if suffix == ".bin":
        pts = read_kitti_bin(path)
    elif suffix == ".ply":
        pts = read_ply(path)
    else:
        raise FormatError(f"{path}: unsupported point-cloud extension {suffix!r}")
    return pts * scale if scale != 1.0 else pts


def write_cloud(points, path):
    suffix = Path(path).suffix.lower()
    if suffix == ".bin":
        write_kitti_bin(points, path)
    elif suffix == ".ply":
        write_ply(points, path)
    else:
        raise FormatError(f"{path}: unsupported point-cloud extension {suffix!r}")
