"""Coordinate transforms, laser calibration and distortion metrics.

Conventions: angles are in degrees everywhere, ``r`` is the *horizontal*
radius sqrt(x^2 + y^2) and elevation is measured from the horizontal plane,
so ``z = r * tan(theta) - height``.  Point clouds are ``(N, 3)`` float64
arrays.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegeneratePointError, EstimationError, FormatError, InvalidInputError

THETA_CLAMP = 89.999999
PSNR_INF = float("inf")
DEFAULT_NORMAL_K = 9


class Spherical(NamedTuple):
    """Spherical coordinates; fields are scalars or equal-length arrays."""

    r: np.ndarray
    phi: np.ndarray
    theta: np.ndarray
    laser_id: np.ndarray


@dataclass(frozen=True)
class LaserCalibration:
    elevation_deg: np.ndarray
    height_m: np.ndarray

    def __post_init__(self):
        elev = np.asarray(self.elevation_deg, dtype=np.float64).ravel()
        height = np.asarray(self.height_m, dtype=np.float64).ravel()
        if elev.size == 0 or elev.shape != height.shape:
            raise InvalidInputError("calibration needs matching, non-empty elevation/height arrays")
        if not (np.all(np.isfinite(elev)) and np.all(np.isfinite(height))):
            raise InvalidInputError("calibration values must be finite")
        if np.any(np.abs(elev) >= 90):
            raise InvalidInputError("laser elevations must lie in (-90, 90)")
        if elev.size > 1:
            d = np.diff(elev)
            if not (np.all(d > 0) or np.all(d < 0)):
                raise InvalidInputError("laser elevations must be strictly monotone in laser id")
        object.__setattr__(self, "elevation_deg", elev)
        object.__setattr__(self, "height_m", height)

    @property
    def n_lasers(self):
        return self.elevation_deg.size

    @classmethod
    def from_file(cls, path):
        """Parse ``<laser_id> <elevation_deg> <height_m>`` lines; ``#`` starts a comment."""
        rows = {}
        for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
            try:
                lid, elev, height = int(parts[0]), float(parts[1]), float(parts[2])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            if lid in rows:
                raise FormatError(f"{path}:{lineno}: duplicate laser id {lid}")
            rows[lid] = (elev, height)
        if sorted(rows) != list(range(len(rows))) or not rows:
            raise FormatError(f"{path}: laser ids must be dense 0..N-1")
        table = np.array([rows[i] for i in range(len(rows))])
        try:
            return cls(table[:, 0], table[:, 1])
        except InvalidInputError as exc:
            raise FormatError(f"{path}: {exc}") from None

    def to_file(self, path):
        lines = ["# laser_id elevation_deg height_m"]
        lines += [f"{i} {float(e)!r} {float(h)!r}" for i, (e, h) in enumerate(zip(self.elevation_deg, self.height_m))]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _as_points(p):
    arr = np.asarray(p, dtype=np.float64)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[-1] != 3:
        raise InvalidInputError(f"points must have 3 coordinates, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("point coordinates must be finite")
    return arr, single


def _laser_residuals(x, y, z, calib):
    r = np.hypot(x, y)
    tan_e = np.tan(np.radians(calib.elevation_deg))
    return np.abs(z[:, None] + calib.height_m[None, :] - r[:, None] * tan_e[None, :])


def laser_ids_for(points, calib):
    """Vectorized laser assignment without the r > 0 precondition.

    Degenerate points (r = 0) fall back to the laser whose height best
    matches z; ties go to the smaller id.
    """
    arr, _ = _as_points(points)
    if arr.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    res = _laser_residuals(arr[:, 0], arr[:, 1], arr[:, 2], calib)
    return np.argmin(res, axis=1).astype(np.int64)


def assign_laser_id(p, calib):
    """Index of the laser whose beam passes closest to ``p`` in z."""
    arr, single = _as_points(p)
    if np.any(np.hypot(arr[:, 0], arr[:, 1]) == 0):
        raise DegeneratePointError("laser assignment needs r > 0")
    ids = laser_ids_for(arr, calib)
    return int(ids[0]) if single else ids


def cartesian_to_spherical(p, calib=None):
    """Convert points to (r, phi, theta, laser_id).

    Without a calibration the elevation is arctan(z / r) and every laser id is
    0; with one, the laser is assigned first and its height is added to z.
    """
    arr, single = _as_points(p)
    x, y, z = arr[:, 0], arr[:, 1], arr[:, 2]
    r = np.hypot(x, y)
    phi = np.degrees(np.arctan2(y, x))
    phi = np.where(phi == -180.0, 180.0, phi)
    if calib is None:
        lid = np.zeros(r.shape, dtype=np.int64)
        zz = z
    else:
        lid = laser_ids_for(arr, calib)
        zz = z + calib.height_m[lid]
    theta = np.degrees(np.arctan2(zz, r))
    theta = np.clip(theta, -THETA_CLAMP, THETA_CLAMP)
    degenerate = r == 0
    if np.any(degenerate):
        phi = np.where(degenerate, 0.0, phi)
    if single:
        return Spherical(r[0], phi[0], theta[0], int(lid[0]))
    return Spherical(r, phi, theta, lid)


def spherical_to_cartesian(s, calib=None):
    """Inverse of :func:`cartesian_to_spherical` for a :class:`Spherical`."""
    r = np.asarray(s.r, dtype=np.float64)
    phi = np.radians(np.asarray(s.phi, dtype=np.float64))
    theta = np.asarray(s.theta, dtype=np.float64)
    if np.any(np.abs(theta) >= 90):
        raise InvalidInputError("elevation must lie strictly inside (-90, 90)")
    z = r * np.tan(np.radians(theta))
    if calib is not None:
        z = z - calib.height_m[np.asarray(s.laser_id, dtype=np.int64)]
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


# --- closed-form per-axis distortion -------------------------------------


def axis_distortion_radius(delta_r, theta):
    """Cartesian displacement caused by a radius error ``delta_r`` at elevation ``theta``."""
    theta = np.asarray(theta, dtype=np.float64)
    if np.any(np.abs(theta) >= 90):
        raise InvalidInputError("elevation must lie strictly inside (-90, 90)")
    return np.asarray(delta_r) / np.cos(np.radians(theta))


def axis_distortion_elevation(r, theta, delta_theta):
    theta = np.asarray(theta, dtype=np.float64)
    dt = np.radians(delta_theta)
    tilted = np.radians(theta) + dt
    if np.any(np.abs(tilted) >= np.pi / 2):
        raise InvalidInputError("perturbed elevation must lie strictly inside (-90, 90)")
    return np.asarray(r) * 2.0 * np.abs(np.sin(dt / 2.0)) / np.cos(tilted)


def axis_distortion_azimuth(r, delta_phi):
    dp = np.radians(delta_phi)
    # chord length sqrt(2(1 - cos)) written without the cancellation
    return np.asarray(r) * 2.0 * np.abs(np.sin(dp / 2.0))


# --- reconstruction metrics -----------------------------------------------


def _check_cloud(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != 3:
        raise InvalidInputError(f"{name} must be an (N, 3) array")
    if a.shape[0] == 0:
        raise InvalidInputError(f"{name} is empty")
    return a


def default_peak(reference):
    """Bounding-box diagonal of the reference cloud (falls back to 1 m)."""
    ref = _check_cloud(reference, "reference")
    diag = float(np.linalg.norm(ref.max(axis=0) - ref.min(axis=0)))
    return diag if diag > 0 else 1.0


def _nn(src, dst):
    d, idx = cKDTree(dst).query(src, k=1)
    return d, idx


def _psnr(mse, peak):
    if mse == 0:
        return PSNR_INF
    return 10.0 * np.log10(peak * peak / mse)


def d1_psnr(reference, test, peak=None):
    """Symmetric point-to-point PSNR in dB."""
    ref = _check_cloud(reference, "reference")
    tst = _check_cloud(test, "test")
    peak = default_peak(ref) if peak is None else float(peak)
    if not peak > 0:
        raise InvalidInputError("peak must be positive")
    d_rt, _ = _nn(ref, tst)
    d_tr, _ = _nn(tst, ref)
    mse = max(np.mean(d_rt**2), np.mean(d_tr**2))
    return _psnr(mse, peak)


def estimate_normals(points, k=DEFAULT_NORMAL_K):
    """Unit normals from a least-squares plane through the k nearest neighbours.

    Rank-deficient neighbourhoods (collinear or coincident points) get +z.
    """
    pts = _check_cloud(points, "points")
    if pts.shape[0] < k:
        raise InvalidInputError(f"normal estimation needs at least k={k} points")
    _, idx = cKDTree(pts).query(pts, k=k)
    nb = pts[idx]
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    w, v = np.linalg.eigh(cov)
    normals = v[:, :, 0]
    scale = np.maximum(w[:, 2], 1e-300)
    deficient = w[:, 1] <= 1e-12 * scale
    deficient |= w[:, 2] <= 1e-24
    normals[deficient] = (0.0, 0.0, 1.0)
    return normals


def d2_psnr(reference, test, peak=None, normal_k=DEFAULT_NORMAL_K):
    """Symmetric point-to-plane PSNR in dB, normals taken from the reference."""
    ref = _check_cloud(reference, "reference")
    tst = _check_cloud(test, "test")
    peak = default_peak(ref) if peak is None else float(peak)
    if not peak > 0:
        raise InvalidInputError("peak must be positive")
    normals = estimate_normals(ref, normal_k)
    _, i_rt = _nn(ref, tst)
    e_rt = np.einsum("ij,ij->i", tst[i_rt] - ref, normals)
    _, i_tr = _nn(tst, ref)
    e_tr = np.einsum("ij,ij->i", tst - ref[i_tr], normals[i_tr])
    mse = max(np.mean(e_rt**2), np.mean(e_tr**2))
    return _psnr(mse, peak)


def chamfer_distance(a, b):
    """Mean squared NN distance a->b plus mean squared NN distance b->a."""
    a = _check_cloud(a, "a")
    b = _check_cloud(b, "b")
    d_ab, _ = _nn(a, b)
    d_ba, _ = _nn(b, a)
    return float(np.mean(d_ab**2) + np.mean(d_ba**2))


def pointwise_mse(reference, test):
    """Mean squared Euclidean error between corresponding points."""
    ref = np.asarray(reference, dtype=np.float64)
    tst = np.asarray(test, dtype=np.float64)
    if ref.shape != tst.shape:
        raise InvalidInputError(f"shape mismatch {ref.shape} vs {tst.shape}")
    if ref.shape[0] == 0:
        return 0.0
    return float(np.mean(np.sum((ref - tst) ** 2, axis=1)))


def estimate_angular_resolution(azimuth_groups):
    """Median azimuth step between consecutive points of the same laser.

    ``azimuth_groups`` is an iterable of per-laser azimuth sequences in chain
    order.  Zero steps and ring wraps (steps of 180 degrees or more) are
    ignored, so descending scan directions work too.
    """
    steps = []
    for phi in azimuth_groups:
        phi = np.asarray(phi, dtype=np.float64)
        if phi.size >= 2:
            d = np.abs(np.diff(phi))
            steps.append(d[(d > 0) & (d < 180)])
    steps = np.concatenate(steps) if steps else np.zeros(0)
    if steps.size == 0:
        raise EstimationError("need at least two distinct azimuths within one laser")
    return float(np.median(steps))
