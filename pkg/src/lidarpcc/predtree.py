"""Per-laser predictive trees.

In angular mode a predictive tree degenerates to a chain: one laser's points
ordered by azimuth (calibrated build) or by acquisition (threshold build).
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .geometry import (
    LaserCalibration,
    Spherical,
    cartesian_to_spherical,
    laser_ids_for,
    spherical_to_cartesian,
)

DEFAULT_THRESHOLD = 180.0


@dataclass
class PredictiveTree:
    laser_id: int
    r: np.ndarray
    phi: np.ndarray
    theta: np.ndarray
    origin_order: np.ndarray

    def __len__(self):
        return self.r.shape[0]

    @property
    def spherical(self):
        return Spherical(self.r, self.phi, self.theta, np.full(len(self), self.laser_id))


@dataclass
class TreeSet:
    trees: list
    method: str
    n_points: int
    threshold: float = None
    calib: LaserCalibration = None
    wraparound: bool = False
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.trees)

    @property
    def n_lasers(self):
        """Laser count used to normalize laser ids."""
        if self.calib is not None:
            return self.calib.n_lasers
        if not self.trees:
            return 0
        return max(t.laser_id for t in self.trees) + 1


def _cloud(cloud):
    arr = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("point coordinates must be finite")
    return arr


def build_trees_calibrated(cloud, calib):
    """Group points by calibrated laser id, each group sorted by azimuth.

    The sort is stable, so equal azimuths keep their input order.
    """
    pts = _cloud(cloud)
    n = pts.shape[0]
    if n == 0:
        return TreeSet([], "calibrated", 0, calib=calib)
    sph = cartesian_to_spherical(pts, calib)
    lid = laser_ids_for(pts, calib)
    order = np.lexsort((sph.phi, lid))
    lid_sorted = lid[order]
    cuts = np.flatnonzero(np.diff(lid_sorted)) + 1
    trees = []
    for idx in np.split(order, cuts):
        trees.append(
            PredictiveTree(int(lid[idx[0]]), sph.r[idx], sph.phi[idx], sph.theta[idx], idx)
        )
    return TreeSet(trees, "calibrated", n, calib=calib)


def threshold_laser_ids(phi, t=DEFAULT_THRESHOLD, wraparound=False):
    """Laser ids from azimuth jumps of at least ``t`` degrees along the input order."""
    phi = np.asarray(phi, dtype=np.float64)
    if phi.size == 0:
        return np.zeros(0, dtype=np.int64)
    d = np.abs(np.diff(phi))
    if wraparound:
        d = np.minimum(d, 360.0 - d)
    return np.concatenate([[0], np.cumsum(d >= t)]).astype(np.int64)


def build_trees_threshold(cloud, t=DEFAULT_THRESHOLD, wraparound=False):
    """Split an acquisition-ordered scan into rings at azimuth jumps >= ``t``.

    The raw absolute azimuth difference is used unless ``wraparound`` asks
    for the min(d, 360 - d) variant.  Points keep acquisition order.
    """
    if not t > 0:
        raise InvalidInputError(f"threshold must be positive, got {t}")
    pts = _cloud(cloud)
    n = pts.shape[0]
    if n == 0:
        return TreeSet([], "threshold", 0, threshold=t, wraparound=wraparound)
    sph = cartesian_to_spherical(pts)
    lid = threshold_laser_ids(sph.phi, t, wraparound)
    cuts = np.flatnonzero(np.diff(lid)) + 1
    trees = []
    for idx in np.split(np.arange(n), cuts):
        trees.append(
            PredictiveTree(int(lid[idx[0]]), sph.r[idx], sph.phi[idx], sph.theta[idx], idx)
        )
    return TreeSet(trees, "threshold", n, threshold=t, wraparound=wraparound)


def tree_cartesian(tree, calib=None):
    return spherical_to_cartesian(tree.spherical, calib)


def flatten(trees):
    """Rebuild the Cartesian cloud in original input order."""
    out = np.zeros((trees.n_points, 3))
    for tree in trees.trees:
        out[tree.origin_order] = tree_cartesian(tree, trees.calib)
    return out
