"""Synthetic spinning-LiDAR scans for tests, benchmarks and DE calibration sets.

Rays are cast from each laser origin against a ground plane, a closed ring of
building walls, parked boxes and poles.  Elevation readings can carry a
radius-correlated bias per laser, mimicking what real scanners show.
"""
from dataclasses import dataclass

import numpy as np

from .geometry import LaserCalibration


@dataclass
class SyntheticScan:
    points: np.ndarray
    laser: np.ndarray
    calib: LaserCalibration
    phi_ar: float

    def __len__(self):
        return self.points.shape[0]


def _walls(rng, n_segments):
    """Closed wall ring as (azimuth edges, distances, heights)."""
    edges = np.sort(rng.uniform(-180, 180, n_segments - 1))
    edges = np.concatenate([[-180.0], edges, [180.0]])
    dist = rng.uniform(18.0, 70.0, n_segments)
    height = rng.uniform(6.0, 25.0, n_segments)
    return edges, dist, height


def _ray_boxes(cx, cy, ux, uy, boxes):
    """Horizontal distance to the first box face along unit direction (ux, uy)."""
    best = np.full(ux.shape, np.inf)
    for x0, x1, y0, y1, top in boxes:
        with np.errstate(divide="ignore", invalid="ignore"):
            tx0 = (x0 - cx) / ux
            tx1 = (x1 - cx) / ux
            ty0 = (y0 - cy) / uy
            ty1 = (y1 - cy) / uy
        tmin = np.maximum(np.minimum(tx0, tx1), np.minimum(ty0, ty1))
        tmax = np.minimum(np.maximum(tx0, tx1), np.maximum(ty0, ty1))
        hit = (tmax >= tmin) & (tmin > 0.5)
        best = np.where(hit & (tmin < best), tmin, best)
    return best


def _ray_poles(ux, uy, poles):
    best = np.full(ux.shape, np.inf)
    for px, py, rad, top in poles:
        b = ux * px + uy * py
        disc = b * b - (px * px + py * py - rad * rad)
        s = b - np.sqrt(np.maximum(disc, 0.0))
        hit = (disc >= 0) & (s > 0.5)
        best = np.where(hit & (s < best), s, best)
    return best


def synthetic_scan(
    n_lasers=64,
    phi_ar=0.18,
    elevation_range=(-24.8, 2.0),
    seed=0,
    sensor_height=1.73,
    laser_heights=None,
    dropout=0.02,
    range_noise=0.01,
    theta_noise=0.02,
    radius_corr=0.0,
    azimuth_noise=0.0,
    n_boxes=12,
    n_poles=20,
    max_range=100.0,
    azimuth_span=360.0,
):
    """Return a scan ordered laser by laser, each ring in acquisition order.

    ``radius_corr`` sets the elevation bias slope in degrees per metre for
    the highest laser; lower lasers get proportionally weaker slopes, so the
    bias depends on both radius and laser.
    """
    rng = np.random.default_rng(seed)
    elev = np.linspace(elevation_range[0], elevation_range[1], n_lasers)
    heights = np.zeros(n_lasers) if laser_heights is None else np.broadcast_to(laser_heights, n_lasers).astype(float)
    calib = LaserCalibration(elev, heights)
    edges, wall_d, wall_h = _walls(rng, int(rng.integers(6, 14)))
    boxes = []
    for _ in range(n_boxes):
        d = rng.uniform(5.0, 35.0)
        a = np.radians(rng.uniform(-180, 180))
        cx, cy = d * np.cos(a), d * np.sin(a)
        w, l = rng.uniform(1.6, 2.2), rng.uniform(3.8, 5.5)
        if rng.random() < 0.5:
            w, l = l, w
        boxes.append((cx - l / 2, cx + l / 2, cy - w / 2, cy + w / 2, rng.uniform(1.3, 3.0)))
    poles = []
    for _ in range(n_poles):
        d = rng.uniform(4.0, 40.0)
        a = np.radians(rng.uniform(-180, 180))
        poles.append((d * np.cos(a), d * np.sin(a), rng.uniform(0.1, 0.6), rng.uniform(3.0, 9.0)))

    n_steps = int(round(azimuth_span / phi_ar))
    start = -azimuth_span / 2
    grid = start + phi_ar * (np.arange(n_steps) + 0.5)
    slopes = radius_corr * (elev - elev.min() + 1.0) / (elev.max() - elev.min() + 1.0)

    pts, lids = [], []
    for j in range(n_lasers):
        phi = grid + rng.uniform(-0.5, 0.5) * phi_ar * 0.2
        phi = phi + rng.normal(0.0, azimuth_noise, phi.shape) if azimuth_noise else phi
        rad = np.radians(phi)
        ux, uy = np.cos(rad), np.sin(rad)
        tan_t = np.tan(np.radians(elev[j]))
        z0 = -heights[j]
        # horizontal distance along the ray at which each surface is met
        cand = np.full(phi.shape, np.inf)
        if tan_t < 0:
            cand = np.minimum(cand, (sensor_height + z0) / -tan_t)
        seg = np.clip(np.searchsorted(edges, phi, side="right") - 1, 0, len(wall_d) - 1)
        s_wall = wall_d[seg]
        z_wall = z0 + s_wall * tan_t
        ok = (z_wall > -sensor_height) & (z_wall < wall_h[seg] - sensor_height)
        cand = np.where(ok & (s_wall < cand), s_wall, cand)
        for obj, dist in ((boxes, _ray_boxes(0.0, 0.0, ux, uy, boxes)), (poles, _ray_poles(ux, uy, poles))):
            if not obj:
                continue
            with np.errstate(invalid="ignore"):
                z_hit = z0 + dist * tan_t
            top = max(o[-1] for o in obj) - sensor_height
            ok = np.isfinite(dist) & (z_hit > -sensor_height) & (z_hit < top)
            cand = np.where(ok & (dist < cand), dist, cand)
        keep = np.isfinite(cand) & (cand < max_range) & (rng.random(phi.shape) >= dropout)
        s = cand[keep] + rng.normal(0.0, range_noise, keep.sum())
        s = np.maximum(s, 0.5)
        theta = elev[j] + slopes[j] * (s - 20.0) + rng.normal(0.0, theta_noise, s.shape)
        x = s * ux[keep]
        y = s * uy[keep]
        z = s * np.tan(np.radians(theta)) - heights[j]
        pts.append(np.stack([x, y, z], axis=1))
        lids.append(np.full(s.shape, j))
    return SyntheticScan(np.concatenate(pts), np.concatenate(lids).astype(np.int64), calib, phi_ar)


def sweep_cloud(azimuths, radius=10.0, theta=0.0):
    """A single-ring cloud at the given azimuths (degrees)."""
    a = np.radians(np.asarray(azimuths, dtype=np.float64))
    z = radius * np.tan(np.radians(theta))
    return np.stack([radius * np.cos(a), radius * np.sin(a), np.full(a.shape, z)], axis=1)
