"""One-call encode/decode of whole point clouds in either mode."""
from dataclasses import dataclass

import numpy as np

from .container import MODE_LOW, MODE_NAMES, Bitstream
from .errors import ConfigurationError
from .geometry import estimate_angular_resolution
from .highrate import QpVector, decode_trees_high, encode_trees_high
from .lowrate import RdConfig, decode_trees_low, encode_trees_low
from .predictor import LstmPredictor
from .predtree import DEFAULT_THRESHOLD, build_trees_calibrated, build_trees_threshold


@dataclass
class Encoded:
    bitstream: Bitstream
    data: bytes
    trees: object
    reconstruction: object
    n_input: int

    @property
    def bpip(self):
        return 8 * len(self.data) / self.n_input if self.n_input else 0.0

    def breakdown(self):
        """Per-stream bits with percentages of the coordinate payload."""
        bits = self.bitstream.stream_bits()
        payload = bits["phi"] + bits["theta"] + bits["r"]
        out = {}
        for k in ("phi", "theta", "r"):
            out[k] = (bits[k], 100.0 * bits[k] / payload if payload else 0.0)
        out["overhead"] = (bits["overhead"], None)
        out["total"] = (bits["total"], None)
        return out


def build_trees(points, calib=None, threshold=DEFAULT_THRESHOLD, wraparound=False):
    if calib is not None:
        return build_trees_calibrated(points, calib)
    return build_trees_threshold(points, threshold, wraparound)


def resolve_phi_ar(trees, phi_ar=None):
    if phi_ar is not None:
        if not phi_ar > 0:
            raise ConfigurationError("--phi-ar must be positive")
        return float(phi_ar)
    return estimate_angular_resolution([t.phi for t in trees.trees])


def encode_points(points, qp, mode="high", rd=None, predictor=None, calib=None, phi_ar=None,
                  threshold=DEFAULT_THRESHOLD, skip_bias=True, threads=1, trees=None):
    """Build trees, pick phi_ar, run the chosen mode and serialize."""
    points = np.asarray(points, dtype=np.float64)
    if trees is None:
        trees = build_trees(points, calib, threshold)
    if trees.n_points == 0:
        phi_ar = phi_ar or 1.0
    else:
        phi_ar = resolve_phi_ar(trees, phi_ar)
    if mode == "low":
        if predictor is not None:
            raise ConfigurationError("the low-bitrate mode uses the delta predictor only")
        low_qp = QpVector(qp.q_delta, qp.q_phi, qp.q_theta, None)
        bs, rec = encode_trees_low(trees, low_qp, phi_ar, rd or RdConfig(), skip_bias, threads)
    elif mode == "high":
        bs, rec = encode_trees_high(trees, qp, predictor, phi_ar, skip_bias, threads)
    else:
        raise ConfigurationError(f"unknown mode {mode!r}; expected high or low")
    return Encoded(bs, bs.to_bytes(), trees, rec, points.shape[0])


def decode_bytes(data, weights=None, threads=1):
    """Decode a container; returns (points in tree order, bitstream)."""
    bs = Bitstream.from_bytes(data)
    if bs.mode == MODE_LOW:
        rec = decode_trees_low(bs, threads)
    else:
        predictor = LstmPredictor(weights) if weights is not None else None
        rec = decode_trees_high(bs, predictor, threads)
    return rec.cartesian(bs.calib), bs


def mode_name(bs):
    return MODE_NAMES[bs.mode]
