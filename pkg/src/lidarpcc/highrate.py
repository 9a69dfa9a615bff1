"""High-bitrate coding mode.

Per tree: azimuths as integer multiples of a unit angle plus an optional
quantized bias, radii by closed-loop DPCM, elevations by closed-loop coding
against a pluggable predictor.  Roots are stored raw in the tree record.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import entropy
from .container import MODE_HIGH, MODE_HIGH_LSTM, Bitstream, TreeRecord
from .errors import ConfigurationError, CorruptionError, InvalidInputError, PredictorError
from .geometry import THETA_CLAMP, Spherical, spherical_to_cartesian
from .kernels.quant import dpcm_decode, dpcm_encode
from .predictor import DeltaPredictor, LstmPredictor, TrainingSet, history_windows, normalize
from .predtree import build_trees_threshold

QP_LIMITS = {"q_delta": 256, "q_phi": 16, "q_theta": 256, "q_r": 256}


@dataclass(frozen=True)
class QpVector:
    """Quantization parameters: bias, azimuth divisor, elevation and radius steps.

    ``q_r`` is ``None`` for the low-bitrate mode, whose radius coder has its
    own step.
    """

    q_delta: int = 1
    q_phi: int = 1
    q_theta: int = 1
    q_r: int = 1

    def __post_init__(self):
        for name, hi in QP_LIMITS.items():
            v = getattr(self, name)
            if v is None and name == "q_r":
                continue
            if int(v) != v or not 1 <= v <= hi:
                raise InvalidInputError(f"{name} must be an integer in [1, {hi}], got {v}")
            object.__setattr__(self, name, int(v))

    def as_tuple(self):
        return (self.q_delta, self.q_phi, self.q_theta, self.q_r)

    @classmethod
    def parse(cls, text):
        parts = [p.strip() for p in text.split(",")]
        if len(parts) not in (3, 4):
            raise InvalidInputError(f"expected qd,qphi,qtheta[,qr], got {text!r}")
        vals = [int(p) for p in parts[:3]]
        q_r = int(parts[3]) if len(parts) == 4 and parts[3] not in ("", "-") else None
        return cls(*vals, q_r)


def round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, np.floor(x + 0.5), -np.floor(-x + 0.5)).astype(np.int64)


# --- azimuth ---------------------------------------------------------------


@dataclass
class AzimuthCode:
    slopes: bytes
    biases: bytes
    phi_rec: np.ndarray
    slope_deltas: np.ndarray
    bias_q: np.ndarray


def _azimuth_rec(phi_unit, s, bias_q, q_delta):
    if q_delta == 0:
        return phi_unit * s
    return phi_unit * s + bias_q / np.float64(q_delta)


def encode_azimuth(phi, phi_ar, q_phi, q_delta=1, skip_bias=True):
    """Code azimuths as ``phi_unit * s_n + bias``, ``phi_unit = phi_ar / q_phi``.

    ``s_n`` is the nearest multiple, sent as chain differences; the root
    azimuth travels raw in the tree record.
    """
    if not phi_ar > 0:
        raise InvalidInputError("angular resolution must be positive")
    phi = np.asarray(phi, dtype=np.float64)
    n = phi.shape[0]
    if n == 0:
        return AzimuthCode(b"", b"", phi.copy(), np.zeros(0, np.int64), np.zeros(0, np.int64))
    phi_unit = phi_ar / np.float64(q_phi)
    s = round_half_away(phi / phi_unit)
    deltas = np.diff(s)
    if skip_bias:
        bias_q = np.zeros(n - 1, dtype=np.int64)
        biases = b""
    else:
        bias_q = round_half_away((phi[1:] - phi_unit * s[1:]) * q_delta)
        biases = entropy.encode_ints(bias_q)
    rec = np.empty(n)
    rec[0] = phi[0]
    rec[1:] = _azimuth_rec(phi_unit, s[1:], bias_q, q_delta)
    return AzimuthCode(entropy.encode_ints(deltas), biases, rec, deltas, bias_q)


def decode_azimuth(slopes, biases, phi_root, phi_ar, q_phi, q_delta, skip_bias, n_points):
    if n_points == 0:
        return np.zeros(0)
    phi_unit = phi_ar / np.float64(q_phi)
    deltas = entropy.decode_ints(slopes, n_points - 1)
    s = round_half_away(phi_root / phi_unit) + np.cumsum(deltas)
    if skip_bias:
        bias_q = np.zeros(n_points - 1, dtype=np.int64)
    else:
        bias_q = entropy.decode_ints(biases, n_points - 1)
    rec = np.empty(n_points)
    rec[0] = phi_root
    rec[1:] = _azimuth_rec(phi_unit, s, bias_q, q_delta)
    return rec


# --- radius ----------------------------------------------------------------


def encode_radius(r, q_r):
    """Closed-loop DPCM against the previous reconstructed radius."""
    ks, rec = dpcm_encode(np.ascontiguousarray(r, dtype=np.float64), int(q_r))
    return entropy.encode_ints(ks), rec


def decode_radius(data, r_root, q_r, n_points):
    if n_points == 0:
        return np.zeros(0)
    return dpcm_decode(float(r_root), entropy.decode_ints(data, n_points - 1), int(q_r))


# --- elevation -------------------------------------------------------------


def _pad(arrays, fill=0.0):
    n = max((a.shape[0] for a in arrays), default=0)
    out = np.full((len(arrays), n), fill)
    for i, a in enumerate(arrays):
        out[i, : a.shape[0]] = a
    return out


def elevation_closed_loop(predictor, r_rec, phi_rec, lasers, q_theta, n_lasers, thetas=None, ks=None, roots=None):
    """Encode (``thetas`` given) or decode (``ks`` and ``roots`` given) elevations.

    Returns ``(ks, reconstructions)`` as per-chain lists.
    """
    qf = np.float64(q_theta)
    n_chains = len(r_rec)
    encoding = thetas is not None
    if isinstance(predictor, DeltaPredictor):
        out_k, out_rec = [], []
        for c in range(n_chains):
            if encoding:
                k, rec = dpcm_encode(np.ascontiguousarray(thetas[c], dtype=np.float64), int(q_theta))
            else:
                k = ks[c]
                rec = dpcm_decode(float(roots[c]), k, int(q_theta))
            out_k.append(k)
            out_rec.append(rec)
        return out_k, out_rec

    window = predictor.window
    lengths = np.array([a.shape[0] for a in r_rec], dtype=np.int64)
    n_max = int(lengths.max(initial=0))
    R, PH = _pad(r_rec), _pad(phi_rec)
    L = np.asarray(lasers, dtype=np.float64)
    TH = np.zeros_like(R)
    K = np.zeros(R.shape, dtype=np.int64)
    if encoding:
        T = _pad(thetas)
        TH[:, 0] = T[:, 0]
    else:
        TH[:, 0] = roots
        for c in range(n_chains):
            K[c, 1 : lengths[c]] = ks[c]
    for n in range(1, n_max):
        active = np.flatnonzero(lengths > n)
        idx = np.maximum(np.arange(n - window, n), 0)
        win = np.stack(
            [R[active][:, idx], TH[active][:, idx], PH[active][:, idx],
             np.broadcast_to(L[active][:, None], (active.size, window))],
            axis=-1,
        )
        cur = np.stack([R[active, n], TH[active, n - 1], PH[active, n], L[active]], axis=-1)
        pred = predictor.predict(win, cur, n_lasers)
        if not np.all(np.isfinite(pred)):
            raise PredictorError("predictor produced a non-finite elevation")
        if encoding:
            K[active, n] = round_half_away((T[active, n] - pred) * qf)
        TH[active, n] = pred + K[active, n] / qf
    out_k = [K[c, 1 : lengths[c]].copy() for c in range(n_chains)]
    out_rec = [TH[c, : lengths[c]].copy() for c in range(n_chains)]
    return out_k, out_rec


def encode_elevation(tree, predictor, r_rec, phi_rec, q_theta, n_lasers=1):
    """Single-chain convenience wrapper; returns (stream, reconstruction)."""
    ks, rec = elevation_closed_loop(
        predictor, [np.asarray(r_rec)], [np.asarray(phi_rec)], [tree.laser_id], q_theta, n_lasers,
        thetas=[np.asarray(tree.theta)],
    )
    return entropy.encode_ints(ks[0]), rec[0]


def decode_elevation(data, theta_root, predictor, r_rec, phi_rec, laser_id, q_theta, n_lasers=1):
    n = len(r_rec)
    if n == 0:
        return np.zeros(0)
    ks = [entropy.decode_ints(data, n - 1)]
    _, rec = elevation_closed_loop(
        predictor, [np.asarray(r_rec)], [np.asarray(phi_rec)], [laser_id], q_theta, n_lasers,
        ks=ks, roots=[theta_root],
    )
    return rec[0]


# --- whole cloud -------------------------------------------------------------


@dataclass
class Reconstruction:
    """Per-tree reconstructed spherical coordinates (tree order)."""

    lasers: list
    r: list
    theta: list
    phi: list

    def cartesian(self, calib=None):
        if not self.r:
            return np.zeros((0, 3))
        parts = []
        for lid, r, th, ph in zip(self.lasers, self.r, self.theta, self.phi):
            th = np.clip(th, -THETA_CLAMP, THETA_CLAMP)
            parts.append(spherical_to_cartesian(Spherical(r, ph, th, np.full(r.shape, lid)), calib))
        return np.concatenate(parts)


def _map(fn, items, threads):
    if threads and threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _predictor_mode(predictor):
    if predictor is None or isinstance(predictor, DeltaPredictor):
        return MODE_HIGH, DeltaPredictor(), 0
    if isinstance(predictor, LstmPredictor):
        return MODE_HIGH_LSTM, predictor, predictor.weights.checksum()
    raise ConfigurationError(f"unsupported predictor {predictor!r}")


def code_azimuths(trees, qp, phi_ar, skip_bias, threads=1):
    return _map(lambda t: encode_azimuth(t.phi, phi_ar, qp.q_phi, qp.q_delta, skip_bias), trees.trees, threads)


def code_elevations(trees, qp, predictor, r_rec, phi_rec, threads=1):
    """Closed-loop elevation streams given decoder-side radii and azimuths."""
    ks, th_rec = elevation_closed_loop(
        predictor, r_rec, phi_rec, [t.laser_id for t in trees.trees], qp.q_theta, trees.n_lasers,
        thetas=[t.theta for t in trees.trees],
    )
    return _map(entropy.encode_ints, ks, threads), th_rec


def encode_trees_high(trees, qp, predictor=None, phi_ar=None, skip_bias=True, threads=1):
    """Encode a :class:`TreeSet`; returns (bitstream, encoder-side reconstruction)."""
    if qp.q_r is None:
        raise ConfigurationError("high-bitrate mode needs q_r")
    if phi_ar is None or not phi_ar > 0:
        raise ConfigurationError("high-bitrate mode needs a positive phi_ar")
    mode, predictor, checksum = _predictor_mode(predictor)
    rad = _map(lambda t: encode_radius(t.r, qp.q_r), trees.trees, threads)
    r_rec = [x[1] for x in rad]
    az = code_azimuths(trees, qp, phi_ar, skip_bias, threads)
    phi_rec = [a.phi_rec for a in az]
    elev, th_rec = code_elevations(trees, qp, predictor, r_rec, phi_rec, threads)
    records = []
    for t, (r_bytes, _), a, e in zip(trees.trees, rad, az, elev):
        records.append(
            TreeRecord(t.laser_id, len(t), float(t.r[0]), float(t.theta[0]), float(t.phi[0]),
                       a.slopes, a.biases, r_bytes, e)
        )
    bs = Bitstream(
        mode, 0 if skip_bias else qp.q_delta, qp.q_phi, qp.q_theta, qp.q_r, 0.0, float(phi_ar),
        trees.calib, checksum, records,
    )
    return bs, Reconstruction([t.laser_id for t in trees.trees], r_rec, th_rec, phi_rec)


def encode_cloud_high(cloud, trees=None, qp=None, predictor=None, phi_ar=None, skip_bias=True, threads=1):
    """Encode a cloud in high-bitrate mode (threshold trees unless ``trees`` is given)."""
    if trees is None:
        trees = build_trees_threshold(cloud)
    bs, _ = encode_trees_high(trees, qp or QpVector(), predictor, phi_ar, skip_bias, threads)
    return bs


def check_predictor(bs, predictor):
    if bs.mode == MODE_HIGH_LSTM:
        if not isinstance(predictor, LstmPredictor):
            raise ConfigurationError("bitstream was coded with LSTM-P; weights are required")
        if predictor.weights.checksum() != bs.weight_checksum:
            raise CorruptionError("weight file does not match the bitstream's weight checksum")
        return predictor
    return DeltaPredictor()


def n_lasers_of(bs):
    if bs.calib is not None:
        return bs.calib.n_lasers
    return max((t.laser_id for t in bs.trees), default=-1) + 1


def decode_azimuths(bs, threads=1):
    skip = bs.skip_bias
    return _map(
        lambda t: decode_azimuth(t.slopes, t.biases, t.root_phi, bs.phi_ar, bs.q_phi, bs.q_delta, skip, t.count),
        bs.trees, threads,
    )


def decode_elevations(bs, r_rec, phi_rec, predictor, threads=1):
    ks = _map(lambda t: entropy.decode_ints(t.elevations, max(t.count - 1, 0)), bs.trees, threads)
    _, th_rec = elevation_closed_loop(
        predictor, r_rec, phi_rec, [t.laser_id for t in bs.trees], bs.q_theta, n_lasers_of(bs),
        ks=ks, roots=[t.root_theta for t in bs.trees],
    )
    return th_rec


def decode_trees_high(bs, predictor=None, threads=1):
    if bs.mode not in (MODE_HIGH, MODE_HIGH_LSTM):
        raise ConfigurationError("not a high-bitrate bitstream")
    predictor = check_predictor(bs, predictor)
    r_rec = _map(lambda t: decode_radius(t.radii, t.root_r, bs.q_r, t.count), bs.trees, threads)
    phi_rec = decode_azimuths(bs, threads)
    th_rec = decode_elevations(bs, r_rec, phi_rec, predictor, threads)
    return Reconstruction([t.laser_id for t in bs.trees], r_rec, th_rec, phi_rec)


def decode_cloud_high(bs, predictor=None, threads=1):
    """Decoded Cartesian cloud in tree order."""
    return decode_trees_high(bs, predictor, threads).cartesian(bs.calib)


def training_set(trees, qp, phi_ar, window):
    """Closed-loop training examples for LSTM-P from one :class:`TreeSet`.

    Radii and azimuths are reconstructed at ``qp``; elevations come from the
    delta closed loop at ``qp.q_theta``, which stays within one quantization
    step of any closed loop the trained network will later run in.
    """
    r_rec = [encode_radius(t.r, qp.q_r)[1] for t in trees.trees]
    phi_rec = [encode_azimuth(t.phi, phi_ar, qp.q_phi, qp.q_delta).phi_rec for t in trees.trees]
    _, th_rec = elevation_closed_loop(
        DeltaPredictor(), r_rec, phi_rec, [t.laser_id for t in trees.trees], qp.q_theta, trees.n_lasers,
        thetas=[t.theta for t in trees.trees],
    )
    n_lasers = trees.n_lasers
    parts = []
    for t, r, th, ph in zip(trees.trees, r_rec, th_rec, phi_rec):
        if len(t) < 2:
            continue
        pos = np.arange(1, len(t))
        win = history_windows(r, th, ph, t.laser_id, pos, window)
        cur = np.stack([r[pos], th[pos - 1], ph[pos], np.full(pos.shape, float(t.laser_id))], axis=1)
        parts.append(
            TrainingSet(normalize(win, n_lasers), normalize(cur, n_lasers), th[pos - 1].copy(), t.theta[pos].copy())
        )
    return TrainingSet.concat(parts)
