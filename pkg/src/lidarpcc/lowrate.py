"""Low-bitrate coding mode.

Azimuths and elevations are coded as in the high-rate path (elevation with
the delta predictor).  Radii are laid out laser by laser into 256x256
matrices and coded by a context-adaptive Laplace residual coder.
"""
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import entropy
from .container import MODE_LOW, Bitstream, MatrixSection, TreeRecord
from .errors import ConfigurationError, CorruptionError, InvalidInputError, TruncationError
from .highrate import (
    QpVector,
    Reconstruction,
    code_azimuths,
    code_elevations,
    decode_azimuths,
    decode_elevations,
    round_half_away,
)
from .kernels import laplace_coder as lc
from .predictor import DeltaPredictor
from .predtree import build_trees_threshold

SIDE = 256
CELLS = SIDE * SIDE
LAMBDAS = (0.6, 2.2)
_PAYLOAD_HEAD = struct.Struct("<qd")
# bits charged for the per-matrix side information (first cell + scale)
SIDE_BITS = 8 * _PAYLOAD_HEAD.size
_Q_LIMIT = 2**31


@dataclass
class RadiusMatrix:
    """One 256x256 block of radii; ``provenance[k]`` is (tree, position) of cell k.

    ``offset`` (per filled cell) anchors the quantization grid; low mode uses
    each tree's root radius so slowly varying rings keep near-exact radii.
    """

    values: np.ndarray
    fill: int
    provenance: np.ndarray
    offset: np.ndarray = None

    def grid_offset(self):
        return np.zeros(self.fill) if self.offset is None else self.offset

    @property
    def filled(self):
        return self.values.ravel()[: self.fill]


def step_for_lambda(lam):
    """Step minimizing R + lam*D under the high-resolution approximation.

    With R ~ h - log2(step) bits and D = step^2 / 12 m^2 per point, the
    stationary point is step = sqrt(6 / (lam ln 2)).
    """
    if not lam > 0:
        raise InvalidInputError("lambda must be positive")
    return math.sqrt(6.0 / (lam * math.log(2.0)))


@dataclass(frozen=True)
class RdConfig:
    lam: float = 0.6
    step: float = None

    def __post_init__(self):
        if not self.lam > 0:
            raise InvalidInputError("lambda must be positive")
        if self.step is None:
            object.__setattr__(self, "step", step_for_lambda(self.lam))
        if not self.step > 0 or not math.isfinite(self.step):
            raise InvalidInputError("radius step must be positive and finite")


def _radius_lists(trees):
    return [np.asarray(t.r, dtype=np.float64) for t in getattr(trees, "trees", trees)]


def arrange_radius_matrices(trees, offsets=None):
    """Concatenate radii tree by tree and cut into zero-padded 256x256 blocks.

    ``offsets`` optionally gives one grid anchor per tree.
    """
    radii = _radius_lists(trees)
    flat = np.concatenate(radii) if radii else np.zeros(0)
    tree_idx = np.concatenate([np.full(r.shape[0], i) for i, r in enumerate(radii)]) if radii else np.zeros(0)
    pos = np.concatenate([np.arange(r.shape[0]) for r in radii]) if radii else np.zeros(0)
    prov = np.stack([tree_idx, pos], axis=1).astype(np.int64)
    anchor = None
    if offsets is not None:
        anchor = np.repeat(np.asarray(offsets, dtype=np.float64), [r.shape[0] for r in radii])
    out = []
    for start in range(0, flat.shape[0], CELLS):
        chunk = flat[start : start + CELLS]
        block = np.zeros(CELLS)
        block[: chunk.shape[0]] = chunk
        off = None if anchor is None else anchor[start : start + CELLS]
        out.append(RadiusMatrix(block.reshape(SIDE, SIDE), chunk.shape[0], prov[start : start + CELLS], off))
    return out


def matrix_offsets(lengths, roots):
    """Per-matrix grid anchors from tree lengths and root radii."""
    anchor = np.repeat(np.asarray(roots, dtype=np.float64), lengths)
    return [anchor[s : s + CELLS] for s in range(0, anchor.shape[0], CELLS)]


def restore_radii(matrices, lengths):
    """Inverse arrangement: per-tree radius sequences of the given lengths."""
    flat = np.concatenate([m.values.ravel()[: m.fill] for m in matrices]) if matrices else np.zeros(0)
    if flat.shape[0] != sum(lengths):
        raise CorruptionError(f"matrices hold {flat.shape[0]} radii, trees need {sum(lengths)}")
    return np.split(flat, np.cumsum(lengths)[:-1]) if lengths else []


def quantize_matrix(m, step):
    q = round_half_away((m.filled - m.grid_offset()) / step)
    if q.size and np.abs(q).max() >= _Q_LIMIT:
        raise InvalidInputError("radius step too small for the radius range")
    return q


def residual_scale(e):
    """Laplace scale of the residual body, in quantization cells."""
    return entropy.fit_laplace(e[1:]).b if e.shape[0] > 1 else 1.0


def aligned_reference(phi_rec):
    """Flat index of the previous tree's return nearest in azimuth, per point.

    Computed from decoded azimuths only, so encoder and decoder agree; -1 for
    the first tree.  Ties go to the lower index.
    """
    lengths = [p.shape[0] for p in phi_rec]
    starts = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    out = []
    for i, phi in enumerate(phi_rec):
        prev = phi_rec[i - 1] if i else None
        if prev is None or prev.shape[0] == 0:
            out.append(np.full(phi.shape[0], -1, dtype=np.int64))
            continue
        order = np.argsort(prev, kind="stable")
        sp = prev[order]
        k = np.clip(np.searchsorted(sp, phi), 1, max(sp.shape[0] - 1, 1))
        if sp.shape[0] == 1:
            k = np.zeros(phi.shape[0], dtype=np.int64)
        else:
            k = np.where(np.abs(phi - sp[k - 1]) <= np.abs(sp[k] - phi), k - 1, k)
        out.append(starts[i - 1] + order[k])
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def _local_ref(refs, index, fill):
    if refs is None:
        return np.full(fill, -1, dtype=np.int64)
    base = index * CELLS
    return np.ascontiguousarray(refs[base : base + fill] - base, dtype=np.int64)


def encode_matrix(m, step, ref=None):
    """One matrix -> (payload, reconstruction).

    ``ref`` holds per-cell context reference indices local to the matrix.
    """
    q = quantize_matrix(m, step)
    if m.fill == 0:
        return _PAYLOAD_HEAD.pack(0, 1.0), np.zeros((SIDE, SIDE))
    e = lc.residuals(q, m.fill)
    b = residual_scale(e)
    if ref is None:
        ref = np.full(m.fill, -1, dtype=np.int64)
    body = bytes(lc.encode_residuals(e, b, ref))
    rec = np.zeros(CELLS)
    rec[: m.fill] = m.grid_offset() + q * np.float64(step)
    return _PAYLOAD_HEAD.pack(int(e[0]), b) + body, rec.reshape(SIDE, SIDE)


def decode_matrix(payload, fill, step, ref=None, offset=None):
    if len(payload) < _PAYLOAD_HEAD.size:
        raise TruncationError("radius matrix payload shorter than its header")
    first, b = _PAYLOAD_HEAD.unpack_from(payload)
    if not b > 0 or not math.isfinite(b):
        raise CorruptionError(f"bad Laplace scale {b} in radius matrix")
    if not 0 <= fill <= CELLS:
        raise CorruptionError(f"bad matrix fill count {fill}")
    body = np.frombuffer(payload[_PAYLOAD_HEAD.size :], dtype=np.uint8)
    if ref is None:
        ref = np.full(fill, -1, dtype=np.int64)
    q, status = lc.decode_cells(body, first, fill, b, ref)
    if status == 1:
        raise TruncationError("radius matrix payload ended early")
    if status == 2:
        raise CorruptionError("invalid prefix in radius matrix payload")
    rec = np.zeros(CELLS)
    rec[:fill] = (0.0 if offset is None else offset) + q * np.float64(step)
    return rec.reshape(SIDE, SIDE)


def _pmap(fn, items, threads):
    if threads and threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def encode_radius_lowrate(matrices, cfg, refs=None, threads=1):
    """Returns (MatrixSection, reconstructed matrices).

    ``refs`` optionally gives a flat context reference per radius (see
    :func:`aligned_reference`); the decoder must be given the same array.
    """
    jobs = list(enumerate(matrices))
    res = _pmap(lambda im: encode_matrix(im[1], cfg.step, _local_ref(refs, im[0], im[1].fill)), jobs, threads)
    section = MatrixSection(cfg.step, [m.fill for m in matrices], [p for p, _ in res])
    rec = [RadiusMatrix(r, m.fill, m.provenance, m.offset) for (_, r), m in zip(res, matrices)]
    return section, rec


def decode_radius_lowrate(section, refs=None, offsets=None, threads=1):
    jobs = list(enumerate(zip(section.payloads, section.fill_counts)))

    def one(job):
        i, (payload, fill) = job
        off = None if offsets is None else offsets[i]
        if off is not None and off.shape[0] != fill:
            raise CorruptionError("matrix fill counts disagree with tree lengths")
        values = decode_matrix(payload, fill, section.step, _local_ref(refs, i, fill), off)
        return RadiusMatrix(values, fill, None, off)

    return _pmap(one, jobs, threads)


def rate_estimate(residuals, params, n_points=None, step=1.0, side_bits=SIDE_BITS):
    """Ideal Laplace code length of ``residuals`` plus side info, in bits per point."""
    r = np.asarray(residuals, dtype=np.float64).ravel()
    n = r.size if n_points is None else n_points
    if n <= 0:
        raise InvalidInputError("rate needs a positive point count")
    body = float(np.sum(entropy.laplace_bits(r, params, step))) if r.size else 0.0
    return (body + side_bits) / n


def matrix_distortion(a, a_bar, fill=None):
    """Mean squared error over the first ``fill`` row-major cells (all if None)."""
    a = np.asarray(a, dtype=np.float64).ravel()
    a_bar = np.asarray(a_bar, dtype=np.float64).ravel()
    if a.shape != a_bar.shape:
        raise InvalidInputError("matrix shapes differ")
    n = a.size if fill is None else fill
    if n == 0:
        return 0.0
    d = a[:n] - a_bar[:n]
    return float(np.dot(d, d) / n)


def rd_loss(rate, distortion, lam):
    return rate + lam * distortion


def encode_trees_low(trees, qp, phi_ar, cfg=None, skip_bias=True, threads=1):
    """Encode a :class:`TreeSet`; returns (bitstream, encoder-side reconstruction)."""
    cfg = cfg or RdConfig()
    if phi_ar is None or not phi_ar > 0:
        raise ConfigurationError("low-bitrate mode needs a positive phi_ar")
    az = code_azimuths(trees, qp, phi_ar, skip_bias, threads)
    phi_rec = [a.phi_rec for a in az]
    matrices = arrange_radius_matrices(trees, [float(t.r[0]) for t in trees.trees])
    section, rec_m = encode_radius_lowrate(matrices, cfg, aligned_reference(phi_rec), threads)
    r_rec = restore_radii(rec_m, [len(t) for t in trees.trees])
    elev, th_rec = code_elevations(trees, qp, DeltaPredictor(), r_rec, phi_rec, threads)
    records = [
        TreeRecord(t.laser_id, len(t), float(t.r[0]), float(t.theta[0]), float(t.phi[0]), a.slopes, a.biases, b"", e)
        for t, a, e in zip(trees.trees, az, elev)
    ]
    bs = Bitstream(
        MODE_LOW, 0 if skip_bias else qp.q_delta, qp.q_phi, qp.q_theta, 0, float(cfg.step), float(phi_ar),
        trees.calib, 0, records, section,
    )
    return bs, Reconstruction([t.laser_id for t in trees.trees], r_rec, th_rec, phi_rec)


def encode_cloud_low(cloud, trees=None, qp=None, phi_ar=None, cfg=None, skip_bias=True, threads=1):
    if trees is None:
        trees = build_trees_threshold(cloud)
    bs, _ = encode_trees_low(trees, qp or QpVector(1, 1, 1, None), phi_ar, cfg, skip_bias, threads)
    return bs


def decode_trees_low(bs, threads=1):
    if bs.mode != MODE_LOW:
        raise ConfigurationError("not a low-bitrate bitstream")
    if bs.matrices is None:
        raise CorruptionError("low-bitrate bitstream without a radius matrix section")
    if len(bs.matrices.fill_counts) != len(bs.matrices.payloads):
        raise CorruptionError("matrix fill counts and payloads disagree")
    phi_rec = decode_azimuths(bs, threads)
    offsets = matrix_offsets([t.count for t in bs.trees], [t.root_r for t in bs.trees])
    if len(offsets) != len(bs.matrices.payloads):
        raise CorruptionError("matrix count disagrees with tree lengths")
    rec_m = decode_radius_lowrate(bs.matrices, aligned_reference(phi_rec), offsets, threads)
    r_rec = restore_radii(rec_m, [t.count for t in bs.trees])
    th_rec = decode_elevations(bs, r_rec, phi_rec, DeltaPredictor(), threads)
    return Reconstruction([t.laser_id for t in bs.trees], r_rec, th_rec, phi_rec)


def decode_cloud_low(bs, threads=1):
    return decode_trees_low(bs, threads).cartesian(bs.calib)
