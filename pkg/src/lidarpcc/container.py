"""Bitstream container (normative little-endian layout).

::

    magic "LPCM" | version u8 | mode u8 (0 low, 1 high, 2 high+LSTM)
    q_delta u16 (0 = bias stream skipped) | q_phi u16 | q_theta u16 | q_r u16 (0 in low mode)
    radius step f64 (0 in high mode) | phi_ar f64
    calibration flag u8 [| n_lasers u16 | n x (elevation f64, height f64)]
    weight checksum u64 (0 if unused) | tree count u32
    per tree: laser u16 | count u32 | root r, theta, phi 3 x f64 |
              4 x (u32 length | bytes): slopes, biases, radii, elevations
    low mode: matrix count u32 | step f64 | fill counts u32 x count |
              per matrix (u32 length | bytes)
"""
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptionError, FormatError, TruncationError
from .geometry import LaserCalibration

MAGIC = b"LPCM"
VERSION = 1
MODE_LOW = 0
MODE_HIGH = 1
MODE_HIGH_LSTM = 2
MODE_NAMES = {MODE_LOW: "low", MODE_HIGH: "high", MODE_HIGH_LSTM: "high+lstm"}
STREAMS = ("slopes", "biases", "radii", "elevations")

_FIXED = struct.Struct("<4sBBHHHHdd")
_TREE = struct.Struct("<HIddd")


@dataclass
class TreeRecord:
    laser_id: int
    count: int
    root_r: float
    root_theta: float
    root_phi: float
    slopes: bytes = b""
    biases: bytes = b""
    radii: bytes = b""
    elevations: bytes = b""


@dataclass
class MatrixSection:
    step: float
    fill_counts: list
    payloads: list


@dataclass
class Bitstream:
    mode: int
    q_delta: int
    q_phi: int
    q_theta: int
    q_r: int
    step: float
    phi_ar: float
    calib: LaserCalibration = None
    weight_checksum: int = 0
    trees: list = field(default_factory=list)
    matrices: MatrixSection = None

    @property
    def n_points(self):
        return sum(t.count for t in self.trees)

    @property
    def skip_bias(self):
        return self.q_delta == 0

    def to_bytes(self):
        out = bytearray(
            _FIXED.pack(MAGIC, VERSION, self.mode, self.q_delta, self.q_phi, self.q_theta,
                        self.q_r, self.step, self.phi_ar)
        )
        if self.calib is None:
            out += b"\x00"
        else:
            out += struct.pack("<BH", 1, self.calib.n_lasers)
            table = np.stack([self.calib.elevation_deg, self.calib.height_m], axis=1)
            out += table.astype("<f8").tobytes()
        out += struct.pack("<QI", self.weight_checksum, len(self.trees))
        for t in self.trees:
            out += _TREE.pack(t.laser_id, t.count, t.root_r, t.root_theta, t.root_phi)
            for name in STREAMS:
                payload = getattr(t, name)
                out += struct.pack("<I", len(payload)) + payload
        if self.mode == MODE_LOW:
            sec = self.matrices or MatrixSection(self.step, [], [])
            out += struct.pack("<Id", len(sec.fill_counts), sec.step)
            out += np.asarray(sec.fill_counts, dtype="<u4").tobytes()
            for payload in sec.payloads:
                out += struct.pack("<I", len(payload)) + payload
        return bytes(out)

    @classmethod
    def from_bytes(cls, data):
        r = _Reader(data)
        magic, version, mode, q_delta, q_phi, q_theta, q_r, step, phi_ar = r.unpack(_FIXED)
        if magic != MAGIC:
            raise FormatError("not an LPCM bitstream (bad magic)")
        if version != VERSION:
            raise FormatError(f"unsupported bitstream version {version}")
        if mode not in MODE_NAMES:
            raise CorruptionError(f"unknown coding mode {mode}")
        (flag,) = r.unpack("<B")
        calib = None
        if flag == 1:
            (n,) = r.unpack("<H")
            table = np.frombuffer(r.take(16 * n), dtype="<f8").reshape(n, 2)
            try:
                calib = LaserCalibration(table[:, 0].copy(), table[:, 1].copy())
            except ValueError as exc:
                raise CorruptionError(f"bad inline calibration: {exc}") from None
        elif flag != 0:
            raise CorruptionError(f"bad calibration flag {flag}")
        checksum, n_trees = r.unpack("<QI")
        trees = []
        for _ in range(n_trees):
            laser, count, rr, th, ph = r.unpack(_TREE)
            payloads = [r.take(r.unpack("<I")[0]) for _ in STREAMS]
            trees.append(TreeRecord(laser, count, rr, th, ph, *payloads))
        matrices = None
        if mode == MODE_LOW:
            n_mat, mstep = r.unpack("<Id")
            fills = np.frombuffer(r.take(4 * n_mat), dtype="<u4").astype(np.int64).tolist()
            payloads = [r.take(r.unpack("<I")[0]) for _ in range(n_mat)]
            matrices = MatrixSection(mstep, fills, payloads)
        if r.pos != len(data):
            raise CorruptionError(f"{len(data) - r.pos} trailing bytes after bitstream")
        return cls(mode, q_delta, q_phi, q_theta, q_r, step, phi_ar, calib, checksum, trees, matrices)

    def stream_bits(self):
        """Payload bits per coordinate plus header/root overhead."""
        phi = sum(8 * (len(t.slopes) + len(t.biases)) for t in self.trees)
        theta = sum(8 * len(t.elevations) for t in self.trees)
        radius = sum(8 * len(t.radii) for t in self.trees)
        if self.matrices is not None:
            radius += sum(8 * len(p) for p in self.matrices.payloads)
        total = 8 * len(self.to_bytes())
        return {"phi": phi, "theta": theta, "r": radius, "overhead": total - phi - theta - radius, "total": total}


class _Reader:
    def __init__(self, data):
        self.data = bytes(data)
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise TruncationError(f"bitstream truncated at byte {len(self.data)} (needed {self.pos + n})")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        s = fmt if isinstance(fmt, struct.Struct) else struct.Struct(fmt)
        return s.unpack(self.take(s.size))
