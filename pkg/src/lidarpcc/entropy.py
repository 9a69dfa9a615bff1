"""Adaptive binary arithmetic coding, integer binarization and Laplace rate models.

The bit-level classes are thin wrappers around the kernels in
:mod:`lidarpcc.kernels.rangecoder`; bulk integer streams go straight to the
array kernels, which is what the codecs use.
"""
from dataclasses import dataclass

import numpy as np

from .errors import CorruptionError, InvalidInputError, TruncationError
from .kernels import rangecoder as rc

INT_LIMIT = 1 << 31
LAPLACE_B_FLOOR = 1e-6
BITS_FLOOR = 1e-9


class BinaryContext:
    """Probability state of one adaptive binary symbol."""

    def __init__(self):
        self._table = rc.new_contexts(1)

    @property
    def p1(self):
        return self._table[0, 0] / rc.PROB_ONE

    def copy(self):
        other = BinaryContext()
        other._table[:] = self._table
        return other


class IntContexts:
    """Context family for :func:`encode_int` (16 prefix bins plus sign)."""

    def __init__(self):
        self._table = rc.new_contexts(rc.N_INT_CTX)


class ArithmeticEncoder:
    def __init__(self):
        self._state = rc.new_encoder_state()
        self._buf = np.zeros(256, dtype=np.uint8)
        self._done = False

    def encode_bit(self, ctx, bit):
        self._buf = rc.reserve(self._state, self._buf, rc.BIT_SHIFTS)
        rc.enc_bit(self._state, self._buf, ctx._table, 0, int(bool(bit)))

    def encode_bypass(self, bit):
        self._buf = rc.reserve(self._state, self._buf, 1)
        rc.enc_bypass(self._state, self._buf, int(bool(bit)))

    def encode_int(self, value, contexts):
        value = int(value)
        if abs(value) >= INT_LIMIT:
            raise InvalidInputError(f"|{value}| exceeds 2^31 - 1")
        self._buf = rc.reserve(self._state, self._buf, rc.INT_SHIFTS)
        rc.enc_int(self._state, self._buf, contexts._table, 0, value)

    def finish(self):
        """Flush and return the coded bytes; the encoder is spent afterwards."""
        if not self._done:
            self._buf = rc.reserve(self._state, self._buf, rc.FINISH_SHIFTS)
            rc.enc_finish(self._state, self._buf)
            self._done = True
        return bytes(self._buf[: self._state[4]])


class ArithmeticDecoder:
    def __init__(self, data):
        self._data = np.frombuffer(bytes(data), dtype=np.uint8)
        self._state = rc.new_decoder_state()
        rc.dec_init(self._state, self._data)
        self._check()

    def _check(self):
        if self._state[3] == 1:
            raise TruncationError("read past the end of the coded buffer")
        if self._state[3] == 2:
            raise CorruptionError("invalid exp-Golomb prefix")

    def decode_bit(self, ctx):
        bit = rc.dec_bit(self._state, self._data, ctx._table, 0)
        self._check()
        return int(bit)

    def decode_bypass(self):
        bit = rc.dec_bypass(self._state, self._data)
        self._check()
        return int(bit)

    def decode_int(self, contexts):
        v = rc.dec_int(self._state, self._data, contexts._table, 0)
        self._check()
        return int(v)

    @property
    def bytes_consumed(self):
        return int(min(self._state[2], self._data.shape[0]))


def encode_ints(values):
    """Code a signed integer sequence with a fresh context family."""
    arr = np.ascontiguousarray(values, dtype=np.int64)
    if arr.size and np.abs(arr).max() >= INT_LIMIT:
        raise InvalidInputError("integer magnitude must be below 2^31")
    return bytes(rc.encode_int_array(arr))


def decode_ints(data, n):
    """Inverse of :func:`encode_ints`; ``n`` values must be present."""
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    buf = np.frombuffer(bytes(data), dtype=np.uint8)
    out, status = rc.decode_int_array(buf, int(n))
    if status == 1:
        raise TruncationError(f"integer stream ended before {n} values")
    if status == 2:
        raise CorruptionError("invalid exp-Golomb prefix in integer stream")
    return out


def encode_bits(bits):
    return bytes(rc.encode_bit_array(np.ascontiguousarray(bits, dtype=np.int64)))


def decode_bits(data, n):
    buf = np.frombuffer(bytes(data), dtype=np.uint8)
    out, status = rc.decode_bit_array(buf, int(n))
    if status:
        raise TruncationError(f"bit stream ended before {n} bits")
    return out


# --- Laplace model ---------------------------------------------------------


@dataclass(frozen=True)
class LaplaceParams:
    mu: float
    b: float

    def __post_init__(self):
        if not self.b > 0:
            raise InvalidInputError(f"Laplace scale must be positive, got {self.b}")


def fit_laplace(values):
    """Maximum-likelihood Laplace fit: median and mean absolute deviation."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise InvalidInputError("cannot fit a Laplace model to no data")
    mu = float(np.median(v))
    b = float(np.mean(np.abs(v - mu)))
    return LaplaceParams(mu, max(b, LAPLACE_B_FLOOR))


def laplace_log2_mass(value, mu, b, step):
    """log2 of the Laplace mass on ``[value - step/2, value + step/2]``.

    Vectorized over ``value``; evaluated in log space so far tails do not
    underflow.
    """
    v = np.asarray(value, dtype=np.float64)
    lo = (v - 0.5 * step - mu) / b
    hi = (v + 0.5 * step - mu) / b
    width = step / b
    out = np.empty(np.broadcast(lo, hi).shape)
    lo, hi = np.broadcast_to(lo, out.shape), np.broadcast_to(hi, out.shape)
    above = lo >= 0
    below = hi <= 0
    mid = ~(above | below)
    tail = np.log1p(-np.exp(-width))
    out[above] = np.log(0.5) - lo[above] + tail
    out[below] = np.log(0.5) + hi[below] + tail
    out[mid] = np.log1p(-0.5 * (np.exp(-hi[mid]) + np.exp(lo[mid])))
    return out / np.log(2.0)


def laplace_bits(value, params, step):
    """Ideal code length in bits of the quantization bin holding ``value``."""
    if not step > 0:
        raise InvalidInputError(f"quantization step must be positive, got {step}")
    bits = -laplace_log2_mass(value, params.mu, params.b, step)
    bits = np.maximum(bits, BITS_FLOOR)
    return float(bits) if np.ndim(bits) == 0 else bits
