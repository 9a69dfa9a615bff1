"""Binary range coder kernels (LZMA-style carry handling, 32-bit range).

State layout
------------
Encoder state ``est`` (int64[5]): low, range, cache, cache_size, pos.
Decoder state ``dst`` (int64[4]): code, range, pos, overrun flag.
Context table ``ctx`` (int64[n, 2]): p(1) in 1/65536 units, observation count.

Everything here must stay numba-compilable; see ``lidarpcc._accel``.
"""
import numpy as np

from .._accel import njit

PROB_BITS = 16
PROB_ONE = 1 << PROB_BITS
PROB_INIT = PROB_ONE // 2
# p(1) clamped to [1/512, 511/512]
PROB_MIN = PROB_ONE // 512
PROB_MAX = PROB_ONE - PROB_MIN
# adaptation rate 1/2^shift, shift ramps from 1 up to SHIFT_MAX with the count
SHIFT_MAX = 9
COUNT_MAX = 255
TOP = 1 << 24
MASK32 = (1 << 32) - 1

N_PREFIX_CTX = 16
CTX_SIGN = N_PREFIX_CTX
N_INT_CTX = N_PREFIX_CTX + 1


def new_contexts(n):
    ctx = np.zeros((n, 2), dtype=np.int64)
    ctx[:, 0] = PROB_INIT
    return ctx


def new_encoder_state():
    est = np.zeros(5, dtype=np.int64)
    est[1] = MASK32
    est[3] = 1
    return est


def new_decoder_state():
    return np.zeros(4, dtype=np.int64)


@njit
def _bit_length(v):
    n = 0
    while v > 0:
        v >>= 1
        n += 1
    return n


@njit
def ctx_update(ctx, i, bit):
    p = ctx[i, 0]
    c = ctx[i, 1]
    shift = _bit_length(c + 1)
    if shift > SHIFT_MAX:
        shift = SHIFT_MAX
    if bit:
        p += (PROB_ONE - p) >> shift
    else:
        p -= p >> shift
    if p < PROB_MIN:
        p = PROB_MIN
    elif p > PROB_MAX:
        p = PROB_MAX
    ctx[i, 0] = p
    if c < COUNT_MAX:
        ctx[i, 1] = c + 1


@njit
def reserve(est, buf, shifts):
    """Return ``buf``, grown if needed, with room for ``shifts`` more byte shifts.

    Every shift adds exactly one byte to ``pos + cache_size``, so that sum
    bounds what any later flush can write.  The bin coders below write
    without bounds checks and rely on callers reserving per symbol.
    """
    need = est[4] + est[3] + shifts
    if need <= buf.shape[0]:
        return buf
    return grow(buf, need)


@njit
def grow(buf, need):
    grown = np.zeros(max(need, 2 * buf.shape[0]), dtype=np.uint8)
    grown[: buf.shape[0]] = buf
    return grown


# worst-case shifts: a context bin at most 2 (any p1 >= 1 leaves range >= 2^8),
# a bypass bin 1; an integer has 17 context bins and at most 63 bypass bins
BIT_SHIFTS = 2
INT_SHIFTS = BIT_SHIFTS * N_INT_CTX + 63
FINISH_SHIFTS = 5


@njit
def _shift_low(est, buf):
    low = est[0]
    if low < 0xFF000000 or low > MASK32:
        carry = low >> 32
        temp = est[2]
        while True:
            buf[est[4]] = (temp + carry) & 0xFF
            est[4] += 1
            temp = 0xFF
            est[3] -= 1
            if est[3] == 0:
                break
        est[2] = (low >> 24) & 0xFF
    est[3] += 1
    est[0] = (low & 0x00FFFFFF) << 8


@njit
def enc_prob(est, buf, p1, bit):
    """Code one bit with a fixed probability p1 (1/65536 units) of a one."""
    bound = (est[1] >> PROB_BITS) * p1
    if bit:
        est[1] = bound
    else:
        est[0] += bound
        est[1] -= bound
    while est[1] < TOP:
        est[1] <<= 8
        _shift_low(est, buf)


@njit
def enc_bit(est, buf, ctx, i, bit):
    enc_prob(est, buf, ctx[i, 0], bit)
    ctx_update(ctx, i, bit)


@njit
def enc_bypass(est, buf, bit):
    est[1] >>= 1
    if bit:
        est[0] += est[1]
    while est[1] < TOP:
        est[1] <<= 8
        _shift_low(est, buf)


@njit
def enc_finish(est, buf):
    for _ in range(5):
        _shift_low(est, buf)


@njit
def _next_byte(dst, data):
    pos = dst[2]
    dst[2] = pos + 1
    if pos >= data.shape[0]:
        dst[3] = 1
        return 0
    return np.int64(data[pos])


@njit
def dec_init(dst, data):
    dst[0] = 0
    dst[1] = MASK32
    dst[2] = 0
    dst[3] = 0
    for _ in range(5):
        dst[0] = ((dst[0] << 8) | _next_byte(dst, data)) & MASK32


@njit
def dec_prob(dst, data, p1):
    bound = (dst[1] >> PROB_BITS) * p1
    if dst[0] < bound:
        dst[1] = bound
        bit = 1
    else:
        dst[0] -= bound
        dst[1] -= bound
        bit = 0
    while dst[1] < TOP:
        dst[1] <<= 8
        dst[0] = ((dst[0] << 8) | _next_byte(dst, data)) & MASK32
    return bit


@njit
def dec_bit(dst, data, ctx, i):
    bit = dec_prob(dst, data, ctx[i, 0])
    ctx_update(ctx, i, bit)
    return bit


@njit
def dec_bypass(dst, data):
    dst[1] >>= 1
    if dst[0] >= dst[1]:
        dst[0] -= dst[1]
        bit = 1
    else:
        bit = 0
    while dst[1] < TOP:
        dst[1] <<= 8
        dst[0] = ((dst[0] << 8) | _next_byte(dst, data)) & MASK32
    return bit


# --- signed integers: magnitude as order-0 exp-Golomb, then sign ---------


@njit
def enc_int(est, buf, ctx, base, v):
    """Binarize ``v`` onto contexts ``ctx[base : base + N_INT_CTX]``.

    Magnitude: truncated unary over ``N_PREFIX_CTX`` adaptive bins, then an
    order-0 exp-Golomb escape in bypass bins.  Sign follows a nonzero
    magnitude on its own context.
    """
    m = v if v >= 0 else -v
    for i in range(N_PREFIX_CTX):
        bit = 1 if m > i else 0
        enc_bit(est, buf, ctx, base + i, bit)
        if bit == 0:
            break
    if m >= N_PREFIX_CTX:
        rest = m - N_PREFIX_CTX + 1
        k = _bit_length(rest) - 1
        for _ in range(k):
            enc_bypass(est, buf, 1)
        enc_bypass(est, buf, 0)
        for j in range(k - 1, -1, -1):
            enc_bypass(est, buf, (rest >> j) & 1)
    if m != 0:
        enc_bit(est, buf, ctx, base + CTX_SIGN, 1 if v < 0 else 0)


@njit
def dec_int(dst, data, ctx, base):
    """Inverse of :func:`enc_int`. Sets ``dst[3] = 2`` on a corrupt escape."""
    m = 0
    while m < N_PREFIX_CTX:
        if dec_bit(dst, data, ctx, base + m) == 0:
            break
        m += 1
        if dst[3] != 0:
            return 0
    if m == N_PREFIX_CTX:
        k = 0
        while dec_bypass(dst, data) == 1:
            k += 1
            if k > 31 or dst[3] != 0:
                if dst[3] == 0:
                    dst[3] = 2
                return 0
        rest = 1
        for _ in range(k):
            rest = (rest << 1) | dec_bypass(dst, data)
        m = rest - 1 + N_PREFIX_CTX
    if m != 0 and dec_bit(dst, data, ctx, base + CTX_SIGN):
        return -m
    return m


@njit
def encode_int_array(values):
    """Code a signed integer array with one fresh context family."""
    est = np.zeros(5, dtype=np.int64)
    est[1] = MASK32
    est[3] = 1
    ctx = np.zeros((N_INT_CTX, 2), dtype=np.int64)
    ctx[:, 0] = PROB_INIT
    buf = np.zeros(64 + values.shape[0], dtype=np.uint8)
    for t in range(values.shape[0]):
        if est[4] + est[3] + INT_SHIFTS > buf.shape[0]:
            buf = grow(buf, est[4] + est[3] + INT_SHIFTS)
        enc_int(est, buf, ctx, 0, values[t])
    buf = reserve(est, buf, FINISH_SHIFTS)
    enc_finish(est, buf)
    return buf[: est[4]]


@njit
def decode_int_array(data, n):
    """Returns (values, status); status 0 ok, 1 overrun, 2 corrupt prefix."""
    dst = np.zeros(4, dtype=np.int64)
    ctx = np.zeros((N_INT_CTX, 2), dtype=np.int64)
    ctx[:, 0] = PROB_INIT
    out = np.zeros(n, dtype=np.int64)
    dec_init(dst, data)
    for t in range(n):
        out[t] = dec_int(dst, data, ctx, 0)
        if dst[3] != 0:
            break
    return out, dst[3]


@njit
def encode_bit_array(bits):
    est = np.zeros(5, dtype=np.int64)
    est[1] = MASK32
    est[3] = 1
    ctx = np.zeros((1, 2), dtype=np.int64)
    ctx[0, 0] = PROB_INIT
    buf = np.zeros(64 + bits.shape[0] // 4, dtype=np.uint8)
    for t in range(bits.shape[0]):
        if est[4] + est[3] + BIT_SHIFTS > buf.shape[0]:
            buf = grow(buf, est[4] + est[3] + BIT_SHIFTS)
        enc_bit(est, buf, ctx, 0, bits[t])
    buf = reserve(est, buf, FINISH_SHIFTS)
    enc_finish(est, buf)
    return buf[: est[4]]


@njit
def decode_bit_array(data, n):
    dst = np.zeros(4, dtype=np.int64)
    ctx = np.zeros((1, 2), dtype=np.int64)
    ctx[0, 0] = PROB_INIT
    out = np.zeros(n, dtype=np.int64)
    dec_init(dst, data)
    for t in range(n):
        out[t] = dec_bit(dst, data, ctx, 0)
    return out, dst[3]
