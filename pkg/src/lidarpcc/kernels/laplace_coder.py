"""Context-adaptive residual coder for quantized radius matrices.

Cells are integers read in row-major order; each residual is the cell minus
its predecessor.  The magnitude uses the same unary + exp-Golomb
binarization as the generic integer coder, but the context family is chosen
by the residual activity of the predecessor and of a reference cell (the
caller passes the index of the previous laser's return at the same azimuth),
and every family starts from the probabilities of a discrete Laplace law
with the transmitted scale.
"""
import numpy as np

from .._accel import njit
from .lstm import det_exp
from .rangecoder import (
    COUNT_MAX,
    CTX_SIGN,
    FINISH_SHIFTS,
    INT_SHIFTS,
    MASK32,
    N_INT_CTX,
    N_PREFIX_CTX,
    PROB_INIT,
    PROB_MAX,
    PROB_MIN,
    PROB_ONE,
    dec_init,
    dec_int,
    enc_finish,
    enc_int,
    grow,
    reserve,
)

N_BUCKETS = 7
# observations credited to the Laplace prior before adaptation takes over
PRIOR_COUNT = 6


@njit
def activity_bucket(a):
    if a == 0:
        return 0
    if a == 1:
        return 1
    if a == 2:
        return 2
    if a <= 4:
        return 3
    if a <= 8:
        return 4
    if a <= 16:
        return 5
    return 6


@njit
def _clamp_prob(p):
    q = np.int64(p * PROB_ONE + 0.5)
    if q < PROB_MIN:
        return PROB_MIN
    if q > PROB_MAX:
        return PROB_MAX
    return q


@njit
def laplace_contexts(b):
    """Context table seeded with a discrete Laplace law of scale ``b`` (cells)."""
    ctx = np.zeros((N_BUCKETS * N_INT_CTX, 2), dtype=np.int64)
    theta = det_exp(-1.0 / b)
    p_nonzero = 2.0 * theta / (1.0 + theta)
    for k in range(N_BUCKETS):
        base = k * N_INT_CTX
        ctx[base, 0] = _clamp_prob(p_nonzero)
        for i in range(1, N_PREFIX_CTX):
            ctx[base + i, 0] = _clamp_prob(theta)
        ctx[base + CTX_SIGN, 0] = PROB_INIT
        for i in range(N_INT_CTX):
            ctx[base + i, 1] = min(PRIOR_COUNT, COUNT_MAX)
    return ctx


@njit
def residuals(q, n):
    """Predecessor residuals of the first ``n`` cells; ``e[0]`` is the cell itself."""
    e = np.empty(n, dtype=np.int64)
    for t in range(n):
        e[t] = q[0] if t == 0 else q[t] - q[t - 1]
    return e


@njit
def _bucket_at(e, t, ref):
    a = 0
    j = ref[t]
    if 0 <= j < t:
        v = e[j]
        a += v if v >= 0 else -v
    if t >= 1:
        v = e[t - 1]
        a += v if v >= 0 else -v
    return activity_bucket(a)


@njit
def encode_residuals(e, b, ref):
    """Code residuals ``e[1:]``; ``e[0]`` travels raw in the payload header."""
    est = np.zeros(5, dtype=np.int64)
    est[1] = MASK32
    est[3] = 1
    ctx = laplace_contexts(b)
    buf = np.zeros(64 + e.shape[0] // 2, dtype=np.uint8)
    for t in range(1, e.shape[0]):
        if est[4] + est[3] + INT_SHIFTS > buf.shape[0]:
            buf = grow(buf, est[4] + est[3] + INT_SHIFTS)
        enc_int(est, buf, ctx, _bucket_at(e, t, ref) * N_INT_CTX, e[t])
    buf = reserve(est, buf, FINISH_SHIFTS)
    enc_finish(est, buf)
    return buf[: est[4]]


@njit
def decode_cells(data, first, n, b, ref):
    """Returns (cells, status) with status as in the generic integer decoder."""
    dst = np.zeros(4, dtype=np.int64)
    ctx = laplace_contexts(b)
    e = np.zeros(n, dtype=np.int64)
    q = np.zeros(n, dtype=np.int64)
    if n == 0:
        return q, np.int64(0)
    e[0] = first
    q[0] = first
    dec_init(dst, data)
    for t in range(1, n):
        e[t] = dec_int(dst, data, ctx, _bucket_at(e, t, ref) * N_INT_CTX)
        if dst[3] != 0:
            break
        q[t] = q[t - 1] + e[t]
    return q, dst[3]
