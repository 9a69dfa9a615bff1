"""Deterministic LSTM-P inference.

The encoder and decoder must produce bit-identical predictions, possibly on
different machines and with or without numba.  Both paths therefore use only
IEEE basic arithmetic in one fixed summation order (bias first, then inputs,
then recurrent terms, ascending index), and ``exp`` is evaluated by an
explicit range reduction + polynomial instead of libm.

Parameter vector layout (also the weight-file order), for L layers, hidden
size H and 4 input features:

    per layer l: W_ih (4H x in_l), W_hh (4H x H), b (4H)   gate rows: i, f, o, g
    MLP-1:       W (H x H), b (H), W (H x H), b (H)
    MLP-2:       W (H x (H + 4)), b (H), w (1 x H), b (1)
"""
import math

import numpy as np

from .._accel import USE_NUMBA, njit

N_FEATURES = 4
LN2_HI = 6.93147180369123816490e-01
LN2_LO = 1.90821492927058770002e-10
INV_LN2 = 1.44269504088896338700e00
# 1/k! for k = 0..13, Horner from the top
_EXP_COEF = np.array([1.0 / math.factorial(k) for k in range(14)])


def param_count(hidden, layers=3, n_in=N_FEATURES):
    h4 = 4 * hidden
    total = 0
    width = n_in
    for _ in range(layers):
        total += h4 * width + h4 * hidden + h4
        width = hidden
    total += 2 * (hidden * hidden + hidden)
    total += hidden * (hidden + n_in) + hidden + hidden + 1
    return total


@njit
def det_exp(x):
    if x > 700.0:
        x = 700.0
    elif x < -700.0:
        x = -700.0
    k = math.floor(x * INV_LN2 + 0.5)
    r = (x - k * LN2_HI) - k * LN2_LO
    p = _EXP_COEF[13]
    for j in range(12, -1, -1):
        p = p * r + _EXP_COEF[j]
    return math.ldexp(p, int(k))


@njit
def det_sigmoid(x):
    return 1.0 / (1.0 + det_exp(-x))


@njit
def det_tanh(x):
    a = x if x >= 0 else -x
    e = det_exp(-2.0 * a)
    t = (1.0 - e) / (1.0 + e)
    return t if x >= 0 else -t


@njit
def _predict_one(params, hidden, layers, window, feats, out_seq, h, c, z, tmp, cat):
    H = hidden
    W = window.shape[0]
    off = 0
    width = N_FEATURES
    for t in range(W):
        for k in range(N_FEATURES):
            out_seq[t, k] = window[t, k]
    for _ in range(layers):
        o_ih = off
        o_hh = o_ih + 4 * H * width
        o_b = o_hh + 4 * H * H
        off = o_b + 4 * H
        for j in range(H):
            h[j] = 0.0
            c[j] = 0.0
        for t in range(W):
            for j in range(4 * H):
                acc = params[o_b + j]
                row = o_ih + j * width
                for k in range(width):
                    acc += params[row + k] * out_seq[t, k]
                row = o_hh + j * H
                for k in range(H):
                    acc += params[row + k] * h[k]
                z[j] = acc
            for j in range(H):
                ig = det_sigmoid(z[j])
                fg = det_sigmoid(z[H + j])
                og = det_sigmoid(z[2 * H + j])
                gg = det_tanh(z[3 * H + j])
                c[j] = fg * c[j] + ig * gg
                tmp[j] = og * det_tanh(c[j])
            for j in range(H):
                h[j] = tmp[j]
                out_seq[t, j] = tmp[j]
        width = H
    # MLP-1
    o_w = off
    o_b = o_w + H * H
    for j in range(H):
        acc = params[o_b + j]
        for k in range(H):
            acc += params[o_w + j * H + k] * h[k]
        tmp[j] = det_tanh(acc)
    o_w = o_b + H
    o_b = o_w + H * H
    for j in range(H):
        acc = params[o_b + j]
        for k in range(H):
            acc += params[o_w + j * H + k] * tmp[k]
        cat[j] = acc
    off = o_b + H
    for k in range(N_FEATURES):
        cat[H + k] = feats[k]
    # MLP-2
    n_cat = H + N_FEATURES
    o_w = off
    o_b = o_w + H * n_cat
    for j in range(H):
        acc = params[o_b + j]
        for k in range(n_cat):
            acc += params[o_w + j * n_cat + k] * cat[k]
        tmp[j] = det_tanh(acc)
    o_w = o_b + H
    acc = params[o_w + H]
    for k in range(H):
        acc += params[o_w + k] * tmp[k]
    return acc


@njit
def _predict_batch_jit(params, hidden, layers, windows, feats):
    B = windows.shape[0]
    W = windows.shape[1]
    width = max(hidden, N_FEATURES)
    out = np.empty(B, dtype=np.float64)
    out_seq = np.zeros((W, width), dtype=np.float64)
    h = np.zeros(hidden, dtype=np.float64)
    c = np.zeros(hidden, dtype=np.float64)
    z = np.zeros(4 * hidden, dtype=np.float64)
    tmp = np.zeros(hidden, dtype=np.float64)
    cat = np.zeros(hidden + N_FEATURES, dtype=np.float64)
    for b in range(B):
        out[b] = _predict_one(params, hidden, layers, windows[b], feats[b], out_seq, h, c, z, tmp, cat)
    return out


# --- vectorized numpy path (same arithmetic, batched across rows) ----------


def _np_exp(x):
    x = np.clip(x, -700.0, 700.0)
    k = np.floor(x * INV_LN2 + 0.5)
    r = (x - k * LN2_HI) - k * LN2_LO
    p = np.full_like(r, _EXP_COEF[13])
    for j in range(12, -1, -1):
        p = p * r + _EXP_COEF[j]
    return np.ldexp(p, k.astype(np.int64))


def _np_sigmoid(x):
    return 1.0 / (1.0 + _np_exp(-x))


def _np_tanh(x):
    e = _np_exp(-2.0 * np.abs(x))
    t = (1.0 - e) / (1.0 + e)
    return np.where(x >= 0, t, -t)


def _np_affine(weight, bias, *inputs):
    """bias + sum_k weight[:, k] * x[:, k], accumulated in ascending k."""
    acc = np.broadcast_to(bias, (inputs[0].shape[0], bias.shape[0])).copy()
    col = 0
    for x in inputs:
        for k in range(x.shape[1]):
            acc += x[:, k : k + 1] * weight[:, col]
            col += 1
    return acc


def _predict_batch_numpy(params, hidden, layers, windows, feats):
    H = hidden
    B, W, _ = windows.shape
    seq = [windows[:, t, :] for t in range(W)]
    off = 0
    width = N_FEATURES
    h = None
    for _ in range(layers):
        w_ih = params[off : off + 4 * H * width].reshape(4 * H, width)
        off += 4 * H * width
        w_hh = params[off : off + 4 * H * H].reshape(4 * H, H)
        off += 4 * H * H
        b = params[off : off + 4 * H]
        off += 4 * H
        w_cat = np.concatenate([w_ih, w_hh], axis=1)
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        new_seq = []
        for t in range(W):
            z = _np_affine(w_cat, b, seq[t], h)
            ig, fg, og = _np_sigmoid(z[:, :H]), _np_sigmoid(z[:, H : 2 * H]), _np_sigmoid(z[:, 2 * H : 3 * H])
            gg = _np_tanh(z[:, 3 * H :])
            c = fg * c + ig * gg
            h = og * _np_tanh(c)
            new_seq.append(h)
        seq = new_seq
        width = H

    def take(n_out, n_in):
        nonlocal off
        w = params[off : off + n_out * n_in].reshape(n_out, n_in)
        off += n_out * n_in
        bb = params[off : off + n_out]
        off += n_out
        return w, bb

    w, bb = take(H, H)
    a = _np_tanh(_np_affine(w, bb, h))
    w, bb = take(H, H)
    m = _np_affine(w, bb, a)
    w, bb = take(H, H + N_FEATURES)
    u = _np_tanh(_np_affine(w, bb, m, feats))
    w, bb = take(1, H)
    return _np_affine(w, bb, u)[:, 0]


def predict_batch(params, hidden, layers, windows, feats):
    """Raw network outputs for normalized ``windows`` (B, W, 4) and ``feats`` (B, 4)."""
    params = np.ascontiguousarray(params, dtype=np.float64)
    windows = np.ascontiguousarray(windows, dtype=np.float64)
    feats = np.ascontiguousarray(feats, dtype=np.float64)
    if USE_NUMBA:
        return _predict_batch_jit(params, int(hidden), int(layers), windows, feats)
    return _predict_batch_numpy(params, int(hidden), int(layers), windows, feats)
