"""Closed-loop scalar quantization kernels.

Reconstruction is always ``pred + k / q`` evaluated in float64 in this exact
order, on both the encoder and decoder side.
"""
import math

import numpy as np

from .._accel import njit


@njit
def round_half_away(x):
    if x >= 0:
        return math.floor(x + 0.5)
    return -math.floor(-x + 0.5)


@njit
def round_half_away_array(x):
    out = np.empty(x.shape[0], dtype=np.int64)
    for i in range(x.shape[0]):
        out[i] = np.int64(round_half_away(x[i]))
    return out


@njit
def dpcm_encode(values, q):
    """Previous-reconstruction prediction; returns (residual ints, reconstruction).

    ``values[0]`` is the root and is reproduced exactly.
    """
    n = values.shape[0]
    ks = np.zeros(max(n - 1, 0), dtype=np.int64)
    rec = np.empty(n, dtype=np.float64)
    if n == 0:
        return ks, rec
    qf = np.float64(q)
    rec[0] = values[0]
    for i in range(1, n):
        pred = rec[i - 1]
        k = np.int64(round_half_away((values[i] - pred) * qf))
        ks[i - 1] = k
        rec[i] = pred + k / qf
    return ks, rec


@njit
def dpcm_decode(root, ks, q):
    n = ks.shape[0] + 1
    rec = np.empty(n, dtype=np.float64)
    qf = np.float64(q)
    rec[0] = root
    for i in range(1, n):
        rec[i] = rec[i - 1] + ks[i - 1] / qf
    return rec
