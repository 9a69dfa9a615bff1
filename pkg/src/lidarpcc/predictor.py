"""Elevation predictors: the delta rule and a small recurrent network (LSTM-P).

Both predictors see only decoder-available data: reconstructed
(r, theta, phi, laser id) tuples of earlier points in the chain plus the
current point's reconstructed r and phi.  The network predicts an offset
from the previous reconstructed elevation, so a zero network reduces to the
delta predictor.
"""
import hashlib
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, CorruptionError, DivergenceError, FormatError, InvalidInputError, PredictorError
from .kernels import lstm as lstm_kernel

N_FEATURES = lstm_kernel.N_FEATURES
N_LAYERS = 3
# network output unit, in degrees of elevation offset
OUTPUT_SCALE = 1.0
WEIGHT_MAGIC = b"LPCW"
WEIGHT_VERSION = 1
_HEADER = struct.Struct("<4sBHHB")


@dataclass
class PredictorContext:
    """History window (W, 4) of raw (r, theta, phi, laser) tuples and current features.

    ``current`` is (r_n, theta_{n-1}, phi_n, laser_n), all reconstructed.
    """

    window: np.ndarray
    current: np.ndarray
    n_lasers: int = 1


def normalize(tuples, n_lasers):
    """Fixed affine feature scaling: r/100, theta/90, phi/180, id/(N-1)."""
    t = np.asarray(tuples, dtype=np.float64)
    scale = np.array([1 / 100.0, 1 / 90.0, 1 / 180.0, 1.0 / (n_lasers - 1) if n_lasers > 1 else 0.0])
    return t * scale


def history_windows(r, theta, phi, laser, positions, window):
    """Windows of the ``window`` reconstructed tuples preceding each position.

    Positions closer than ``window`` to the chain start are front-padded by
    repeating the first tuple.
    """
    positions = np.asarray(positions, dtype=np.int64)
    offs = np.arange(-window, 0)
    idx = np.maximum(positions[:, None] + offs[None, :], 0)
    lid = np.broadcast_to(np.asarray(laser, dtype=np.float64), np.shape(r))
    tup = np.stack([r, theta, phi, lid], axis=-1)
    return tup[idx]


# --- predictors ------------------------------------------------------------


def predict_delta(ctx):
    """Previous reconstructed elevation."""
    return float(ctx.current[1])


class DeltaPredictor:
    name = "delta"
    window = 1

    def predict(self, windows, current, n_lasers):
        return np.asarray(current, dtype=np.float64)[:, 1].copy()


@dataclass
class LstmWeights:
    hidden: int
    window: int
    params: np.ndarray
    layers: int = N_LAYERS

    def __post_init__(self):
        p = np.asarray(self.params, dtype=np.float32).ravel()
        expected = lstm_kernel.param_count(self.hidden, self.layers)
        if p.size != expected:
            raise ConfigurationError(
                f"weights for H={self.hidden}, {self.layers} layers need {expected} values, got {p.size}"
            )
        if not np.all(np.isfinite(p)):
            raise ConfigurationError("weights contain non-finite values")
        self.params = p

    @classmethod
    def zeros(cls, hidden, window):
        return cls(hidden, window, np.zeros(lstm_kernel.param_count(hidden)))

    @classmethod
    def random(cls, hidden, window, seed=0, dtype=np.float32):
        return cls(hidden, window, init_params(hidden, np.random.default_rng(seed), dtype))

    def to_bytes(self):
        head = _HEADER.pack(WEIGHT_MAGIC, WEIGHT_VERSION, self.hidden, self.window, self.layers)
        body = head + self.params.astype("<f4").tobytes()
        return body + struct.pack("<I", zlib.crc32(body))

    @classmethod
    def from_bytes(cls, data):
        if len(data) < _HEADER.size + 4:
            raise CorruptionError("weight file truncated")
        magic, version, hidden, window, layers = _HEADER.unpack_from(data)
        if magic != WEIGHT_MAGIC:
            raise FormatError("not a weight file (bad magic)")
        if version != WEIGHT_VERSION:
            raise FormatError(f"unsupported weight file version {version}")
        n = lstm_kernel.param_count(hidden, layers)
        expected = _HEADER.size + 4 * n + 4
        if len(data) != expected:
            raise CorruptionError(f"weight file has {len(data)} bytes, expected {expected}")
        (crc,) = struct.unpack_from("<I", data, expected - 4)
        if crc != zlib.crc32(data[: expected - 4]):
            raise CorruptionError("weight file checksum mismatch")
        params = np.frombuffer(data, dtype="<f4", count=n, offset=_HEADER.size)
        return cls(hidden, window, params.astype(np.float32), layers)

    def checksum(self):
        """64-bit identifier recorded in bitstream headers."""
        return int.from_bytes(hashlib.blake2b(self.to_bytes(), digest_size=8).digest(), "little")


def save_weights(weights, path):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(weights.to_bytes())
    tmp.replace(path)


def load_weights(path):
    return LstmWeights.from_bytes(Path(path).read_bytes())


def predict_lstm(weights, ctx):
    """Single-context prediction; see :class:`LstmPredictor` for batches."""
    window = np.asarray(ctx.window, dtype=np.float64)
    if window.ndim != 2 or window.shape[1] != N_FEATURES:
        raise ConfigurationError(f"context window must be (W, {N_FEATURES}), got {window.shape}")
    return float(LstmPredictor(weights).predict(window[None], np.asarray(ctx.current)[None], ctx.n_lasers)[0])


class LstmPredictor:
    name = "lstm"

    def __init__(self, weights):
        self.weights = weights
        self.window = weights.window
        self._params = weights.params.astype(np.float64)

    def predict(self, windows, current, n_lasers):
        windows = np.asarray(windows, dtype=np.float64)
        current = np.asarray(current, dtype=np.float64)
        if windows.ndim != 3 or windows.shape[2] != N_FEATURES:
            raise ConfigurationError(f"windows must be (B, W, {N_FEATURES}), got {windows.shape}")
        y = lstm_kernel.predict_batch(
            self._params,
            self.weights.hidden,
            self.weights.layers,
            normalize(windows, n_lasers),
            normalize(current, n_lasers),
        )
        pred = current[:, 1] + OUTPUT_SCALE * y
        if not np.all(np.isfinite(pred)):
            raise PredictorError("predictor produced a non-finite elevation")
        return pred


# --- training ----------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 256
    learning_rate: float = 1e-3
    decay: float = 0.99
    window: int = 50
    hidden: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("epochs", "batch_size", "learning_rate", "decay", "window", "hidden"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")


@dataclass
class TrainingSet:
    """Normalized windows (S, W, 4), normalized features (S, 4), previous and true elevations."""

    windows: np.ndarray
    feats: np.ndarray
    prev_theta: np.ndarray
    target: np.ndarray

    def __len__(self):
        return self.target.shape[0]

    @classmethod
    def from_contexts(cls, contexts, targets):
        windows = np.stack([normalize(c.window, c.n_lasers) for c in contexts])
        feats = np.stack([normalize(c.current, c.n_lasers) for c in contexts])
        prev = np.array([c.current[1] for c in contexts], dtype=np.float64)
        return cls(windows, feats, prev, np.asarray(targets, dtype=np.float64))

    @classmethod
    def concat(cls, parts):
        parts = [p for p in parts if len(p)]
        if not parts:
            raise InvalidInputError("empty training set")
        return cls(
            np.concatenate([p.windows for p in parts]),
            np.concatenate([p.feats for p in parts]),
            np.concatenate([p.prev_theta for p in parts]),
            np.concatenate([p.target for p in parts]),
        )


@dataclass
class TrainResult:
    weights: LstmWeights
    epoch_losses: list = field(default_factory=list)
    baseline_loss: float = float("nan")
    initial_loss: float = float("nan")


def mse_loss(predictions, targets):
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise InvalidInputError(f"shape mismatch {p.shape} vs {t.shape}")
    return float(np.mean((p - t) ** 2))


def _views(params, H, layers=N_LAYERS):
    """Named views into the flat parameter vector (kernel layout)."""
    views = {}
    off = 0

    def take(name, *shape):
        nonlocal off
        n = int(np.prod(shape))
        views[name] = params[off : off + n].reshape(shape)
        off += n

    width = N_FEATURES
    for layer in range(layers):
        take(f"w_ih{layer}", 4 * H, width)
        take(f"w_hh{layer}", 4 * H, H)
        take(f"b{layer}", 4 * H)
        width = H
    take("m1_w1", H, H)
    take("m1_b1", H)
    take("m1_w2", H, H)
    take("m1_b2", H)
    take("m2_w1", H, H + N_FEATURES)
    take("m2_b1", H)
    take("m2_w2", 1, H)
    take("m2_b2", 1)
    assert off == params.size
    return views


def init_params(H, rng, dtype=np.float32, layers=N_LAYERS):
    params = np.zeros(lstm_kernel.param_count(H, layers), dtype=dtype)
    v = _views(params, H, layers)
    bound = 1.0 / np.sqrt(H)
    for name, arr in v.items():
        arr[...] = rng.uniform(-bound, bound, arr.shape)
    for layer in range(layers):
        v[f"b{layer}"][H : 2 * H] = 1.0
    # start close to the delta predictor
    v["m2_w2"][...] *= 0.01
    v["m2_b2"][...] = 0.0
    return params


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def forward(params, H, windows, feats, keep=False):
    """Batched network output y (B,); with ``keep`` also the backward cache."""
    v = _views(params, H)
    B, W, _ = windows.shape
    seq = windows
    caches = []
    for layer in range(N_LAYERS):
        w_ih, w_hh, b = v[f"w_ih{layer}"], v[f"w_hh{layer}"], v[f"b{layer}"]
        xw = seq @ w_ih.T + b
        h = np.zeros((B, H), dtype=params.dtype)
        c = np.zeros((B, H), dtype=params.dtype)
        out = np.empty((B, W, H), dtype=params.dtype)
        steps = []
        for t in range(W):
            z = xw[:, t] + h @ w_hh.T
            i = _sigmoid(z[:, :H])
            f = _sigmoid(z[:, H : 2 * H])
            o = _sigmoid(z[:, 2 * H : 3 * H])
            g = np.tanh(z[:, 3 * H :])
            c_prev, h_prev = c, h
            c = f * c_prev + i * g
            tc = np.tanh(c)
            h = o * tc
            out[:, t] = h
            if keep:
                steps.append((i, f, o, g, c_prev, tc, h_prev))
        caches.append((seq, steps))
        seq = out
    h_last = seq[:, -1]
    a = np.tanh(h_last @ v["m1_w1"].T + v["m1_b1"])
    m = a @ v["m1_w2"].T + v["m1_b2"]
    cat = np.concatenate([m, feats.astype(params.dtype)], axis=1)
    u = np.tanh(cat @ v["m2_w1"].T + v["m2_b1"])
    y = (u @ v["m2_w2"].T + v["m2_b2"])[:, 0]
    if keep:
        return y, (caches, h_last, a, cat, u)
    return y


def loss_and_grad(params, H, windows, feats, prev_theta, target):
    """Elevation MSE (deg^2) and its gradient w.r.t. the flat parameters."""
    y, (caches, h_last, a, cat, u) = forward(params, H, windows, feats, keep=True)
    err = prev_theta + OUTPUT_SCALE * y - target
    B = y.shape[0]
    loss = float(np.mean(err.astype(np.float64) ** 2))
    v = _views(params, H)
    grad = np.zeros_like(params)
    g = _views(grad, H)

    dy = (2.0 * OUTPUT_SCALE / B) * err.astype(params.dtype)
    g["m2_w2"][...] = dy[None, :] @ u
    g["m2_b2"][...] = dy.sum()
    du = dy[:, None] * v["m2_w2"]
    dpre = du * (1.0 - u * u)
    g["m2_w1"][...] = dpre.T @ cat
    g["m2_b1"][...] = dpre.sum(axis=0)
    dm = (dpre @ v["m2_w1"])[:, :H]
    g["m1_w2"][...] = dm.T @ a
    g["m1_b2"][...] = dm.sum(axis=0)
    dpre = (dm @ v["m1_w2"]) * (1.0 - a * a)
    g["m1_w1"][...] = dpre.T @ h_last
    g["m1_b1"][...] = dpre.sum(axis=0)
    dh_top = dpre @ v["m1_w1"]

    W = caches[0][0].shape[1]
    d_out = np.zeros((B, W, H), dtype=params.dtype)
    d_out[:, -1] = dh_top
    for layer in range(N_LAYERS - 1, -1, -1):
        seq, steps = caches[layer]
        w_ih, w_hh = v[f"w_ih{layer}"], v[f"w_hh{layer}"]
        dz_all = np.empty((B, W, 4 * H), dtype=params.dtype)
        dh_next = np.zeros((B, H), dtype=params.dtype)
        dc_next = np.zeros((B, H), dtype=params.dtype)
        gw_hh = g[f"w_hh{layer}"]
        for t in range(W - 1, -1, -1):
            i, f, o, gg, c_prev, tc, h_prev = steps[t]
            dh = d_out[:, t] + dh_next
            do = dh * tc
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dz = dz_all[:, t]
            dz[:, :H] = dc * gg * i * (1.0 - i)
            dz[:, H : 2 * H] = dc * c_prev * f * (1.0 - f)
            dz[:, 2 * H : 3 * H] = do * o * (1.0 - o)
            dz[:, 3 * H :] = dc * i * (1.0 - gg * gg)
            dc_next = dc * f
            gw_hh += dz.T @ h_prev
            dh_next = dz @ w_hh
        flat_dz = dz_all.reshape(B * W, 4 * H)
        g[f"w_ih{layer}"][...] = flat_dz.T @ seq.reshape(B * W, -1)
        g[f"b{layer}"][...] = flat_dz.sum(axis=0)
        if layer > 0:
            d_out = dz_all @ w_ih
    return loss, grad


def train(dataset, cfg=None, seed=0, log=None):
    """Fit LSTM-P by Adam on the elevation MSE with per-epoch learning-rate decay."""
    cfg = cfg or TrainConfig()
    if len(dataset) == 0:
        raise InvalidInputError("training set is empty")
    if dataset.windows.shape[1] != cfg.window:
        raise ConfigurationError(
            f"training windows hold {dataset.windows.shape[1]} points, config says {cfg.window}"
        )
    dtype = np.dtype(cfg.dtype)
    rng = np.random.default_rng(seed)
    params = init_params(cfg.hidden, rng, dtype)
    m = np.zeros_like(params)
    s = np.zeros_like(params)
    windows = dataset.windows.astype(dtype)
    feats = dataset.feats.astype(dtype)
    prev = dataset.prev_theta
    target = dataset.target
    n = len(dataset)
    baseline = mse_loss(prev, target)
    initial = _dataset_loss(params, cfg.hidden, windows, feats, prev, target, cfg.batch_size)
    losses = []
    step = 0
    lr = cfg.learning_rate
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grad = loss_and_grad(params, cfg.hidden, windows[idx], feats[idx], prev[idx], target[idx])
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            total += loss * idx.size
            step += 1
            m = cfg.beta1 * m + (1 - cfg.beta1) * grad
            s = cfg.beta2 * s + (1 - cfg.beta2) * grad * grad
            m_hat = m / (1 - cfg.beta1**step)
            s_hat = s / (1 - cfg.beta2**step)
            params = params - (lr * m_hat / (np.sqrt(s_hat) + cfg.eps)).astype(dtype)
        losses.append(total / n)
        if log is not None:
            log(epoch, losses[-1], lr)
        lr *= cfg.decay
    weights = LstmWeights(cfg.hidden, cfg.window, params.astype(np.float32))
    return TrainResult(weights, losses, baseline, initial)


def _dataset_loss(params, H, windows, feats, prev, target, batch):
    preds = np.empty(target.shape[0])
    for start in range(0, target.shape[0], batch):
        sl = slice(start, start + batch)
        preds[sl] = prev[sl] + OUTPUT_SCALE * forward(params, H, windows[sl], feats[sl])
    return mse_loss(preds, target)


def evaluate_loss(weights, dataset, batch=1024):
    """Training-path MSE of ``weights`` on ``dataset``."""
    return _dataset_loss(
        weights.params.astype(np.float32), weights.hidden, dataset.windows.astype(np.float32),
        dataset.feats.astype(np.float32), dataset.prev_theta, dataset.target, batch,
    )
