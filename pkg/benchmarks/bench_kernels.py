"""Time the hot kernels with numba and with the pure-Python fallback.

    python benchmarks/bench_kernels.py            # both backends
    python benchmarks/bench_kernels.py --child    # current backend only

The fallback runs in a subprocess with LIDARPCC_DISABLE_JIT=1 because the
switch is read at import time.
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def run(scale):
    from lidarpcc import backend_name
    from lidarpcc.kernels import lstm, quant, rangecoder
    from lidarpcc.kernels import laplace_coder as lc

    rng = np.random.default_rng(0)
    n = int(20000 * scale)
    ints = (rng.geometric(0.3, n) - rng.geometric(0.3, n)).astype(np.int64)
    coded = rangecoder.encode_int_array(ints)
    values = np.cumsum(rng.normal(0, 0.05, n)) + 20.0
    q = np.round(values / 0.05).astype(np.int64)
    e = lc.residuals(q, n)
    ref = np.arange(n, dtype=np.int64) - 1800
    H, W, B = 16, 16, max(int(64 * scale), 1)
    params = rng.normal(0, 0.1, lstm.param_count(H))
    windows = rng.normal(0, 0.5, (B, W, 4))
    feats = rng.normal(0, 0.5, (B, 4))

    cases = {
        "encode_ints": lambda: rangecoder.encode_int_array(ints),
        "decode_ints": lambda: rangecoder.decode_int_array(coded, n),
        "dpcm_encode": lambda: quant.dpcm_encode(values, 64),
        "matrix_encode": lambda: lc.encode_residuals(e, 2.0, ref),
        "lstm_predict": lambda: lstm.predict_batch(params, H, 3, windows, feats),
    }
    out = {"backend": backend_name(), "n": n, "lstm_batch": B}
    for name, fn in cases.items():
        fn()  # warm-up / compile
        out[name] = _best(fn, 3)
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--child", action="store_true")
    ap.add_argument("--scale", type=float, default=1.0)
    args = ap.parse_args()
    if args.child:
        print(json.dumps(run(args.scale)))
        return
    jit = run(args.scale)
    env = dict(os.environ, LIDARPCC_DISABLE_JIT="1")
    # the pure-Python path is slow; shrink its workload and rescale
    fallback_scale = args.scale / 20
    proc = subprocess.run(
        [sys.executable, __file__, "--child", "--scale", str(fallback_scale)],
        env=env, capture_output=True, text=True, check=True,
    )
    py = json.loads(proc.stdout)
    print(f"{'kernel':<16}{'numba s':>12}{'python s':>12}{'speedup':>10}")
    for name in ("encode_ints", "decode_ints", "dpcm_encode", "matrix_encode", "lstm_predict"):
        size_ratio = (jit["lstm_batch"] / py["lstm_batch"]) if name == "lstm_predict" else jit["n"] / py["n"]
        py_t = py[name] * size_ratio
        print(f"{name:<16}{jit[name]:>12.5f}{py_t:>12.5f}{py_t / jit[name]:>9.0f}x")


if __name__ == "__main__":
    main()
