"""Command-line interface: ``lidarpcc {encode,decode,eval,rd-curve,optimize-qp,train}``."""
import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from .codec import decode_bytes, encode_points, mode_name, resolve_phi_ar
from .errors import ConfigurationError, FormatError, InfeasibleError, InvalidInputError, LpcError
from .geometry import LaserCalibration, chamfer_distance, d1_psnr, d2_psnr, default_peak
from .highrate import QpVector, training_set
from .io import atomic_write, read_cloud, write_cloud
from .lowrate import RdConfig
from .predictor import LstmPredictor, TrainConfig, TrainingSet, load_weights, save_weights, train
from .predtree import DEFAULT_THRESHOLD, build_trees_calibrated, build_trees_threshold
from .qpselect import RATE_POINTS, DeConfig, FitnessEvaluator, default_qp, run_de

log = logging.getLogger("lidarpcc")
RD_FIELDS = ("cloud", "rate", "bpip", "d1_psnr", "d2_psnr", "cd", "encode_s", "decode_s")


def _calib(args):
    return LaserCalibration.from_file(args.calib) if getattr(args, "calib", None) else None


def _weights(args):
    return load_weights(args.weights) if getattr(args, "weights", None) else None


def _de_result_qp(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise FormatError(f"{path}: empty convergence log")
    last = rows[-1]
    try:
        genes = [int(last[k]) for k in ("qdelta", "qphi", "qtheta", "qr")]
    except (KeyError, ValueError):
        raise FormatError(f"{path}: not a convergence log") from None
    if not math.isfinite(float(last["best_fitness"])):
        raise InfeasibleError(f"{path}: the search found no feasible QP vector")
    return QpVector(*genes)


def _settings(args):
    """(qp, mode, rd config, predictor) from the encode-style flags."""
    sources = [x for x in (args.rate_point, args.qp, args.de_result) if x]
    if len(sources) > 1:
        raise ConfigurationError("give at most one of --rate-point, --qp, --de-result")
    rd = None
    if args.qp:
        qp, mode = QpVector.parse(args.qp), "high"
    elif args.de_result:
        qp, mode = _de_result_qp(args.de_result), "high"
    else:
        point = default_qp(args.rate_point or "r03")
        qp, mode, rd = point.qp, point.mode, point.rd
    mode = args.mode or mode
    if mode == "low":
        if args.step is not None or args.lam is not None:
            rd = RdConfig(args.lam or 0.6, args.step)
        elif rd is None:
            rd = RdConfig(step=1.0 / qp.q_r) if qp.q_r else RdConfig()
    elif qp.q_r is None:
        raise ConfigurationError("high-bitrate mode needs q_r; use --qp qd,qphi,qtheta,qr")
    predictor = None
    if args.predictor == "lstm":
        if mode != "high":
            raise ConfigurationError("LSTM-P is only available in the high-bitrate mode")
        if not args.weights:
            raise ConfigurationError("LSTM-P needs --weights")
        predictor = LstmPredictor(load_weights(args.weights))
    return qp, mode, rd, predictor


def cmd_encode(args):
    points = read_cloud(args.input, args.scale)
    qp, mode, rd, predictor = _settings(args)
    t0 = time.perf_counter()
    enc = encode_points(points, qp, mode, rd, predictor, _calib(args), args.phi_ar, args.threshold,
                        skip_bias=not args.bias, threads=args.threads)
    elapsed = time.perf_counter() - t0
    atomic_write(args.output, enc.data)
    bs = enc.bitstream
    print(f"mode {mode_name(bs)}  qp {qp.q_delta},{qp.q_phi},{qp.q_theta},{qp.q_r or '-'}  "
          f"phi_ar {bs.phi_ar:.6g}  points {enc.n_input}  trees {len(bs.trees)}")
    print(f"{'stream':<10}{'bits':>12}{'share':>9}")
    for name, (bits, share) in enc.breakdown().items():
        pct = f"{share:8.1f}%" if share is not None else ""
        print(f"{name:<10}{bits:>12d}{pct}")
    print(f"bpip {enc.bpip:.4f}  encode {elapsed:.2f}s")
    return 0


def cmd_decode(args):
    data = Path(args.bitstream).read_bytes()
    points, bs = decode_bytes(data, _weights(args), args.threads)
    write_cloud(points, args.output)
    print(f"decoded {points.shape[0]} points ({mode_name(bs)})")
    return 0


def rd_point(reference, decoded, bits=None, peak=None, label="custom", encode_s=math.nan, decode_s=math.nan):
    peak = peak or default_peak(reference)
    return {
        "rate": label,
        "bpip": bits / reference.shape[0] if bits is not None and reference.shape[0] else math.nan,
        "d1_psnr": d1_psnr(reference, decoded, peak),
        "d2_psnr": d2_psnr(reference, decoded, peak),
        "cd": chamfer_distance(reference, decoded),
        "encode_s": encode_s,
        "decode_s": decode_s,
    }


def cmd_eval(args):
    ref = read_cloud(args.reference, args.scale)
    dec = read_cloud(args.decoded, args.scale)
    bits = 8 * Path(args.bitstream).stat().st_size if args.bitstream else None
    row = rd_point(ref, dec, bits, args.peak)
    row["scale"] = args.scale
    if args.format == "json":
        print(json.dumps(row))
    else:
        w = csv.DictWriter(sys.stdout, fieldnames=list(row))
        w.writeheader()
        w.writerow(row)
    return 0


def cmd_rd_curve(args):
    weights = _weights(args)
    rows = []
    for path in args.inputs:
        points = read_cloud(path, args.scale)
        calib = _calib(args)
        for label in args.rate_points:
            point = default_qp(label)
            predictor = LstmPredictor(weights) if weights is not None and point.mode == "high" else None
            t0 = time.perf_counter()
            enc = encode_points(points, point.qp, point.mode, point.rd, predictor, calib, args.phi_ar,
                                args.threshold, threads=args.threads)
            t1 = time.perf_counter()
            dec, _ = decode_bytes(enc.data, weights, args.threads)
            t2 = time.perf_counter()
            row = rd_point(points, dec, 8 * len(enc.data), args.peak, label, t1 - t0, t2 - t1)
            rows.append({"cloud": str(path), **row})
            log.info("%s %s bpip %.3f d1 %.2f", path, label, row["bpip"], row["d1_psnr"])
    text = _csv_text(rows, RD_FIELDS)
    if args.output:
        atomic_write(args.output, text.encode())
    else:
        sys.stdout.write(text)
    return 0


def _csv_text(rows, fields):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, extrasaction="ignore")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def _tree_sets(paths, args):
    calib = _calib(args)
    out = []
    for p in paths:
        pts = read_cloud(p, args.scale)
        out.append(build_trees_calibrated(pts, calib) if calib else build_trees_threshold(pts, args.threshold))
    return out


def cmd_optimize_qp(args):
    trees = _tree_sets(args.clouds, args)
    phi_ar = args.phi_ar or float(np.median([resolve_phi_ar(t) for t in trees]))
    predictor = LstmPredictor(load_weights(args.weights)) if args.weights else None
    ev = FitnessEvaluator(trees, args.mode or "high", predictor, phi_ar, skip_bias=not args.bias)
    cfg = DeConfig(args.population, args.scale_factor, args.crossover, args.iterations, args.seed, args.target_rate)
    res = run_de(ev, cfg, workers=args.threads)
    if args.log:
        res.write_log(args.log)
    if not res.feasible:
        raise InfeasibleError(f"no QP vector met {args.target_rate} bits per point")
    b = res.best
    print(f"q* = {','.join(str(int(g)) for g in b.genes)}  fitness {b.fitness:.6g}  rate {b.rate:.4f}")
    return 0


def cmd_train(args):
    qp = QpVector.parse(args.qp)
    if qp.q_r is None:
        raise ConfigurationError("training needs a full high-mode QP vector")
    cfg = TrainConfig(args.epochs, args.batch_size, args.lr, args.decay, args.window, args.hidden)
    parts = []
    for ts in _tree_sets(args.clouds, args):
        parts.append(training_set(ts, qp, resolve_phi_ar(ts, args.phi_ar), cfg.window))
    data = TrainingSet.concat(parts)
    log.info("training on %d examples", len(data))
    res = train(data, cfg, args.seed, log=lambda e, loss, lr: log.info("epoch %d loss %.6g lr %.3g", e, loss, lr))
    save_weights(res.weights, args.output)
    print(f"baseline mse {res.baseline_loss:.6g}  final mse {res.epoch_losses[-1]:.6g}  "
          f"checksum {res.weights.checksum():016x}")
    return 0


def _add_common(p, encode_like=False):
    p.add_argument("--calib", help="laser calibration file")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD, metavar="DEG")
    p.add_argument("--phi-ar", type=float, metavar="DEG", help="angular resolution (estimated if omitted)")
    p.add_argument("--threads", type=int, default=1, metavar="N")
    p.add_argument("--scale", type=float, default=1.0, help="multiply input coordinates to get metres")
    if encode_like:
        p.add_argument("--mode", choices=("high", "low"))
        p.add_argument("--rate-point", choices=RATE_POINTS)
        p.add_argument("--qp", metavar="QD,QPHI,QTHETA,QR")
        p.add_argument("--de-result", metavar="CSV", help="take q* from a convergence log")
        p.add_argument("--predictor", choices=("delta", "lstm"), default="delta")
        p.add_argument("--weights", metavar="FILE")
        p.add_argument("--step", type=float, help="low mode radius step in metres")
        p.add_argument("--lambda", dest="lam", type=float, help="low mode rate-distortion weight")
        p.add_argument("--bias", action="store_true", help="code azimuth biases instead of skipping them")


def build_parser():
    ap = argparse.ArgumentParser(prog="lidarpcc", description="LiDAR point-cloud geometry codec")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="compress a .bin/.ply cloud")
    p.add_argument("input")
    p.add_argument("output")
    _add_common(p, encode_like=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decompress to .bin/.ply")
    p.add_argument("bitstream")
    p.add_argument("output")
    p.add_argument("--weights", metavar="FILE")
    p.add_argument("--threads", type=int, default=1, metavar="N")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="D1/D2 PSNR and Chamfer distance")
    p.add_argument("reference")
    p.add_argument("decoded")
    p.add_argument("--bitstream", help="report bits per input point of this file")
    p.add_argument("--peak", type=float, metavar="M")
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--format", choices=("csv", "json"), default="json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rd-curve", help="evaluate every rate point")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--output", "-o", metavar="CSV")
    p.add_argument("--rate-points", nargs="+", choices=RATE_POINTS, default=list(RATE_POINTS))
    p.add_argument("--weights", metavar="FILE")
    p.add_argument("--peak", type=float, metavar="M")
    _add_common(p)
    p.set_defaults(func=cmd_rd_curve)

    p = sub.add_parser("optimize-qp", help="differential-evolution QP search")
    p.add_argument("clouds", nargs="+")
    p.add_argument("--target-rate", type=float, required=True, metavar="BPIP")
    p.add_argument("--mode", choices=("high", "low"))
    p.add_argument("--weights", metavar="FILE")
    p.add_argument("--population", type=int, default=10)
    p.add_argument("--scale-factor", type=float, default=0.4)
    p.add_argument("--crossover", type=float, default=0.9)
    p.add_argument("--iterations", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log", metavar="CSV", help="write the convergence log here")
    p.add_argument("--bias", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_optimize_qp)

    p = sub.add_parser("train", help="fit LSTM-P weights")
    p.add_argument("clouds", nargs="+")
    p.add_argument("--output", "-o", required=True)
    p.add_argument("--qp", default="1,4,16,64", metavar="QD,QPHI,QTHETA,QR")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--decay", type=float, default=0.99)
    p.add_argument("--window", type=int, default=50)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    _add_common(p)
    p.set_defaults(func=cmd_train)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except LpcError as exc:
        print(f"lidarpcc: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"lidarpcc: {exc}", file=sys.stderr)
        return InvalidInputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
