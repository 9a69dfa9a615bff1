import csv
import json

import numpy as np
import pytest

from lidarpcc.cli import main
from lidarpcc.codec import build_trees
from lidarpcc.container import Bitstream
from lidarpcc.geometry import cartesian_to_spherical
from lidarpcc.io import read_cloud, write_kitti_bin
from lidarpcc.synthetic import synthetic_scan

TOL = 1e-9


@pytest.fixture(scope="module")
def scene(tmp_path_factory):
    scan = synthetic_scan(n_lasers=2, phi_ar=7.0, elevation_range=(-8.0, 0.0), seed=2)
    path = tmp_path_factory.mktemp("cli") / "scene.bin"
    write_kitti_bin(scan.points, path)
    return path


def _wrap(d):
    return (d + 180.0) % 360.0 - 180.0


def test_encode_decode_eval_r07(scene, tmp_path, capsys):
    bits, out = tmp_path / "s.lpcm", tmp_path / "s.ply"
    assert main(["encode", str(scene), str(bits), "--rate-point", "r07"]) == 0
    text = capsys.readouterr().out
    assert "bpip" in text and "theta" in text
    assert main(["decode", str(bits), str(out)]) == 0
    assert main(["eval", str(scene), str(out), "--bitstream", str(bits)]) == 0
    row = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert np.isfinite(row["d1_psnr"]) and row["bpip"] > 0

    ref = read_cloud(scene)
    order = np.concatenate([t.origin_order for t in build_trees(ref).trees])
    a = cartesian_to_spherical(ref[order])
    b = cartesian_to_spherical(read_cloud(out))
    bs = Bitstream.from_bytes(bits.read_bytes())
    assert (bs.q_phi, bs.q_theta, bs.q_r) == (8, 21, 130)
    assert np.all(np.abs(b.r - a.r) <= 1 / 260 + TOL)
    assert np.all(np.abs(b.theta - a.theta) <= 1 / 42 + TOL)
    assert np.all(np.abs(_wrap(b.phi - a.phi)) <= bs.phi_ar / 16 + TOL)


def test_truncated_bitstream_exits_nonzero(scene, tmp_path, capsys):
    bits = tmp_path / "t.lpcm"
    main(["encode", str(scene), str(bits), "--qp", "1,2,4,32"])
    data = bits.read_bytes()
    bits.write_bytes(data[: len(data) // 2])
    assert main(["decode", str(bits), str(tmp_path / "t.ply")]) == 5
    assert "truncated" in capsys.readouterr().err
    assert not (tmp_path / "t.ply").exists()


def test_rd_curve_rates_increase(scene, tmp_path):
    out = tmp_path / "rd.csv"
    assert main(["rd-curve", str(scene), "-o", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert [r["rate"] for r in rows] == [f"r0{k}" for k in range(1, 8)]
    bpip = [float(r["bpip"]) for r in rows]
    assert all(a < b for a, b in zip(bpip, bpip[1:]))


def test_exit_codes(scene, tmp_path):
    bits = tmp_path / "x.lpcm"
    assert main(["encode", str(tmp_path / "missing.bin"), str(bits)]) == 2
    bad = tmp_path / "bad.bin"
    bad.write_bytes(bytes(10))
    assert main(["encode", str(bad), str(bits)]) == 3
    assert main(["encode", str(scene), str(bits), "--predictor", "lstm"]) == 4
    assert main(["encode", str(scene), str(bits), "--qp", "1,1,1"]) == 4
    junk = tmp_path / "junk.lpcm"
    junk.write_bytes(b"XXXX" + bytes(40))
    assert main(["decode", str(junk), str(tmp_path / "j.ply")]) == 3
    assert main(["optimize-qp", str(scene), "--target-rate", "0", "--iterations", "1", "--population", "4"]) == 7


def test_lstm_round_trip_via_cli(scene, tmp_path, capsys):
    w = tmp_path / "w.lpcw"
    assert main(["train", str(scene), "-o", str(w), "--epochs", "1", "--window", "3", "--hidden", "2"]) == 0
    bits = tmp_path / "l.lpcm"
    assert main(["encode", str(scene), str(bits), "--qp", "1,2,8,32", "--predictor", "lstm", "--weights", str(w)]) == 0
    assert main(["decode", str(bits), str(tmp_path / "l.ply")]) == 4
    assert main(["decode", str(bits), str(tmp_path / "l.ply"), "--weights", str(w)]) == 0
    other = tmp_path / "o.lpcw"
    main(["train", str(scene), "-o", str(other), "--epochs", "1", "--window", "3", "--hidden", "2", "--seed", "5"])
    assert main(["decode", str(bits), str(tmp_path / "l.ply"), "--weights", str(other)]) == 5


def test_optimize_qp_writes_log(scene, tmp_path, capsys):
    log = tmp_path / "de.csv"
    assert main(["optimize-qp", str(scene), "--target-rate", "40", "--iterations", "3", "--log", str(log)]) == 0
    assert "q* =" in capsys.readouterr().out
    bits = tmp_path / "d.lpcm"
    assert main(["encode", str(scene), str(bits), "--de-result", str(log)]) == 0
