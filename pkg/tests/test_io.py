import struct

import numpy as np
import pytest

from lidarpcc.errors import FormatError
from lidarpcc.io import read_cloud, read_kitti_bin, read_ply, write_kitti_bin, write_ply


def test_kitti_record_count(tmp_path):
    p = tmp_path / "a.bin"
    p.write_bytes(bytes(32))
    assert read_kitti_bin(p).shape == (2, 3)


def test_kitti_hand_written_point(tmp_path):
    p = tmp_path / "one.bin"
    p.write_bytes(struct.pack("<4f", 1.0, 2.0, 3.0, 0.5))
    assert read_kitti_bin(p).tolist() == [[1.0, 2.0, 3.0]]


def test_kitti_round_trip(tmp_path):
    pts = np.random.default_rng(0).uniform(-80, 80, (10_000, 3)).astype(np.float32)
    p = tmp_path / "r.bin"
    write_kitti_bin(pts, p, reflectance=np.ones(len(pts)))
    back = read_kitti_bin(p)
    assert back.astype(np.float32).tobytes() == pts.tobytes()


def test_kitti_bad_size(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(bytes(20))
    with pytest.raises(FormatError):
        read_kitti_bin(p)


def test_minimal_ascii_ply(tmp_path):
    p = tmp_path / "m.ply"
    p.write_text("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n"
                 "property float z\nproperty uchar intensity\nend_header\n1.5 -2 3 200\n")
    assert read_ply(p).tolist() == [[1.5, -2.0, 3.0]]


def test_binary_ply_round_trip(tmp_path):
    pts = np.random.default_rng(1).normal(0, 30, (500, 3))
    p = tmp_path / "b.ply"
    write_ply(pts, p)
    assert read_ply(p).tobytes() == pts.tobytes()


def test_ascii_and_binary_agree(tmp_path):
    pts = np.random.default_rng(2).uniform(-100, 100, (100_000, 3)).astype(np.float32)
    a, b = tmp_path / "a.ply", tmp_path / "b.ply"
    write_ply(pts, a, binary=False, dtype="<f4")
    write_ply(pts, b, binary=True, dtype="<f4")
    np.testing.assert_array_equal(read_ply(a), read_ply(b))
    np.testing.assert_array_equal(read_ply(b), pts.astype(np.float64))


def test_ply_missing_properties(tmp_path):
    p = tmp_path / "noz.ply"
    p.write_text("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n1 2\n")
    with pytest.raises(FormatError, match="z"):
        read_ply(p)
    q = tmp_path / "face.ply"
    q.write_text("ply\nformat ascii 1.0\nelement face 0\nproperty list uchar int vertex_indices\nend_header\n")
    with pytest.raises(FormatError, match="vertex"):
        read_ply(q)
    r = tmp_path / "junk.ply"
    r.write_bytes(b"not a ply file")
    with pytest.raises(FormatError):
        read_ply(r)


def test_read_cloud_dispatch(tmp_path):
    p = tmp_path / "s.bin"
    write_kitti_bin(np.array([[1.0, 2.0, 4.0]]), p)
    assert read_cloud(p, scale=0.5).tolist() == [[0.5, 1.0, 2.0]]
    with pytest.raises(FormatError):
        read_cloud(tmp_path / "x.las")
