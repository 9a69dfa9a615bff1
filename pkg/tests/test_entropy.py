import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lidarpcc.entropy import (
    BITS_FLOOR,
    LAPLACE_B_FLOOR,
    ArithmeticDecoder,
    ArithmeticEncoder,
    BinaryContext,
    IntContexts,
    LaplaceParams,
    decode_bits,
    decode_ints,
    encode_bits,
    encode_ints,
    fit_laplace,
    laplace_bits,
)
from lidarpcc.errors import CorruptionError, InvalidInputError, TruncationError
from lidarpcc.kernels import rangecoder as rc


def h2(p):
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


def test_random_bits_round_trip(rng):
    bits = rng.integers(0, 2, 10_000)
    assert np.array_equal(decode_bits(encode_bits(bits), bits.size), bits)


def test_all_zero_bits_adapt():
    n = 20_000
    assert 8 * len(encode_bits(np.zeros(n, dtype=np.int64))) < n / 50


def bernoulli_stream(n, p, seed):
    """Shuffled stream holding exactly round(n*p) ones."""
    bits = np.zeros(n, dtype=np.int64)
    bits[: round(n * p)] = 1
    np.random.default_rng(seed).shuffle(bits)
    return bits


def test_bernoulli_efficiency():
    n, p = 100_000, 0.1
    assert h2(0.1) == pytest.approx(0.4690, abs=1e-4)
    assert 8 * len(encode_bits(bernoulli_stream(n, p, 0))) <= n * h2(p) * 1.01 + 64


def test_iid_draws_near_their_empirical_entropy():
    n = 100_000
    for p in (0.05, 0.3):
        bits = (np.random.default_rng(8).random(n) < p).astype(np.int64)
        assert 8 * len(encode_bits(bits)) <= n * h2(bits.mean()) * 1.01 + 64


def test_bit_level_api_matches_contexts(rng):
    bits = rng.random(3000) < 0.2
    enc, ctx = ArithmeticEncoder(), BinaryContext()
    for b in bits:
        enc.encode_bit(ctx, b)
    data = enc.finish()
    assert ctx.p1 < 0.5
    dec, ctx = ArithmeticDecoder(data), BinaryContext()
    assert [dec.decode_bit(ctx) for _ in bits] == [int(b) for b in bits]


def test_bypass_and_ints_interleaved(rng):
    vals = rng.integers(-40, 40, 500)
    enc, ictx, bctx = ArithmeticEncoder(), IntContexts(), BinaryContext()
    for v in vals:
        enc.encode_int(v, ictx)
        enc.encode_bypass(v & 1)
        enc.encode_bit(bctx, v > 0)
    dec, ictx, bctx = ArithmeticDecoder(enc.finish()), IntContexts(), BinaryContext()
    for v in vals:
        assert dec.decode_int(ictx) == v
        assert dec.decode_bypass() == (v & 1)
        assert dec.decode_bit(bctx) == int(v > 0)


def test_int_examples():
    assert decode_ints(encode_ints([0]), 1).tolist() == [0]
    seq = [-3, 0, 7, -1]
    assert decode_ints(encode_ints(seq), 4).tolist() == seq


@given(st.lists(st.integers(-(2**31) + 1, 2**31 - 1), max_size=200))
def test_int_round_trip_property(values):
    assert decode_ints(encode_ints(values), len(values)).tolist() == values


def test_int_limits():
    with pytest.raises(InvalidInputError):
        encode_ints([2**31])
    with pytest.raises(InvalidInputError):
        ArithmeticEncoder().encode_int(-(2**31), IntContexts())


def test_geometric_near_empirical_entropy():
    rng = np.random.default_rng(3)
    n = 10_000
    mag = rng.geometric(0.8, n) - 1
    vals = np.where(rng.random(n) < 0.5, -mag, mag)
    _, counts = np.unique(vals, return_counts=True)
    h = -(counts / n * np.log2(counts / n)).sum() * n
    bits = 8 * len(encode_ints(vals))
    assert abs(bits - h) <= 0.05 * h


def test_truncated_int_stream():
    vals = np.random.default_rng(1).integers(-1000, 1000, 2000)
    data = encode_ints(vals)
    with pytest.raises(TruncationError):
        decode_ints(data[: len(data) // 3], vals.size)


def test_overlong_escape_is_corruption():
    # full unary prefix, then more escape ones than any 31-bit value needs
    est, buf = rc.new_encoder_state(), np.zeros(256, dtype=np.uint8)
    ctx = rc.new_contexts(rc.N_INT_CTX)
    for i in range(rc.N_PREFIX_CTX):
        rc.enc_bit(est, buf, ctx, i, 1)
    for _ in range(40):
        rc.enc_bypass(est, buf, 1)
    rc.enc_finish(est, buf)
    with pytest.raises(CorruptionError, match="prefix"):
        decode_ints(bytes(buf[: est[4]]), 1)


def test_laplace_closed_form():
    got = laplace_bits(0.0, LaplaceParams(0.0, 1.0), 1.0)
    assert got == pytest.approx(-math.log2(1 - math.exp(-0.5)), abs=1e-4)
    assert got == pytest.approx(1.3457, abs=1e-4)


def test_laplace_flat_density_costs_more():
    bits = [laplace_bits(5.0, LaplaceParams(5.0, b), 1.0) for b in (1.0, 10.0, 1e3, 1e6)]
    assert all(a < b for a, b in zip(bits, bits[1:]))
    assert bits[-1] > 20


def test_laplace_floor_and_far_tail():
    assert laplace_bits(0.0, LaplaceParams(0.0, 1e-9), 1.0) == BITS_FLOOR
    far = laplace_bits(1e4, LaplaceParams(0.0, 1.0), 1.0)
    assert math.isfinite(far) and far > 1e4


def test_laplace_total_matches_discrete_entropy():
    rng = np.random.default_rng(4)
    b = 3.0
    x = np.round(rng.laplace(0.0, b, 200_000))
    total = laplace_bits(x, LaplaceParams(0.0, b), 1.0).sum()
    # exact entropy of the rounded Laplace law
    k = np.arange(-400, 401)
    pm = 2 ** (-laplace_bits(k.astype(float), LaplaceParams(0.0, b), 1.0))
    h = -(pm * np.log2(pm)).sum()
    assert total / x.size == pytest.approx(h, rel=0.02)


def test_laplace_fit_examples():
    p = fit_laplace([4.0] * 10)
    assert p.mu == 4.0 and p.b == LAPLACE_B_FLOOR
    p = fit_laplace([-1.0, 0.0, 1.0])
    assert p.mu == 0.0 and p.b == pytest.approx(2 / 3)
    x = np.random.default_rng(6).laplace(3.0, 2.0, 100_000)
    p = fit_laplace(x)
    assert p.mu == pytest.approx(3.0, rel=0.02)
    assert p.b == pytest.approx(2.0, rel=0.02)


def test_laplace_errors():
    with pytest.raises(InvalidInputError):
        fit_laplace([])
    with pytest.raises(InvalidInputError):
        LaplaceParams(0.0, 0.0)
    with pytest.raises(InvalidInputError):
        laplace_bits(0.0, LaplaceParams(0.0, 1.0), 0.0)
