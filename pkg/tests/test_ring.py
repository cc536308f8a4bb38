import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brelu_mpc.ring import (ODD64, RING64, FieldP, FixedPointCodec, FixedPointOverflowError, OddRing, Ring64,
                            Z2k, ZOdd, Zp, bit_decompose, decode_fixed, drelu_plain, encode_fixed, msb,
                            recompose)

u64 = st.integers(0, 2**64 - 1)
odd = st.integers(0, ODD64 - 1)
fp = st.integers(0, 66)


def test_ring64_wraps():
    assert (Ring64(2**64 - 1) + Ring64(1)).value == 0


def test_odd_ring_reduces():
    assert (OddRing(2**64 - 2) + OddRing(3)).value == 2


def test_field_add():
    assert (FieldP(66) + FieldP(2)).value == 1


def test_field_rejects_composite():
    with pytest.raises(ValueError):
        FieldP(1, p=65)


@given(u64, u64, u64)
def test_ring64_laws(a, b, c):
    A, B, C = Ring64(a), Ring64(b), Ring64(c)
    assert (A + B) + C == A + (B + C)
    assert A * B == B * A
    assert A * (B + C) == A * B + A * C
    assert A + Ring64(0) == A and A * Ring64(1) == A
    assert A + (-A) == Ring64(0)


@given(odd, odd, odd)
def test_odd_ring_laws(a, b, c):
    A, B, C = OddRing(a), OddRing(b), OddRing(c)
    assert (A + B) + C == A + (B + C)
    assert A * (B + C) == A * B + A * C
    assert A - A == OddRing(0)
    assert A.value != 2**64 - 1


@given(fp, fp, fp)
def test_field_laws(a, b, c):
    A, B, C = FieldP(a), FieldP(b), FieldP(c)
    assert A * (B + C) == A * B + A * C
    assert (A + B) - B == A


@settings(max_examples=50)
@given(st.lists(odd, min_size=1, max_size=20), st.lists(odd, min_size=1, max_size=20))
def test_vector_odd_matches_scalar(xs, ys):
    n = min(len(xs), len(ys))
    xs, ys = xs[:n], ys[:n]
    dom = ZOdd(64)
    got = dom.add(np.array(xs, dtype=np.uint64), np.array(ys, dtype=np.uint64))
    assert got.tolist() == [(OddRing(x) + OddRing(y)).value for x, y in zip(xs, ys)]
    got = dom.sub(np.array(xs, dtype=np.uint64), np.array(ys, dtype=np.uint64))
    assert got.tolist() == [(OddRing(x) - OddRing(y)).value for x, y in zip(xs, ys)]


@given(st.integers(2, 63), st.lists(st.integers(0, 2**63), min_size=1, max_size=10))
def test_small_odd_ring(bits, xs):
    dom = ZOdd(bits)
    a = dom.reduce(np.array([x % dom.modulus for x in xs], dtype=np.uint64))
    b = a[::-1]
    assert dom.add(a, b).tolist() == [(int(x) + int(y)) % dom.modulus for x, y in zip(a, b)]


def test_z2k_wrap_detection():
    r = Z2k(8)
    assert r.wrap(np.uint64(200), np.uint64(100)) == 1
    assert r.wrap(np.uint64(100), np.uint64(100)) == 0
    assert RING64.wrap(np.uint64(2**63), np.uint64(2**63)) == 1


def test_field_vector_ops():
    f = Zp(67)
    assert f.add(66, 2) == 1
    assert f.mul(66, 66) == 1
    assert f.neg(0) == 0


def test_encode_examples():
    assert int(encode_fixed(1.5, 12)) == 6144
    assert int(encode_fixed(-1.5, 12)) == 2**64 - 6144
    assert int(encode_fixed(0.0, 16)) == 0


def test_encode_overflow():
    with pytest.raises(FixedPointOverflowError):
        encode_fixed(2.0**47, 16)
    with pytest.raises(FixedPointOverflowError):
        encode_fixed(float("nan"), 16)


@given(st.floats(-2.0**40, 2.0**40, allow_nan=False), st.integers(0, 20))
def test_decode_within_half_lsb(x, f):
    codec = FixedPointCodec(f)
    assert abs(codec.decode(codec.encode(x)) - x) <= 2.0 ** -(f + 1)


@given(st.floats(-2.0**40, 2.0**40, allow_nan=False))
def test_sign_matches_drelu(x):
    enc = encode_fixed(x, 16)
    assert (decode_fixed(enc, 16) >= 0) == bool(drelu_plain(enc))


def test_bit_decompose_examples():
    assert bit_decompose(5, 3).tolist() == [1, 0, 1]
    assert bit_decompose(0, 8).tolist() == [0] * 8


def test_bit_roundtrip_random():
    x = np.random.default_rng(0).integers(0, 2**64, 10_000, dtype=np.uint64)
    assert np.array_equal(recompose(bit_decompose(x, 64)), x)


@given(u64, st.integers(1, 64))
def test_bit_roundtrip_widths(x, n):
    assert int(recompose(bit_decompose(x, n))) == x % (1 << n)


def test_drelu_examples():
    assert drelu_plain(encode_fixed(2.5)) == 1
    assert drelu_plain(encode_fixed(-0.1)) == 0
    assert drelu_plain(np.uint64(0)) == 1
    assert msb(np.uint64(2**63)) == 1
