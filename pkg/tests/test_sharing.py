import numpy as np
import pytest
from scipy.stats import chisquare

from brelu_mpc.ledger import CommLedger
from brelu_mpc.ring import RING64, ZOdd
from brelu_mpc.sharing import (PrfStream, SeedBook, ShareMismatchError, gen_triples, parse_seed, reconstruct,
                               share)


def test_share_roundtrip_many():
    rng = np.random.default_rng(0)
    for i in range(100):
        x = rng.integers(0, 2**64, (10, 10), dtype=np.uint64)
        a, b = share(x, seed=i)
        assert np.array_equal(reconstruct(a, b), x)


def test_share_of_zero_is_negation():
    a, b = share(np.zeros(5, dtype=np.uint64), seed=3)
    assert np.array_equal(b.data, RING64.neg(a.data))


def test_share_deterministic():
    x = np.arange(10, dtype=np.uint64)
    assert np.array_equal(share(x, 9)[0].data, share(x, 9)[0].data)
    assert not np.array_equal(share(x, 9)[0].data, share(x, 10)[0].data)


def test_reconstruct_examples():
    assert reconstruct(np.uint64(3), np.uint64(4)) == 7
    assert reconstruct(np.uint64(2**64 - 1), np.uint64(2)) == 1


def test_reconstruct_mismatch():
    with pytest.raises(ShareMismatchError):
        reconstruct(np.zeros(3, np.uint64), np.zeros(4, np.uint64))
    a, _ = share(np.zeros(2, np.uint64), 1)
    b, _ = share(np.zeros(2, np.uint64), 1, domain=ZOdd(64))
    with pytest.raises(ShareMismatchError):
        reconstruct(a, b)


def test_share_uniformity_chi_square():
    # P0's share of a constant secret, bucketed by its top byte
    a, _ = share(np.full(200_000, 42, dtype=np.uint64), seed=11)
    counts = np.bincount((a.data >> np.uint64(56)).astype(np.int64), minlength=256)
    assert chisquare(counts).pvalue > 1e-3


def test_triple_scalar():
    led = CommLedger()
    t0, t1 = gen_triples((1,), (1,), "elementwise", seed=5, ledger=led)
    a = reconstruct(t0.a, t1.a)
    b = reconstruct(t0.b, t1.b)
    assert np.array_equal(reconstruct(t0.c, t1.c), RING64.mul(a, b))
    assert led.payload(phase="offline") == 8


def test_triple_matmul():
    t0, t1 = gen_triples((2, 2), (2, 2), "matmul", seed=5)
    a, b = reconstruct(t0.a, t1.a), reconstruct(t0.b, t1.b)
    expect = np.array([[sum(int(a[i, k]) * int(b[k, j]) for k in range(2)) % 2**64 for j in range(2)]
                       for i in range(2)], dtype=np.uint64)
    assert np.array_equal(reconstruct(t0.c, t1.c), expect)


def test_triple_deterministic():
    x = gen_triples((3,), (3,), seed=1, index=4)
    y = gen_triples((3,), (3,), seed=1, index=4)
    assert all(np.array_equal(getattr(x[0], f), getattr(y[0], f)) for f in "abc")


def test_triple_shape_errors():
    with pytest.raises(ValueError):
        gen_triples((2, 3), (2, 3), "matmul")
    with pytest.raises(ValueError):
        gen_triples((2,), (3,), "elementwise")


def test_seed_book_limits_pairs():
    book = SeedBook.from_master("aa", 0)
    with pytest.raises(KeyError):
        book.stream("12", "x")
    s0 = SeedBook.from_master("aa", 0).stream("01", "p").words(4)
    s1 = SeedBook.from_master("aa", 1).stream("01", "p").words(4)
    assert np.array_equal(s0, s1)


def test_prf_streams_independent_by_label():
    assert not np.array_equal(PrfStream(b"k", "a").words(8), PrfStream(b"k", "b").words(8))


def test_parse_seed_forms():
    assert parse_seed("ff") == b"\0" * 31 + b"\xff"
    assert len(parse_seed(7)) == 32
    with pytest.raises(ValueError):
        parse_seed(b"x" * 33)
