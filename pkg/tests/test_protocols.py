from types import SimpleNamespace

import numpy as np
import pytest

from brelu_mpc.bits import approx_decisions, uniform_error_exact
from brelu_mpc.comm_model import brelu_bytes, conv2d_bytes, drelu_bytes, linear_bytes, relu_bytes
from brelu_mpc.nn import brelu_fixed, conv2d_float
from brelu_mpc.protocols import (IDENTITY, PatchSpec, ProtocolContext, ProtocolError, beaver_mul, compute_drelu,
                                 compute_msb, patch_layout, private_compare, secure_avgpool, secure_brelu,
                                 secure_conv2d, secure_linear, secure_relu, share_convert, truncate)
from brelu_mpc.ring import RING64, FixedPointCodec, Zp, ZOdd, bit_decompose, drelu_plain
from brelu_mpc.sharing import PartyId, PrfStream, SeedBook
from brelu_mpc.transport import InProcessHub

C16 = FixedPointCodec(16)


def enc(x, f=16):
    return FixedPointCodec(f).encode(x)


def field_bit_shares(ctx, x, nbits):
    """Shares over Z_p of the bits of public test values (P2 gets zeros)."""
    fld = Zp(ctx.prime)
    bits = bit_decompose(np.asarray(x, dtype=np.uint64), nbits)
    mask = PrfStream(b"bits", "t").ring(fld, bits.shape)
    return [mask, fld.sub(bits, mask), np.zeros_like(bits)][ctx.party]


# -- private compare


@pytest.mark.parametrize("x,r,beta,expect", [(5, 3, 0, 1), (3, 3, 0, 0), (2, 3, 0, 0), (5, 3, 1, 0), (3, 3, 1, 1)])
def test_private_compare_examples(three, x, r, beta, expect):
    tp = three()

    def fn(ctx):
        xb = field_bit_shares(ctx, [x], 8)
        return private_compare(ctx, xb, np.array([r], dtype=np.uint64),
                               None if ctx.party == 2 else np.array([beta]), nbits=8)

    out = tp.run(fn)
    assert int(RING64.add(out[0], out[1])[0]) == expect


def test_private_compare_exhaustive_small(three):
    nb = 5
    xs, rs = np.meshgrid(np.arange(1 << nb), np.arange(1 << nb))
    xs, rs = xs.ravel().astype(np.uint64), rs.ravel().astype(np.uint64)
    beta = np.random.default_rng(0).integers(0, 2, xs.size)
    tp = three()

    def fn(ctx):
        return private_compare(ctx, field_bit_shares(ctx, xs, nb), rs, None if ctx.party == 2 else beta, nbits=nb)

    out = tp.run(fn)
    expect = beta ^ (xs > rs).astype(np.int64)
    assert np.array_equal(RING64.add(out[0], out[1]).astype(np.int64), expect)
    led = tp.ledger()
    assert led.rounds(protocol="private_compare") == 2
    # one field byte per bit from each of P0 and P1, one ring word P2 -> P1
    assert led.payload(protocol="private_compare") == xs.size * (2 * nb + 8)


def test_private_compare_rejects_small_field():
    hub = InProcessHub(1)
    ctx = ProtocolContext(0, hub.endpoint(0), SeedBook.from_master("aa", 0), prime=67)
    with pytest.raises(ProtocolError):
        private_compare(ctx, None, np.zeros(1, np.uint64), np.zeros(1), nbits=65)


# -- share convert, MSB, DReLU


def test_share_convert_many(three):
    x = np.random.default_rng(3).integers(0, 2**64 - 1, 100_000, dtype=np.uint64)
    x[:4] = [0, 1, 2**64 - 2, enc(-1.5)]
    tp = three()
    out = tp.run(lambda ctx, a: share_convert(ctx, a), x)
    assert np.array_equal(ZOdd(64).add(out[0], out[1]), x)
    assert tp.ledger().rounds(protocol="share_convert") == 4


def test_msb_standalone(three):
    odd = ZOdd(64)
    x = odd.reduce(np.random.default_rng(4).integers(0, 2**64, 2000, dtype=np.uint64))
    x[:3] = [0, 2**63, 2**63 - 1]
    # share over the odd ring
    s0 = PrfStream(b"o", "s").ring(odd, x.shape)
    shares = [s0, odd.sub(x, s0), np.zeros_like(x)]
    tp = three()
    out = tp.run(lambda ctx: compute_msb(ctx, shares[ctx.party]))
    assert np.array_equal(RING64.add(out[0], out[1]), x >> np.uint64(63))
    assert tp.ledger().rounds(protocol="msb") == 5


@pytest.mark.parametrize("v,expect", [(2.5, 1), (-0.1, 0), (0.0, 1), (-1e6, 0), (1e6, 1)])
def test_drelu_examples(three, v, expect):
    out = three().open(lambda ctx, a: compute_drelu(ctx, a), enc([v]))
    assert int(out[0]) == expect


def test_drelu_random_exact(three):
    # the doubled operand is exact on |x| < 2^62
    x = np.random.default_rng(5).integers(-2**62 + 1, 2**62, 20_000, dtype=np.int64).view(np.uint64)
    x[:3] = np.array([0, 2**62 - 1, -(2**62) + 1], dtype=np.int64).view(np.uint64)
    tp = three()
    out = tp.open(lambda ctx, a: compute_drelu(ctx, a), x)
    assert np.array_equal(out, drelu_plain(x).astype(np.uint64))
    led = tp.ledger()
    assert led.rounds(protocol="drelu") == 8
    assert led.payload(protocol="drelu") == drelu_bytes(x.size)


def test_drelu_approx_matches_analyzer(three):
    # uniform non-negative 16-bit values, 5 low bits ignored
    km, kl = 46, 5
    x = np.random.default_rng(6).integers(0, 2**16, 100_000, dtype=np.uint64)
    tp = three(ignore_msb=km, ignore_lsb=kl)
    out = tp.open(lambda ctx, a: compute_drelu(ctx, a), x)
    s0 = PrfStream(b"test", "split/0").words(x.shape)
    assert np.array_equal(out, approx_decisions(x, s0, km, kl).astype(np.uint64))
    rate = float(np.mean(out != 1))
    bound = uniform_error_exact(16, kl)
    assert 0.5 * bound <= rate <= 2 * bound
    assert tp.ledger().payload(protocol="drelu") == drelu_bytes(x.size, 64 - km - kl)


def test_context_rejects_single_bit():
    hub = InProcessHub(1)
    with pytest.raises(ValueError):
        ProtocolContext(0, hub.endpoint(0), SeedBook.from_master("aa", 0), ignore_msb=40, ignore_lsb=23)


# -- multiplication, ReLU, bReLU


def test_beaver_elementwise(three):
    rng = np.random.default_rng(7)
    a, b = rng.integers(0, 2**64, 50, dtype=np.uint64), rng.integers(0, 2**64, 50, dtype=np.uint64)
    out = three().open(lambda ctx, x, y: beaver_mul(ctx, x, y), a, b)
    assert np.array_equal(out, RING64.mul(a, b))


@pytest.mark.parametrize("v,expect", [(3.0, 3.0), (-3.0, 0.0), (0.0, 0.0)])
def test_relu_examples(three, v, expect):
    out = three().open(lambda ctx, a: secure_relu(ctx, a, layer=0), enc([v]))
    assert C16.decode(out)[0] == expect


def test_relu_ledger(three):
    x = enc(np.random.default_rng(8).normal(size=(2, 3, 4, 4)))
    tp = three()
    out = tp.open(lambda ctx, a: secure_relu(ctx, a, layer=0), x)
    assert np.array_equal(out, np.where(x.view(np.int64) >= 0, x, 0))
    led = tp.ledger()
    assert led.rounds(0) == 10
    assert led.payload(0, "drelu") == drelu_bytes(x.size)
    assert led.payload(0, "relu") == relu_bytes(x.size)


def test_brelu_6x6_2x3_uses_six_decisions(three):
    x = enc(np.random.default_rng(9).normal(size=(1, 1, 6, 6)))
    tp = three()
    out = tp.open(lambda ctx, a: secure_brelu(ctx, a, [PatchSpec(2, 3)], layer=0), x)
    assert np.array_equal(out, brelu_fixed(x, [PatchSpec(2, 3)]))
    assert tp.ctxs[0].drelu_counts == {0: 6}
    led = tp.ledger()
    assert led.rounds(0) == 10
    assert led.payload(0, "pdrelu") == drelu_bytes(6)
    assert led.payload(0, "brelu") == brelu_bytes(36, 6)


def test_brelu_all_positive_is_identity(three):
    x = enc(np.random.default_rng(10).uniform(0.1, 2.0, size=(2, 2, 5, 5)))
    out = three().open(lambda ctx, a: secure_brelu(ctx, a, [PatchSpec(2, 2), PatchSpec(3, 1)]), x)
    assert np.array_equal(out, x)


def test_brelu_mixed_plan_matches_oracle(three):
    patches = [PatchSpec(2, 2), IDENTITY, PatchSpec(1, 1), PatchSpec(3, 3)]
    x = enc(np.random.default_rng(11).normal(size=(3, 4, 8, 8)))
    tp = three()
    out = tp.open(lambda ctx, a: secure_brelu(ctx, a, patches, layer=2), x)
    assert np.array_equal(out, brelu_fixed(x, patches))
    _, _, n_patch = patch_layout(x.shape, patches)
    assert n_patch == 3 * (16 + 64 + 9)
    assert tp.ctxs[1].drelu_counts == {2: n_patch}


def test_brelu_all_unit_uses_relu_tags(three):
    x = enc(np.random.default_rng(12).normal(size=(1, 2, 3, 3)))
    tp = three()
    tp.open(lambda ctx, a: secure_brelu(ctx, a, [PatchSpec(1, 1), IDENTITY], layer=0), x)
    led = tp.ledger()
    assert led.payload(0, "drelu") == drelu_bytes(9)
    assert led.payload(0, "pdrelu") == 0


# -- linear layers, truncation, pooling


def test_conv_scalar(three):
    x, w = enc(np.array([[[[1.5]]]])), enc(np.array([[[[2.0]]]]))
    out = three().open(lambda ctx, a, b: secure_conv2d(ctx, a, b), x, w)
    assert abs(C16.decode(out)[0, 0, 0, 0] - 3.0) <= 2.0 ** -16


def test_conv_random_and_ledger(three):
    rng = np.random.default_rng(13)
    xf, wf = rng.normal(size=(2, 3, 5, 5)), rng.normal(size=(4, 3, 3, 3)) * 0.3
    tp = three()
    out = tp.open(lambda ctx, a, b: secure_conv2d(ctx, a, b, padding=1, layer=0), enc(xf), enc(wf))
    assert np.max(np.abs(C16.decode(out) - conv2d_float(xf, wf, 1, 1))) < 1e-3
    led = tp.ledger()
    assert led.rounds(0, "conv2d") == 2
    assert led.payload(0, "conv2d") == conv2d_bytes(2, 3, 5, 5, 4, 5, 5, 3, 3)
    assert led.payload(0, "conv2d", "offline") == 8 * 2 * 4 * 5 * 5


def test_linear_identity(three):
    xf = np.random.default_rng(14).normal(size=(3, 5))
    tp = three()
    out = tp.open(lambda ctx, a, b: secure_linear(ctx, a, b, layer=0), enc(xf), enc(np.eye(5)))
    assert np.max(np.abs(C16.decode(out) - xf)) <= 2.0 ** -16
    assert tp.ledger().payload(0, "linear") == linear_bytes(3, 5, 5)


def test_truncation_error_bound():
    f = 16
    rng = np.random.default_rng(15)
    # activation-scale products; a wrap has probability about |x| / 2^63
    xf = rng.uniform(-8, 8, 1_000_000)
    doubled = np.rint(xf * 2.0 ** (2 * f)).astype(np.int64).view(np.uint64)
    s0 = rng.integers(0, 2**64, xf.size, dtype=np.uint64)
    s1 = RING64.sub(doubled, s0)
    ctx = [SimpleNamespace(party=PartyId(p), codec=FixedPointCodec(f)) for p in (0, 1)]
    y = RING64.add(truncate(ctx[0], s0), truncate(ctx[1], s1))
    err = np.abs(FixedPointCodec(f).decode(y) - doubled.view(np.int64) / 2.0 ** (2 * f))
    assert err.max() <= 2.0 ** -f


def test_truncate_examples(three):
    six = np.array([6 << 32], dtype=np.uint64)
    out = three().open(lambda ctx, a: truncate(ctx, a), six)
    assert abs(int(out[0].view(np.int64)) - int(enc(6.0))) <= 1
    assert three().open(lambda ctx, a: truncate(ctx, a), np.zeros(3, np.uint64)).tolist() == [0, 0, 0]


def test_conv_before_truncation(three):
    from brelu_mpc.protocols import beaver_conv2d

    out = three().open(lambda ctx, a, b: beaver_conv2d(ctx, a, b), enc([[[[3.0]]]]), enc([[[[2.0]]]]))
    assert int(out.ravel()[0]) == int(enc(6.0)) << 16


def test_avgpool_random(three):
    from brelu_mpc.nn import pool_windows

    xf = np.random.default_rng(16).normal(size=(2, 3, 6, 6))
    out = three().open(lambda ctx, a: secure_avgpool(ctx, a, 2), enc(xf))
    assert np.max(np.abs(C16.decode(out) - pool_windows(xf, 2, 2).mean(axis=(4, 5)))) < 1e-4


def test_avgpool_constant(three):
    x = enc(np.full((1, 2, 4, 4), 1.25))
    tp = three()
    out = tp.open(lambda ctx, a: secure_avgpool(ctx, a, 2), x)
    assert np.allclose(C16.decode(out), 1.25, atol=2.0 ** -15)
    assert tp.ledger().payload() == 0
