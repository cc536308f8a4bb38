"""Three-party protocols on additive shares (SecureNN family).

Every function is written from the point of view of one party and must be
called by all three parties with the same public arguments. P0 and P1 pass
their shares; P2 passes arrays of the right shape whose contents it ignores.

Randomness that would otherwise be shipped between parties is drawn from the
pairwise PRF streams (``"01"``, ``"02"``, ``"12"``), so a value dealt by P2 only
costs bytes on the P2 -> P1 link. With that, one DReLU costs 14 ring words
plus ``6 * compare_bits`` field bytes and an elementwise multiplication costs
5 ring words, which is exactly what :mod:`brelu_mpc.comm_model` charges.

Approximate DReLU: each share is shifted left by ``ignore_msb`` and right by
``ignore_msb + ignore_lsb`` locally and the comparison runs in
Z_{2^compare_bits}. The operand is doubled before share conversion so it can
never equal 2^k - 1 (the one value Z_{2^k - 1} cannot hold). The sign is
therefore exact whenever ``|x| < 2^(62 - ignore_msb)`` and the dropped low
bits do not carry a value in ``[0, 2^ignore_lsb)`` below zero.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

from .ledger import CommLedger
from .ring import DEFAULT_PRIME, RING64, U64, FixedPointCodec, Z2k, ZOdd, Zp, as_u64, bit_decompose
from .sharing import PartyId, SeedBook, triple_output_shape, triple_product
from .transport import NO_LAYER, Transport

P0, P1, P2 = PartyId.P0, PartyId.P1, PartyId.P2


class ProtocolError(RuntimeError):
    """Inconsistent protocol parameters or messages."""


@dataclass(frozen=True)
class PatchSpec:
    """Patch size for one channel; ``identity`` removes the channel's ReLU."""

    ph: int = 1
    pw: int = 1
    identity: bool = False

    def __post_init__(self):
        if not self.identity and (self.ph < 1 or self.pw < 1):
            raise ValueError(f"patch dims must be positive, got {self.ph}x{self.pw}")
        if self.identity and (self.ph, self.pw) != (0, 0):
            object.__setattr__(self, "ph", 0)
            object.__setattr__(self, "pw", 0)

    @classmethod
    def identity_spec(cls) -> "PatchSpec":
        return cls(0, 0, True)

    @property
    def is_unit(self) -> bool:
        return not self.identity and self.ph == 1 and self.pw == 1

    def weight(self, h: int, w: int) -> int:
        """DReLUs this patch size costs on an h x w channel."""
        if self.identity:
            return 0
        return -(-h // self.ph) * -(-w // self.pw)

    def fits(self, h: int, w: int) -> bool:
        return self.identity or (self.ph <= h and self.pw <= w)

    def label(self) -> str:
        return "identity" if self.identity else f"{self.ph}x{self.pw}"

    def to_json(self):
        return "identity" if self.identity else [self.ph, self.pw]

    @classmethod
    def from_json(cls, obj) -> "PatchSpec":
        if obj == "identity" or obj is None:
            return cls.identity_spec()
        if isinstance(obj, str):
            ph, pw = obj.lower().split("x")
            return cls(int(ph), int(pw))
        ph, pw = obj
        if int(ph) == 0 and int(pw) == 0:
            return cls.identity_spec()
        return cls(int(ph), int(pw))


RELU_SPEC = PatchSpec(1, 1)
IDENTITY = PatchSpec.identity_spec()


@dataclass
class ProtocolContext:
    party: PartyId
    transport: Transport
    seeds: SeedBook
    codec: FixedPointCodec = field(default_factory=FixedPointCodec)
    ignore_msb: int = 0
    ignore_lsb: int = 0
    prime: int = DEFAULT_PRIME
    layer: int = NO_LAYER
    protocol: str | None = None
    phase: str = "online"
    drelu_counts: dict = field(default_factory=dict)

    def __post_init__(self):
        self.party = PartyId(self.party)
        if self.ignore_msb < 0 or self.ignore_lsb < 0:
            raise ValueError("ignored bit counts must be non-negative")
        if self.compare_bits < 2:
            # the doubling step in compute_drelu needs one spare bit
            raise ValueError(f"compare width {self.compare_bits} too small; the protocol needs at least 2 bits")
        self.field = Zp(self.prime)
        if self.prime <= self.compare_bits + 2:
            raise ValueError(f"field too small: p={self.prime} must exceed compare bits + 2 = {self.compare_bits + 2}")

    @property
    def compare_bits(self) -> int:
        return 64 - self.ignore_msb - self.ignore_lsb

    @property
    def ledger(self) -> CommLedger:
        return self.transport.ledger

    @property
    def j(self) -> int:
        """1 on P1 (the party that adds public constants), 0 otherwise."""
        return 1 if self.party == P1 else 0

    @property
    def drelu_count(self) -> int:
        return sum(self.drelu_counts.values())

    # -- scoping and rounds

    @contextlib.contextmanager
    def scope(self, protocol: str | None, layer: int | None = None):
        """Attribute traffic to ``protocol``; an enclosing scope keeps precedence."""
        saved = (self.protocol, self.layer)
        if self.protocol is None and protocol is not None:
            self.protocol = protocol
        if layer is not None:
            self.layer = layer
        try:
            yield
        finally:
            self.protocol, self.layer = saved

    @contextlib.contextmanager
    def offline(self):
        saved, self.phase = self.phase, "offline"
        try:
            yield
        finally:
            self.phase = saved

    def tick(self):
        self.ledger.add_rounds(self.layer, self.protocol or "mult")

    def stream(self, pair: str, purpose: str):
        return self.seeds.stream(pair, purpose)

    # -- messaging

    def send(self, peer, arr: np.ndarray):
        arr = np.ascontiguousarray(arr)
        if arr.dtype == np.uint64:
            payload = arr.astype("<u8", copy=False).tobytes()
        elif arr.dtype == np.uint8:
            payload = arr.tobytes()
        else:
            raise TypeError(f"cannot send dtype {arr.dtype}")
        self.transport.send(peer, payload, self.protocol or "mult", self.layer, self.phase)

    def recv(self, peer, shape, dtype=np.uint64) -> np.ndarray:
        frame = self.transport.recv(peer)
        dt = np.dtype("<u8") if np.dtype(dtype) == np.uint64 else np.dtype(np.uint8)
        n = int(np.prod(shape, dtype=np.int64))
        if len(frame.payload) != n * dt.itemsize:
            raise ProtocolError(
                f"{self.party.name}: expected {n}x{dt.itemsize}B from {PartyId(peer).name}, "
                f"got {len(frame.payload)}B ({frame.protocol}, layer {frame.layer})"
            )
        return np.frombuffer(frame.payload, dtype=dt).astype(dtype).reshape(shape)

    def exchange(self, arr: np.ndarray) -> np.ndarray:
        """P0 <-> P1 swap of equally shaped arrays; returns the peer's array."""
        other = P1 if self.party == P0 else P0
        self.send(other, arr)
        return self.recv(other, arr.shape, arr.dtype)


def xor_public(ctx: ProtocolContext, domain, share, bit) -> np.ndarray:
    """Shares of ``s XOR bit`` from shares of a bit ``s`` and a bit known to P0 and P1."""
    flipped = domain.sub(as_u64(ctx.j), share)
    return np.where(as_u64(bit) == 1, flipped, share)


def deal(ctx: ProtocolContext, values, domain, shape, purpose: str):
    """P2 hands out shares of ``values``; P0's share is PRF(02), P1's is sent.

    Called by all parties in the same round. Returns the share on P0/P1 and
    None on P2.
    """
    if ctx.party == P2:
        s0 = ctx.stream("02", purpose).ring(domain, shape)
        ctx.send(P1, domain.sub(values, s0))
        return None
    if ctx.party == P0:
        return ctx.stream("02", purpose).ring(domain, shape)
    return ctx.recv(P2, shape, np.uint8 if isinstance(domain, Zp) else np.uint64)


# --------------------------------------------------------------------------
# Beaver multiplication


def deal_triple(ctx: ProtocolContext, kind: str, shape_a, shape_b, **params):
    """Offline triple from P2; only P1's C share is transmitted."""
    shape_c = triple_output_shape(kind, shape_a, shape_b, **params)
    with ctx.offline():
        if ctx.party == P2:
            s02, s12 = ctx.stream("02", "triple"), ctx.stream("12", "triple")
            a0, b0, c0 = s02.words(shape_a), s02.words(shape_b), s02.words(shape_c)
            a1, b1 = s12.words(shape_a), s12.words(shape_b)
            c = triple_product(kind, RING64.add(a0, a1), RING64.add(b0, b1), **params)
            ctx.send(P1, RING64.sub(c, c0))
            return None
        if ctx.party == P0:
            s = ctx.stream("02", "triple")
            return s.words(shape_a), s.words(shape_b), s.words(shape_c)
        s = ctx.stream("12", "triple")
        a1, b1 = s.words(shape_a), s.words(shape_b)
        return a1, b1, ctx.recv(P2, shape_c)


def beaver_open(ctx: ProtocolContext, x, y, triple, kind: str, **params):
    """One round: open E = x - A and F = y - B, then combine locally."""
    ctx.tick()
    if ctx.party == P2:
        return np.zeros(triple_output_shape(kind, np.shape(x), np.shape(y), **params), dtype=np.uint64)
    a, b, c = triple
    e_mine, f_mine = RING64.sub(x, a), RING64.sub(y, b)
    other = ctx.exchange(np.concatenate([e_mine.ravel(), f_mine.ravel()]))
    e = RING64.add(e_mine, other[: e_mine.size].reshape(e_mine.shape))
    f = RING64.add(f_mine, other[e_mine.size:].reshape(f_mine.shape))
    z = RING64.add(triple_product(kind, e, b, **params), triple_product(kind, a, f, **params))
    z = RING64.add(z, c)
    if ctx.j:
        z = RING64.add(z, triple_product(kind, e, f, **params))
    return z


def beaver_mul(ctx: ProtocolContext, x, y, kind: str = "elementwise", **params):
    """Two rounds: triple dealing, then the opening."""
    x, y = as_u64(x), as_u64(y)
    ctx.tick()
    triple = deal_triple(ctx, kind, x.shape, y.shape, **params)
    return beaver_open(ctx, x, y, triple, kind, **params)


def beaver_matmul(ctx: ProtocolContext, x, w):
    """Shares of ``x @ w`` for x (n, k) and w (k, m), at doubled scale."""
    with ctx.scope("linear"):
        return beaver_mul(ctx, x, w, "matmul")


def beaver_conv2d(ctx: ProtocolContext, x, w, stride: int = 1, padding: int = 0):
    """Shares of conv(x, w) at doubled scale; truncate afterwards.

    The triple is convolution shaped, so the input mask and the weight mask
    are each opened once for the whole batch.
    """
    with ctx.scope("conv2d"):
        return beaver_mul(ctx, x, w, "conv2d", stride=stride, padding=padding)


def truncate(ctx: ProtocolContext, x, f: int | None = None):
    """Local arithmetic shift of shares; the result may be off by one LSB."""
    f = ctx.codec.frac_bits if f is None else f
    x = as_u64(x)
    if ctx.party == P2 or f == 0:
        return x
    signed = x.view(np.int64)
    if ctx.party == P0:
        return (signed >> f).view(np.uint64)
    return (-((-signed) >> f)).view(np.uint64)


# --------------------------------------------------------------------------
# private compare


def _pc_masked_vector(ctx: ProtocolContext, x_bits, r, beta, nbits: int):
    """P0/P1 side of private compare: the masked and permuted c vectors."""
    fld = ctx.field
    n = r.shape[0]
    s01 = ctx.stream("01", "pc")
    mask = s01.nonzero_field(fld, (n, nbits))
    perm = s01.permutations(n, nbits)
    u = s01.ring(fld, (n, nbits)).astype(np.int64)

    j = ctx.j
    beta = np.asarray(beta, dtype=np.int64).reshape(n)
    full = U64((1 << nbits) - 1)
    t = Z2k(nbits).add(r, 1)
    pub = bit_decompose(np.where(beta == 1, t, r), nbits).astype(np.int64)
    x = x_bits.astype(np.int64)

    w = x + j * pub - 2 * pub * x
    higher = np.cumsum(w, axis=1) - w  # sum over more significant positions
    # beta = 0 tests x > r, beta = 1 tests r + 1 > x
    c = np.where((beta == 1)[:, None], x - j * pub, j * pub - x) + j + higher

    edge = (beta == 1) & (r == full)
    if edge.any():
        # x <= r always holds here, so plant exactly one zero
        plant = np.ones(nbits, dtype=np.int64)
        plant[0] = 0
        c[edge] = u[edge] + plant if j == 0 else -u[edge]

    d = fld.mul(mask, fld.reduce(c))
    return np.take_along_axis(d, perm, axis=1)


def private_compare_core(ctx: ProtocolContext, x_bits, r, beta, nbits: int):
    """One round. P2 returns ``beta XOR (x > r)`` in the clear; P0/P1 return None.

    ``x_bits`` are shares over Z_p of the bits of x (MSB first), ``r`` is
    public to P0/P1 and ``beta`` is a bit known to P0 and P1 only.
    """
    ctx.tick()
    n = np.shape(r)[0]
    if ctx.party == P2:
        d0 = ctx.recv(P0, (n, nbits), np.uint8)
        d1 = ctx.recv(P1, (n, nbits), np.uint8)
        return np.any(ctx.field.add(d0, d1) == 0, axis=1).astype(np.uint64)
    ctx.send(P2, _pc_masked_vector(ctx, x_bits, Z2k(nbits).reduce(r), beta, nbits))
    return None


def private_compare(ctx: ProtocolContext, x_bits, r, beta, nbits: int | None = None, out_domain=RING64):
    """Shares over ``out_domain`` of ``beta XOR (x > r)``; two rounds."""
    nbits = nbits or ctx.compare_bits
    if ctx.prime <= nbits + 2:
        raise ProtocolError(f"field too small: p={ctx.prime} needs to exceed {nbits + 2}")
    r = as_u64(r).ravel()
    with ctx.scope("private_compare"):
        bp = private_compare_core(ctx, x_bits, r, beta, nbits)
        ctx.tick()
        return deal(ctx, bp, out_domain, r.shape, "pc-out")


# --------------------------------------------------------------------------
# share conversion, MSB, DReLU


def share_convert(ctx: ProtocolContext, a, nbits: int | None = None, piggyback=None):
    """Shares over Z_{2^n} to shares over Z_{2^n - 1} of the same value; 4 rounds.

    The secret must not be 2^n - 1. ``piggyback`` is called by every party in
    the round where P2 deals, so independent dealing can share that round.
    """
    nbits = nbits or ctx.compare_bits
    ring, odd, fld = Z2k(nbits), ZOdd(nbits), ctx.field
    a = ring.reduce(a).ravel()
    n = a.shape[0]
    helper = ctx.party == P2
    with ctx.scope("share_convert"):
        if not helper:
            s01 = ctx.stream("01", "sc")
            r0, r1 = ring.reduce(s01.words(n)), ring.reduce(s01.words(n))
            eta_pp = s01.bits(n)
            r, alpha = ring.add(r0, r1), ring.wrap(r0, r1)
            r_mine = r1 if ctx.j else r0
            beta_mine = ring.wrap(a, r_mine)

        ctx.tick()
        if helper:
            a0, a1 = ctx.recv(P0, (n,)), ctx.recv(P1, (n,))
            x, delta = ring.add(a0, a1), ring.wrap(a0, a1)
        else:
            ctx.send(P2, ring.add(a, r_mine))

        ctx.tick()
        x_bits = deal(ctx, bit_decompose(x, nbits) if helper else None, fld, (n, nbits), "sc")
        delta_sh = deal(ctx, delta if helper else None, odd, (n,), "sc")
        if piggyback is not None:
            piggyback()

        # x > r - 1, masked by eta''
        r_minus = np.zeros(n, dtype=np.uint64) if helper else ring.sub(r, 1)
        eta_p = private_compare_core(ctx, x_bits, r_minus, None if helper else eta_pp, nbits)

        ctx.tick()
        eta_p_sh = deal(ctx, eta_p, odd, (n,), "sc")
        if helper:
            return np.zeros(n, dtype=np.uint64)

        # [x < r] = eta' xor eta'' xor [r != 0]
        flip = eta_pp.astype(np.uint64) ^ (r != 0).astype(np.uint64)
        eta_sh = xor_public(ctx, odd, eta_p_sh, flip)
        theta = odd.add(beta_mine, delta_sh)
        if ctx.j == 0:
            theta = odd.sub(theta, alpha)
        theta = odd.sub(theta, eta_sh)
        return odd.sub(odd.reduce(a), theta)


def _msb_deal(ctx: ProtocolContext, n: int, nbits: int) -> dict:
    """P2 deals a random x over Z_N, its bits over Z_p and its LSB over Z_2^64."""
    odd = ZOdd(nbits)
    x = ctx.stream("2", "msb").ring(odd, (n,)) if ctx.party == P2 else None
    return {
        "x": deal(ctx, x, odd, (n,), "msb"),
        "x_bits": deal(ctx, None if x is None else bit_decompose(x, nbits), ctx.field, (n, nbits), "msb"),
        "x_lsb": deal(ctx, None if x is None else x & U64(1), RING64, (n,), "msb"),
    }


def _msb_finish(ctx: ProtocolContext, a, dealt: dict, nbits: int):
    """MSB of a over Z_N via LSB(2a): four rounds after the dealing."""
    odd = ZOdd(nbits)
    n = a.shape[0]
    helper = ctx.party == P2

    ctx.tick()
    if helper:
        r = np.zeros(n, dtype=np.uint64)
    else:
        r_mine = odd.add(odd.add(a, a), dealt["x"])
        r = odd.add(r_mine, ctx.exchange(r_mine))
        beta = ctx.stream("01", "msb").bits(n)

    bp = private_compare_core(ctx, dealt["x_bits"], r, None if helper else beta, nbits)

    ctx.tick()
    bp_sh = deal(ctx, bp, RING64, (n,), "msb-out")
    triple = deal_triple(ctx, "elementwise", (n,), (n,))

    if helper:
        gamma = delta = np.zeros(n, dtype=np.uint64)
    else:
        gamma = xor_public(ctx, RING64, bp_sh, beta)
        delta = xor_public(ctx, RING64, dealt["x_lsb"], r & U64(1))
    theta = beaver_open(ctx, gamma, delta, triple, "elementwise")
    return RING64.sub(RING64.add(gamma, delta), RING64.mul(theta, 2))


def compute_msb(ctx: ProtocolContext, a, nbits: int | None = None):
    """Shares over Z_2^64 of the top bit of a value shared over Z_{2^n - 1}; 5 rounds."""
    nbits = nbits or ctx.compare_bits
    a = as_u64(a).ravel()
    with ctx.scope("msb"):
        ctx.tick()
        dealt = _msb_deal(ctx, a.shape[0], nbits)
        return _msb_finish(ctx, a, dealt, nbits)


def approx_operand(x, ignore_msb: int, ignore_lsb: int) -> np.ndarray:
    """Local per-share reduction to the compared middle bits, doubled (see module doc)."""
    nb = 64 - ignore_msb - ignore_lsb
    x = as_u64(x)
    mid = (x << U64(ignore_msb)) >> U64(ignore_msb + ignore_lsb)
    return Z2k(nb).reduce(mid << U64(1))


def compute_drelu(ctx: ProtocolContext, x, tag: str = "drelu"):
    """Shares over Z_2^64 of DReLU(x); 8 rounds, 14 words + 6 * compare_bits field bytes each."""
    x = as_u64(x)
    shape = x.shape
    flat = x.ravel()
    n = flat.shape[0]
    nb = ctx.compare_bits
    with ctx.scope(tag):
        ctx.drelu_counts[ctx.layer] = ctx.drelu_counts.get(ctx.layer, 0) + n
        if n == 0:
            return np.zeros(shape, dtype=np.uint64)
        u = np.zeros(n, dtype=np.uint64) if ctx.party == P2 else approx_operand(flat, ctx.ignore_msb, ctx.ignore_lsb)
        dealt = {}
        u_odd = share_convert(ctx, u, nb, piggyback=lambda: dealt.update(_msb_deal(ctx, n, nb)))
        msb_sh = _msb_finish(ctx, u_odd, dealt, nb)
        if ctx.party == P2:
            return np.zeros(shape, dtype=np.uint64)
        return RING64.sub(as_u64(ctx.j), msb_sh).reshape(shape)


# --------------------------------------------------------------------------
# activation layers and linear layers


def secure_relu(ctx: ProtocolContext, x, layer: int | None = None):
    """x * DReLU(x); 10 rounds."""
    x = as_u64(x)
    with ctx.scope(None, layer):
        d = compute_drelu(ctx, x, "drelu")
        with ctx.scope("relu"):
            return beaver_mul(ctx, x, d, "elementwise")


def patch_layout(shape, patches):
    """Index bookkeeping for a bReLU layer.

    ``shape`` is (N, C, H, W) or (N, C). Returns the (channel, patch spec)
    pairs that need decisions and, for the elements of those channels taken
    channel by channel in C order, the global patch id of every element.
    """
    if len(shape) == 2:
        shape = (shape[0], shape[1], 1, 1)
    n, c, h, w = shape
    if len(patches) != c:
        raise ValueError(f"patch plan has {len(patches)} entries for {c} channels")
    active, index, offset = [], [], 0
    for ch, spec in enumerate(patches):
        if spec.identity:
            continue
        nh, nw = -(-h // spec.ph), -(-w // spec.pw)
        rows = np.arange(h) // spec.ph
        cols = np.arange(w) // spec.pw
        local = rows[:, None] * nw + cols[None, :]
        ids = offset + np.arange(n)[:, None, None] * (nh * nw) + local[None]
        index.append(ids.ravel())
        active.append((ch, spec))
        offset += n * nh * nw
    idx = np.concatenate(index) if index else np.zeros(0, dtype=np.int64)
    return active, idx.astype(np.int64), offset


def patch_sums(x4, ch: int, spec: PatchSpec) -> np.ndarray:
    """Per-patch sums of channel ``ch``; edge patches are truncated."""
    n, _, h, w = x4.shape
    nh, nw = -(-h // spec.ph), -(-w // spec.pw)
    buf = np.zeros((n, nh * spec.ph, nw * spec.pw), dtype=x4.dtype)
    buf[:, :h, :w] = x4[:, ch]
    return buf.reshape(n, nh, spec.ph, nw, spec.pw).sum(axis=(2, 4), dtype=x4.dtype).ravel()


def brelu_tags(patches) -> tuple[str, str]:
    active = [p for p in patches if not p.identity]
    if active and all(p.is_unit for p in active):
        return "drelu", "relu"
    return "pdrelu", "brelu"


def secure_brelu(ctx: ProtocolContext, x, patches, layer: int | None = None):
    """Block ReLU: one DReLU per patch sum, then a scalar-to-vector multiplication."""
    x = as_u64(x)
    x4 = x.reshape(x.shape[0], x.shape[1], 1, 1) if x.ndim == 2 else x
    active, index, n_patch = patch_layout(x.shape, patches)
    out = x4.copy()
    if not active:
        return out.reshape(x.shape)
    dtag, mtag = brelu_tags(patches)
    chans = [ch for ch, _ in active]
    with ctx.scope(None, layer):
        sums = np.concatenate([patch_sums(x4, ch, spec) for ch, spec in active])
        if ctx.party == P2:
            sums = np.zeros(n_patch, dtype=np.uint64)
        bits = compute_drelu(ctx, sums, dtag)
        elems = np.ascontiguousarray(x4[:, chans].transpose(1, 0, 2, 3)).ravel()
        with ctx.scope(mtag):
            z = beaver_mul(ctx, elems, bits, "scalar_vector", index=index)
    n, _, h, w = x4.shape
    out[:, chans] = z.reshape(len(chans), n, h, w).transpose(1, 0, 2, 3)
    return out.reshape(x.shape)


def secure_conv2d(ctx: ProtocolContext, x, w, b=None, stride: int = 1, padding: int = 0, layer: int | None = None):
    with ctx.scope(None, layer):
        y = truncate(ctx, beaver_conv2d(ctx, x, w, stride, padding))
    if b is not None:
        y = RING64.add(y, as_u64(b)[None, :, None, None])
    return y


def secure_linear(ctx: ProtocolContext, x, w, b=None, layer: int | None = None):
    """``x @ w.T + b`` for a weight of shape (out, in)."""
    with ctx.scope(None, layer):
        y = truncate(ctx, beaver_matmul(ctx, as_u64(x), np.ascontiguousarray(as_u64(w).T)))
    if b is not None:
        y = RING64.add(y, as_u64(b)[None, :])
    return y


def secure_avgpool(ctx: ProtocolContext, x, kernel: int, stride: int | None = None):
    """Local window sum, public scaling by 1/k^2, then truncation; no traffic."""
    from .nn import pool_sum

    s = pool_sum(as_u64(x), kernel, stride or kernel)
    return truncate(ctx, RING64.mul(s, ctx.codec.encode(1.0 / (kernel * kernel))))
