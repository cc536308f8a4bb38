"""Additive 2-out-of-2 sharing, PRF-derived common randomness, Beaver triples.

P0 and P1 hold additive shares; P2 assists (it deals triples and runs the
comparison side of the protocols) but never holds a persistent share of an
input.

The PRF is a counter-mode Philox generator keyed with SHA-256 of the seed and
a channel label. It is an engineering stand-in for a real PRF: deterministic
and well distributed, but no security claim is made for it.
"""
from __future__ import annotations

import enum
import hashlib
import secrets
import threading
from dataclasses import dataclass, field

import numpy as np

from .ring import RING64, Z2k, ZOdd, Zp, as_u64


class PartyId(enum.IntEnum):
    P0 = 0
    P1 = 1
    P2 = 2


class ShareMismatchError(ValueError):
    """Share pair with different shapes or domains."""


# --------------------------------------------------------------------------
# PRF streams


def parse_seed(seed) -> bytes:
    """Accept 32-byte seeds as bytes, hex strings or ints."""
    if isinstance(seed, bytes):
        raw = seed
    elif isinstance(seed, str):
        raw = bytes.fromhex(seed.removeprefix("0x"))
    elif isinstance(seed, (int, np.integer)):
        raw = int(seed).to_bytes(32, "little", signed=False)
    else:
        raise TypeError(f"unsupported seed type {type(seed).__name__}")
    if len(raw) > 32:
        raise ValueError("seed material longer than 32 bytes")
    return raw.rjust(32, b"\0")


def derive_seed(seed, *labels: str) -> bytes:
    h = hashlib.sha256(parse_seed(seed))
    for label in labels:
        h.update(b"/" + label.encode())
    return h.digest()


def random_seed_hex() -> str:
    return secrets.token_hex(32)


class PrfStream:
    """Deterministic stream for one (party pair, purpose) channel.

    Two holders of the same seed and label draw identical values as long as
    they issue the same sequence of requests.
    """

    def __init__(self, seed, label: str):
        key = derive_seed(seed, label)
        self.label = label
        self._gen = np.random.Generator(np.random.Philox(key=int.from_bytes(key[:16], "little")))
        self._lock = threading.Lock()
        self.draws = 0

    def words(self, shape) -> np.ndarray:
        with self._lock:
            self.draws += 1
            return self._gen.integers(0, 1 << 64, size=shape, dtype=np.uint64)

    def ring(self, domain, shape) -> np.ndarray:
        if isinstance(domain, Z2k):
            return domain.reduce(self.words(shape))
        with self._lock:
            self.draws += 1
            if isinstance(domain, ZOdd):
                return self._gen.integers(0, domain.modulus, size=shape, dtype=np.uint64)
            if isinstance(domain, Zp):
                return self._gen.integers(0, domain.p, size=shape, dtype=np.uint8)
        raise TypeError(f"unknown domain {domain!r}")

    def nonzero_field(self, field: Zp, shape) -> np.ndarray:
        with self._lock:
            self.draws += 1
            return self._gen.integers(1, field.p, size=shape, dtype=np.uint8)

    def bits(self, shape) -> np.ndarray:
        with self._lock:
            self.draws += 1
            return self._gen.integers(0, 2, size=shape, dtype=np.uint8)

    def permutations(self, count: int, length: int) -> np.ndarray:
        """``count`` independent permutations of ``range(length)``."""
        with self._lock:
            self.draws += 1
            return np.argsort(self._gen.random((count, length)), axis=1, kind="stable")


# which seeds each party is entitled to
PAIR_SEEDS = {
    PartyId.P0: ("01", "02", "0"),
    PartyId.P1: ("01", "12", "1"),
    PartyId.P2: ("02", "12", "2"),
}


@dataclass
class SeedBook:
    """Per-party view of the pairwise common seeds.

    For desk-scale runs every pairwise seed is derived from a single master
    seed; a party only ever receives the seeds it shares with its peers.
    """

    party: PartyId
    seeds: dict[str, bytes]
    _streams: dict[tuple[str, str], PrfStream] = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @classmethod
    def from_master(cls, master, party: PartyId) -> "SeedBook":
        party = PartyId(party)
        return cls(party, {pair: derive_seed(master, "pair", pair) for pair in PAIR_SEEDS[party]})

    def stream(self, pair: str, purpose: str) -> PrfStream:
        if pair not in self.seeds:
            raise KeyError(f"party {self.party.name} holds no seed for pair {pair}")
        with self._lock:
            key = (pair, purpose)
            if key not in self._streams:
                self._streams[key] = PrfStream(self.seeds[pair], purpose)
            return self._streams[key]


# --------------------------------------------------------------------------
# shares


@dataclass(frozen=True)
class AdditiveShare:
    domain: object
    data: np.ndarray
    owner: PartyId

    @property
    def shape(self):
        return self.data.shape


def share(secret, seed, domain=RING64, label: str = "share") -> tuple[AdditiveShare, AdditiveShare]:
    """Split ``secret`` so that P0's share is PRF output and P1's is the difference."""
    secret = domain.reduce(secret) if not isinstance(domain, Zp) else domain.reduce(secret)
    s0 = PrfStream(seed, label).ring(domain, secret.shape)
    s1 = domain.sub(secret, s0)
    return AdditiveShare(domain, s0, PartyId.P0), AdditiveShare(domain, s1, PartyId.P1)


def reconstruct(s0, s1, domain=None) -> np.ndarray:
    if isinstance(s0, AdditiveShare) and isinstance(s1, AdditiveShare):
        if s0.domain != s1.domain:
            raise ShareMismatchError(f"domain mismatch: {s0.domain!r} vs {s1.domain!r}")
        domain = s0.domain
        s0, s1 = s0.data, s1.data
    domain = domain or RING64
    a, b = np.asarray(s0), np.asarray(s1)
    if a.shape != b.shape:
        raise ShareMismatchError(f"shape mismatch: {a.shape} vs {b.shape}")
    return domain.add(a, b)


# --------------------------------------------------------------------------
# Beaver triples

TRIPLE_KINDS = ("elementwise", "matmul", "conv2d", "scalar_vector")


@dataclass(frozen=True)
class BeaverTriple:
    """One party's shares of (A, B, C) with C = op(A, B)."""

    kind: str
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    owner: PartyId


def triple_output_shape(kind: str, shape_a, shape_b, **params):
    shape_a, shape_b = tuple(shape_a), tuple(shape_b)
    if kind == "elementwise":
        if shape_a != shape_b:
            raise ValueError(f"elementwise triple needs equal shapes, got {shape_a} and {shape_b}")
        return shape_a
    if kind == "matmul":
        if len(shape_a) != 2 or len(shape_b) != 2 or shape_a[1] != shape_b[0]:
            raise ValueError(f"matmul triple shapes incompatible: {shape_a} x {shape_b}")
        return (shape_a[0], shape_b[1])
    if kind == "scalar_vector":
        # b holds one scalar per group; index maps each element of a to its group
        index = params["index"]
        if index.shape != shape_a or (index.size and index.max() >= int(np.prod(shape_b))):
            raise ValueError("scalar_vector index does not match triple shapes")
        return shape_a
    if kind == "conv2d":
        from .nn import conv2d_output_shape

        return conv2d_output_shape(shape_a, shape_b, params.get("stride", 1), params.get("padding", 0))
    raise ValueError(f"unknown triple kind {kind!r}")


def triple_product(kind: str, a, b, domain: Z2k = RING64, **params) -> np.ndarray:
    if kind == "elementwise":
        return domain.mul(a, b)
    if kind == "matmul":
        return domain.reduce(as_u64(a) @ as_u64(b))
    if kind == "scalar_vector":
        return domain.mul(a, as_u64(b).reshape(-1)[params["index"]])
    if kind == "conv2d":
        from .nn import conv2d_ring

        return domain.reduce(conv2d_ring(a, b, params.get("stride", 1), params.get("padding", 0)))
    raise ValueError(f"unknown triple kind {kind!r}")


def gen_triples(shape_a, shape_b, kind: str = "elementwise", seed=0, index: int = 0,
                ledger=None, layer: int = 0, **params) -> tuple[BeaverTriple, BeaverTriple]:
    """Deal one triple the way P2 does in the offline phase.

    P0's (A, B, C) and P1's (A, B) come from PRF streams P2 shares with each of
    them, so only P1's C share is ever transmitted; its size is logged to
    ``ledger`` under the offline phase when a ledger is given.
    """
    triple_output_shape(kind, shape_a, shape_b, **params)
    s02 = PrfStream(derive_seed(seed, "pair", "02"), f"triple/{index}")
    s12 = PrfStream(derive_seed(seed, "pair", "12"), f"triple/{index}")
    out_shape = triple_output_shape(kind, shape_a, shape_b, **params)
    a0, b0, c0 = s02.ring(RING64, shape_a), s02.ring(RING64, shape_b), s02.ring(RING64, out_shape)
    a1, b1 = s12.ring(RING64, shape_a), s12.ring(RING64, shape_b)
    c = triple_product(kind, RING64.add(a0, a1), RING64.add(b0, b1), **params)
    c1 = RING64.sub(c, c0)
    if ledger is not None:
        ledger.record(layer, "triple", "offline", payload=c1.size * 8, framed=c1.size * 8 + 7)
    return (BeaverTriple(kind, a0, b0, c0, PartyId.P0), BeaverTriple(kind, a1, b1, c1, PartyId.P1))
