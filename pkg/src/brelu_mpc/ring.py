"""Modular arithmetic over Z_2^k, Z_{2^k - 1} and a small prime field.

Scalars (:class:`Ring64`, :class:`OddRing`, :class:`FieldP`) are small value
types used where readability matters. The protocols work on numpy arrays
through the vectorised domains :class:`Z2k`, :class:`ZOdd` and :class:`Zp`.

Bit order is MSB-first everywhere: ``bit_decompose(5, 3) == [1, 0, 1]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

U64 = np.uint64
MASK64 = (1 << 64) - 1
DEFAULT_PRIME = 67


class FixedPointOverflowError(OverflowError):
    """A real value does not fit the fixed-point range of the ring."""


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    i = 2
    while i * i <= n:
        if n % i == 0:
            return False
        i += 1
    return True


# --------------------------------------------------------------------------
# scalar value types


@dataclass(frozen=True)
class Ring64:
    value: int

    def __post_init__(self):
        object.__setattr__(self, "value", int(self.value) & MASK64)

    def __add__(self, other: "Ring64") -> "Ring64":
        return Ring64(self.value + other.value)

    def __sub__(self, other: "Ring64") -> "Ring64":
        return Ring64(self.value - other.value)

    def __mul__(self, other: "Ring64") -> "Ring64":
        return Ring64(self.value * other.value)

    def __neg__(self) -> "Ring64":
        return Ring64(-self.value)

    def signed(self) -> int:
        return self.value - (1 << 64) if self.value >> 63 else self.value


ODD64 = (1 << 64) - 1


@dataclass(frozen=True)
class OddRing:
    """Element of Z_{2^64 - 1}, kept canonical in [0, 2^64 - 2]."""

    value: int

    def __post_init__(self):
        object.__setattr__(self, "value", int(self.value) % ODD64)

    def __add__(self, other: "OddRing") -> "OddRing":
        return OddRing(self.value + other.value)

    def __sub__(self, other: "OddRing") -> "OddRing":
        return OddRing(self.value - other.value)

    def __mul__(self, other: "OddRing") -> "OddRing":
        return OddRing(self.value * other.value)

    def __neg__(self) -> "OddRing":
        return OddRing(-self.value)


@dataclass(frozen=True)
class FieldP:
    value: int
    p: int = DEFAULT_PRIME

    def __post_init__(self):
        if not is_prime(self.p):
            raise ValueError(f"field modulus {self.p} is not prime")
        object.__setattr__(self, "value", int(self.value) % self.p)

    def _check(self, other: "FieldP"):
        if other.p != self.p:
            raise ValueError("operands live in different fields")

    def __add__(self, other: "FieldP") -> "FieldP":
        self._check(other)
        return FieldP(self.value + other.value, self.p)

    def __sub__(self, other: "FieldP") -> "FieldP":
        self._check(other)
        return FieldP(self.value - other.value, self.p)

    def __mul__(self, other: "FieldP") -> "FieldP":
        self._check(other)
        return FieldP(self.value * other.value, self.p)

    def __neg__(self) -> "FieldP":
        return FieldP(-self.value, self.p)


# --------------------------------------------------------------------------
# vectorised domains


def as_u64(x) -> np.ndarray:
    """Coerce python ints / int arrays to a uint64 array, wrapping mod 2^64."""
    if isinstance(x, np.ndarray):
        if x.dtype == np.uint64:
            return x
        if x.dtype.kind in "iub":
            return x.astype(np.int64).view(np.uint64) if x.dtype.kind == "i" else x.astype(np.uint64)
        if x.dtype == object:
            return np.array([int(v) & MASK64 for v in x.ravel()], dtype=np.uint64).reshape(x.shape)
        raise TypeError(f"cannot interpret dtype {x.dtype} as ring elements")
    if isinstance(x, (int, np.integer)):
        return np.array(int(x) & MASK64, dtype=np.uint64)
    return as_u64(np.asarray(x, dtype=object) if _has_big_ints(x) else np.asarray(x))


def _has_big_ints(x) -> bool:
    flat = np.asarray(x, dtype=object).ravel()
    return any(isinstance(v, int) and (v >= 1 << 63 or v < -(1 << 63)) for v in flat)


class Z2k:
    """The ring Z_{2^bits}, 1 <= bits <= 64, on uint64 arrays."""

    def __init__(self, bits: int = 64):
        if not 1 <= bits <= 64:
            raise ValueError(f"ring width must be in [1, 64], got {bits}")
        self.bits = bits
        self.modulus = 1 << bits
        self._mask = U64(self.modulus - 1)

    def __repr__(self):
        return f"Z2k({self.bits})"

    def __eq__(self, other):
        return isinstance(other, Z2k) and other.bits == self.bits

    def __hash__(self):
        return hash(("Z2k", self.bits))

    def reduce(self, x) -> np.ndarray:
        x = as_u64(x)
        return x if self.bits == 64 else x & self._mask

    def add(self, a, b):
        return self.reduce(as_u64(a) + as_u64(b))

    def sub(self, a, b):
        return self.reduce(as_u64(a) - as_u64(b))

    def neg(self, a):
        return self.reduce(U64(0) - as_u64(a))

    def mul(self, a, b):
        return self.reduce(as_u64(a) * as_u64(b))

    def wrap(self, a, b) -> np.ndarray:
        """1 where a + b overflows the modulus (as integers in [0, 2^bits))."""
        a, b = as_u64(a), as_u64(b)
        if self.bits == 64:
            return ((a + b) < a).astype(np.uint64)
        return ((a + b) >> U64(self.bits)).astype(np.uint64)

    def random(self, rng: np.random.Generator, shape) -> np.ndarray:
        return self.reduce(rng.integers(0, 1 << 64, size=shape, dtype=np.uint64, endpoint=False))

    def msb(self, a) -> np.ndarray:
        return (as_u64(a) >> U64(self.bits - 1)) & U64(1)


class ZOdd:
    """The ring Z_{2^bits - 1} (odd modulus), 2 <= bits <= 64."""

    def __init__(self, bits: int = 64):
        if not 2 <= bits <= 64:
            raise ValueError(f"odd ring width must be in [2, 64], got {bits}")
        self.bits = bits
        self.modulus = (1 << bits) - 1
        self._n = U64(self.modulus)

    def __repr__(self):
        return f"ZOdd({self.bits})"

    def __eq__(self, other):
        return isinstance(other, ZOdd) and other.bits == self.bits

    def __hash__(self):
        return hash(("ZOdd", self.bits))

    def reduce(self, x) -> np.ndarray:
        x = as_u64(x)
        return np.where(x >= self._n, x - self._n, x)

    def add(self, a, b):
        a, b = as_u64(a), as_u64(b)
        s = a + b
        if self.bits == 64:
            # 2^64 == 1 (mod 2^64 - 1): fold the carry back in
            s = s + (s < a).astype(np.uint64)
        return np.where(s >= self._n, s - self._n, s)

    def neg(self, a):
        a = as_u64(a)
        return np.where(a == 0, a, self._n - a)

    def sub(self, a, b):
        return self.add(a, self.neg(b))

    def mul(self, a, b):
        a, b = np.broadcast_arrays(as_u64(a), as_u64(b))
        out = [(int(x) * int(y)) % self.modulus for x, y in zip(a.ravel(), b.ravel())]
        return np.array(out, dtype=np.uint64).reshape(a.shape)

    def random(self, rng: np.random.Generator, shape) -> np.ndarray:
        return rng.integers(0, self.modulus, size=shape, dtype=np.uint64)


class Zp:
    """Prime field Z_p with elements stored as uint8 (p < 256)."""

    def __init__(self, p: int = DEFAULT_PRIME):
        if not is_prime(p) or p >= 256:
            raise ValueError(f"field modulus must be a prime below 256, got {p}")
        self.p = p

    def __repr__(self):
        return f"Zp({self.p})"

    def __eq__(self, other):
        return isinstance(other, Zp) and other.p == self.p

    def __hash__(self):
        return hash(("Zp", self.p))

    def reduce(self, x) -> np.ndarray:
        return np.mod(np.asarray(x, dtype=np.int64), self.p).astype(np.uint8)

    def add(self, a, b):
        return self.reduce(np.asarray(a, dtype=np.int64) + np.asarray(b, dtype=np.int64))

    def sub(self, a, b):
        return self.reduce(np.asarray(a, dtype=np.int64) - np.asarray(b, dtype=np.int64))

    def mul(self, a, b):
        return self.reduce(np.asarray(a, dtype=np.int64) * np.asarray(b, dtype=np.int64))

    def neg(self, a):
        return self.reduce(-np.asarray(a, dtype=np.int64))

    def random(self, rng: np.random.Generator, shape) -> np.ndarray:
        return rng.integers(0, self.p, size=shape, dtype=np.uint8)

    def random_nonzero(self, rng: np.random.Generator, shape) -> np.ndarray:
        return rng.integers(1, self.p, size=shape, dtype=np.uint8)


RING64 = Z2k(64)


# --------------------------------------------------------------------------
# fixed point, bits, signs


@dataclass(frozen=True)
class FixedPointCodec:
    """Two's-complement fixed point in Z_2^64 with ``frac_bits`` fractional bits."""

    frac_bits: int = 16

    def __post_init__(self):
        if not 0 <= self.frac_bits < 63:
            raise ValueError(f"frac_bits must be in [0, 62], got {self.frac_bits}")

    @property
    def scale(self) -> int:
        return 1 << self.frac_bits

    @property
    def limit(self) -> float:
        return float(2 ** (63 - self.frac_bits))

    def encode(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if not np.all(np.isfinite(x)) or np.any(np.abs(x) >= self.limit):
            raise FixedPointOverflowError(
                f"|x| must be below 2^{63 - self.frac_bits} for {self.frac_bits} fractional bits"
            )
        return np.rint(x * self.scale).astype(np.int64).view(np.uint64)

    def decode(self, x) -> np.ndarray:
        return as_u64(x).view(np.int64).astype(np.float64) / self.scale

    def encode_scalar(self, x: float) -> int:
        return int(self.encode(x))


def encode_fixed(x, frac_bits: int = 16):
    return FixedPointCodec(frac_bits).encode(x)


def decode_fixed(x, frac_bits: int = 16):
    return FixedPointCodec(frac_bits).decode(x)


def to_signed(x) -> np.ndarray:
    return as_u64(x).view(np.int64)


def bit_decompose(x, n_bits: int = 64) -> np.ndarray:
    """Low ``n_bits`` of each element as a uint8 bit array, MSB-first on the last axis."""
    if not 1 <= n_bits <= 64:
        raise ValueError(f"n_bits must be in [1, 64], got {n_bits}")
    x = as_u64(x)
    shifts = np.arange(n_bits - 1, -1, -1, dtype=np.uint64)
    return ((x[..., None] >> shifts) & U64(1)).astype(np.uint8)


def recompose(bits) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint64)
    n = bits.shape[-1]
    shifts = np.arange(n - 1, -1, -1, dtype=np.uint64)
    return np.bitwise_or.reduce(bits << shifts, axis=-1).astype(np.uint64)


def msb(x) -> np.ndarray:
    return (as_u64(x) >> U64(63)).astype(np.uint8)


def drelu_plain(x) -> np.ndarray:
    """1 where the signed value is >= 0 (zero maps to 1)."""
    return (1 - msb(x)).astype(np.uint8)
