"""DReLU error from ignoring high and low bits of the compared shares.

The error model is the one the protocol implements: a value is split into two
fresh uniform shares, each share is reduced locally to its middle bits
(:func:`brelu_mpc.protocols.approx_operand`), and the decision is the top bit
of the reduced sum. Ignoring low bits loses the carry between the low halves;
for a uniform non-negative n-bit input the error rate is
``(2^k - 1) / 2^(n + 1)``, just under the bound ``2^-(n - k + 1)``.
"""
from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass

import numpy as np

from .protocols import approx_operand
from .ring import RING64, FixedPointCodec, Z2k, as_u64, drelu_plain

RING_BITS = 64


@dataclass(frozen=True)
class TruncationConfig:
    """Compared width is ``n - k_lsb - k_msb`` bits."""

    n: int = RING_BITS
    k_lsb: int = 0
    k_msb: int = 0

    def __post_init__(self):
        if min(self.k_lsb, self.k_msb) < 0:
            raise ValueError("ignored bit counts must be non-negative")
        if self.n - self.k_lsb - self.k_msb < 1:
            raise ValueError(f"at least one compared bit is needed (n={self.n}, k_lsb={self.k_lsb}, k_msb={self.k_msb})")

    @property
    def compare_bits(self) -> int:
        return self.n - self.k_lsb - self.k_msb


PROFILES = {
    "classification-16bit": TruncationConfig(64, 5, 43),
    "segmentation-20bit": TruncationConfig(64, 0, 44),
}


class TruncationWarning(UserWarning):
    """No truncation meets the requested error target."""


def uniform_error_bound(n: int, k_lsb: int) -> float:
    """``2^-(n - k + 1)`` for uniform n-bit inputs with k ignored low bits."""
    if not 0 <= k_lsb < n:
        raise ValueError(f"need 0 <= k_lsb < n, got n={n}, k_lsb={k_lsb}")
    return 2.0 ** -(n - k_lsb + 1)


def uniform_error_exact(n: int, k_lsb: int) -> float:
    """Exact error rate of the share-sum comparison for uniform non-negative n-bit inputs."""
    if not 0 <= k_lsb < n:
        raise ValueError(f"need 0 <= k_lsb < n, got n={n}, k_lsb={k_lsb}")
    return (2 ** k_lsb - 1) / 2 ** (n + 1)


def approx_decisions(values, s0, k_msb: int, k_lsb: int) -> np.ndarray:
    """Approximate DReLU of ``values`` split as (s0, values - s0); 1 means non-negative."""
    values, s0 = as_u64(values), as_u64(s0)
    s1 = RING64.sub(values, s0)
    nb = RING_BITS - k_msb - k_lsb
    ring = Z2k(nb)
    if nb == 1:
        # no spare bit for the protocol's doubling; compare the raw top bit
        u = ring.add((s0 << np.uint64(k_msb)) >> np.uint64(63), (s1 << np.uint64(k_msb)) >> np.uint64(63))
    else:
        u = ring.add(approx_operand(s0, k_msb, k_lsb), approx_operand(s1, k_msb, k_lsb))
    return (1 - ring.msb(u)).astype(np.uint8)


def _as_ring(activations, frac_bits: int) -> np.ndarray:
    a = np.asarray(activations)
    if a.size == 0:
        raise ValueError("no activation samples")
    if a.dtype.kind == "f":
        return FixedPointCodec(frac_bits).encode(a).ravel()
    return as_u64(a).ravel()


def _shares(values: np.ndarray, repeats: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    vals = np.tile(values, repeats)
    return vals, rng.integers(0, 1 << 64, size=vals.shape, dtype=np.uint64)


def empirical_error(activations, config: TruncationConfig, repeats: int = 1, seed: int = 0,
                    frac_bits: int = 16) -> float:
    """Fraction of (sample, share split) pairs whose approximate decision is wrong.

    Float activations are encoded with ``frac_bits``; integer arrays are taken
    as ring elements as they are.
    """
    if config.n != RING_BITS:
        raise ValueError("the share model works on the 64-bit ring")
    vals, s0 = _shares(_as_ring(activations, frac_bits), repeats, seed)
    return _error(vals, s0, config.k_msb, config.k_lsb)


def _error(vals, s0, k_msb, k_lsb) -> float:
    wrong = approx_decisions(vals, s0, k_msb, k_lsb) != drelu_plain(vals)
    return float(np.mean(wrong))


def error_surface(activations, msb_range, lsb_range, repeats: int = 1, seed: int = 0,
                  frac_bits: int = 16) -> list[dict]:
    """Rows (k_msb, k_lsb, error) over a grid; one share draw reused for every cell."""
    vals, s0 = _shares(_as_ring(activations, frac_bits), repeats, seed)
    exact = drelu_plain(vals)
    rows = []
    for km in msb_range:
        for kl in lsb_range:
            if RING_BITS - km - kl < 1:
                continue
            err = float(np.mean(approx_decisions(vals, s0, km, kl) != exact))
            rows.append({"k_msb": int(km), "k_lsb": int(kl), "error": err})
    return rows


def surface_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["k_msb", "k_lsb", "error"], lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def _largest_ok(lo: int, hi: int, ok) -> int:
    """Largest k in [lo, hi] with ok(k), given ok is monotone (true then false) and ok(lo)."""
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if ok(mid):
            lo = mid
        else:
            hi = mid - 1
    return lo


def recommend_bits(activations, target_error: float, repeats: int = 1, seed: int = 0,
                   frac_bits: int = 16) -> TruncationConfig:
    """Maximal ignored high bits, then maximal ignored low bits, within ``target_error``.

    The error is monotone in each bit count for a fixed share draw, so each
    scan is a bisection. A target the sample cannot certify (below one error
    in the whole sample, or already missed with nothing ignored) falls back to
    exact comparison with a :class:`TruncationWarning`.
    """
    if not 0 < target_error <= 1:
        raise ValueError(f"target_error must lie in (0, 1], got {target_error}")
    vals, s0 = _shares(_as_ring(activations, frac_bits), repeats, seed)
    exact = drelu_plain(vals)

    def err(km, kl):
        return float(np.mean(approx_decisions(vals, s0, km, kl) != exact))

    if target_error < 1.0 / vals.size or err(0, 0) > target_error:
        warnings.warn(f"error target {target_error:g} is below what {vals.size} samples can certify; "
                      "using exact comparison", TruncationWarning, stacklevel=2)
        return TruncationConfig(RING_BITS, 0, 0)
    k_msb = _largest_ok(0, RING_BITS - 1, lambda km: err(km, 0) <= target_error)
    k_lsb = _largest_ok(0, RING_BITS - 1 - k_msb, lambda kl: err(k_msb, kl) <= target_error)
    return TruncationConfig(RING_BITS, k_lsb, k_msb)


def exhaustive_compare_error(n: int, k_lsb: int) -> float:
    """Exact error over all non-negative n-bit inputs and all share pairs of Z_{2^(n+1)}.

    Tiny-ring oracle for the carry analysis; one spare bit holds the sign.
    """
    if not 0 <= k_lsb <= n or n > 10:
        raise ValueError("exhaustive oracle limited to n <= 10 and k_lsb <= n")
    m = n + 1
    mod = 1 << m
    x = np.arange(1 << n)[:, None]
    s0 = np.arange(mod)[None, :]
    s1 = (x - s0) % mod
    width = m - k_lsb
    approx = ((s0 >> k_lsb) + (s1 >> k_lsb)) % (1 << width)
    wrong = (approx >> (width - 1)) & 1  # top bit set means "negative"
    return float(wrong.mean())


def synthetic_activations(n: int, seed: int = 0, scale: float = 1.0, heavy_tail: float = 0.0) -> np.ndarray:
    """Zero-mean Gaussian activations, optionally with a Student-t tail mixture."""
    rng = np.random.default_rng(seed)
    a = rng.normal(0.0, scale, n)
    if heavy_tail > 0:
        mask = rng.random(n) < heavy_tail
        a[mask] = scale * rng.standard_t(3, mask.sum()) * 4
    return a
