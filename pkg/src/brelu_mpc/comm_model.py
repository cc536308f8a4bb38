"""Closed-form communication costs of conv and ReLU-family layers.

Costs are in bits; MB means 10^6 bytes. ``r`` is the per-DReLU cost,
``6 * logp * l + 14 * l`` (``l`` replaced by the compare width for the
approximate variant in the field term only).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace

LAYER_KINDS = ("conv2d", "drelu", "app_drelu", "pdrelu", "app_pdrelu", "relu", "brelu",
               "conv2d+relu", "conv2d+brelu")

TABLE1_LABELS = {
    "conv2d": "Conv2d",
    "drelu": "DReLU",
    "app_drelu": "App.DReLU",
    "pdrelu": "pDReLU",
    "app_pdrelu": "App.pDReLU",
    "relu": "ReLU",
    "brelu": "bReLU",
    "conv2d+relu": "Conv2d+ReLU",
    "conv2d+brelu": "Conv2d+bReLU",
}

COMPOSITES = {
    "conv2d+relu": ("conv2d", "drelu", "relu"),
    "conv2d+brelu": ("conv2d", "app_pdrelu", "brelu"),
}


@dataclass(frozen=True)
class CommParams:
    h: int = 64
    i: int = 128
    o: int = 256
    f: int = 3
    ell: int = 64
    ell_star: int = 16
    q: float = 0.1
    logp: int = 8

    def __post_init__(self):
        for name in ("h", "i", "o", "f", "ell", "ell_star", "logp"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.q <= 1:
            raise ValueError(f"q must lie in (0, 1], got {self.q}")
        if self.ell_star > self.ell:
            raise ValueError("compare width cannot exceed the ring width")

    @property
    def r(self) -> int:
        return 6 * self.logp * self.ell + 14 * self.ell

    @property
    def r_star(self) -> int:
        return 6 * self.logp * self.ell_star + 14 * self.ell

    @classmethod
    def table1(cls) -> "CommParams":
        return cls(h=64, i=128, o=256, f=3, ell=64, ell_star=16, q=0.1)


def q_from_patches(patch_sizes, include_identity: bool = False) -> float:
    """q = (1/o) * sum 1/|P_i| over channel patch areas.

    Identity channels (area ``None`` or 0) are skipped by default, which is the
    convention behind the published typical values; ``include_identity``
    counts them as free channels instead (an extension of the model).
    """
    sizes = list(patch_sizes)
    if not sizes:
        raise ValueError("need at least one channel")
    total = 0.0
    for a in sizes:
        if not a:
            if not include_identity:
                raise ValueError("identity channel present; pass include_identity=True")
            continue
        total += 1.0 / a
    return total / len(sizes)


def cost_bits(kind: str, p: CommParams) -> float:
    """Bits for one layer of type ``kind`` (see :data:`LAYER_KINDS`)."""
    h2o = p.h * p.h * p.o
    if kind == "conv2d":
        return p.h * p.h * (2 * p.i + p.o) * p.ell + 2 * p.f * p.f * p.o * p.i * p.ell
    if kind == "drelu":
        return h2o * p.r
    if kind == "app_drelu":
        return h2o * p.r_star
    if kind == "pdrelu":
        return h2o * p.r * p.q
    if kind == "app_pdrelu":
        return h2o * p.r_star * p.q
    if kind == "relu":
        return 5 * h2o * p.ell
    if kind == "brelu":
        return (3 + 2 * p.q) * h2o * p.ell
    if kind in COMPOSITES:
        return sum(cost_bits(k, p) for k in COMPOSITES[kind])
    raise KeyError(f"unknown layer kind {kind!r}; expected one of {', '.join(LAYER_KINDS)}")


def bits_to_mb(bits: float) -> float:
    return bits / 8 / 1e6


def cost_mb(kind: str, p: CommParams) -> float:
    return bits_to_mb(cost_bits(kind, p))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def table1(p: CommParams | None = None) -> list[dict]:
    """Rows with exact MB and the displayed integer.

    Composite rows are displayed as the sum of their displayed components,
    which is how the published table adds up (the exact Conv2d+ReLU total
    would round one unit higher).
    """
    p = p or CommParams.table1()
    rows, shown = [], {}
    for kind in LAYER_KINDS:
        mb = cost_mb(kind, p)
        if kind in COMPOSITES:
            disp = sum(shown[k] for k in COMPOSITES[kind])
        else:
            disp = _round_half_up(mb)
        shown[kind] = disp
        rows.append({"kind": kind, "label": TABLE1_LABELS[kind], "bits": cost_bits(kind, p), "mb": mb,
                     "displayed_mb": disp})
    return rows


def table1_csv(p: CommParams | None = None) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["kind", "label", "bits", "mb", "displayed_mb"], lineterminator="\n")
    w.writeheader()
    for row in table1(p):
        w.writerow({**row, "mb": f"{row['mb']:.4f}"})
    return buf.getvalue()


# --------------------------------------------------------------------------
# exact byte counts for the implemented protocols (ledger oracle)

WORD = 8  # bytes per ring element


def conv2d_bytes(batch: int, in_ch: int, in_h: int, in_w: int, out_ch: int, out_h: int, out_w: int,
                 kh: int, kw: int) -> int:
    """Input mask opened both ways, weight mask opened both ways, triple C dealt once."""
    return WORD * (2 * batch * in_ch * in_h * in_w + 2 * kh * kw * out_ch * in_ch + batch * out_ch * out_h * out_w)


def linear_bytes(batch: int, in_f: int, out_f: int) -> int:
    return WORD * (2 * batch * in_f + 2 * in_f * out_f + batch * out_f)


def drelu_bytes(count: int, compare_bits: int = 64, logp: int = 8, ell: int = 64) -> int:
    return count * (6 * logp * compare_bits + 14 * ell) // 8


def relu_bytes(count: int) -> int:
    return WORD * 5 * count


def brelu_bytes(elements: int, patches: int) -> int:
    return WORD * (3 * elements + 2 * patches)


ROUNDS = {"conv2d": 2, "linear": 2, "drelu": 8, "pdrelu": 8, "relu": 2, "brelu": 2}


# --------------------------------------------------------------------------
# relative ReLU cost versus image size


def _layer_costs(model, size: int, ell: int, ell_star: int, logp: int) -> tuple[float, float]:
    """(relu-family bits, total bits) for ``model`` run at ``size`` x ``size``."""
    from .nn import ACTIVATIONS

    c, h, w = model.input_shape[0], size, size
    relu_bits = other_bits = 0.0
    spatial = True
    feats = None
    for layer in model.layers:
        k, prm = layer.kind, layer.params
        if k == "conv2d":
            wt = layer.weights["w"]
            o, _, kh, kw = wt.shape
            s, pad = prm.get("stride", 1), prm.get("padding", 0)
            ho, wo = (h + 2 * pad - kh) // s + 1, (w + 2 * pad - kw) // s + 1
            other_bits += 8 * conv2d_bytes(1, c, h, w, o, ho, wo, kh, kw)
            c, h, w = o, ho, wo
        elif k in ("avgpool", "maxpool"):
            kk, s = prm["kernel"], prm.get("stride", prm["kernel"])
            h, w = (h - kk) // s + 1, (w - kk) // s + 1
        elif k == "flatten":
            spatial, feats = False, c * h * w
        elif k == "linear":
            out_f, in_f = layer.weights["w"].shape
            # the head has a fixed shape; its cost does not follow the image size
            other_bits += 8 * linear_bytes(1, in_f, out_f)
            feats = out_f
        elif k in ACTIVATIONS:
            if spatial:
                chans = [(h, w)] * c
                patches = prm.get("patches") if k == "brelu" else None
            else:
                chans, patches = [(1, 1)] * feats, prm.get("patches") if k == "brelu" else None
            elems = sum(a * b for a, b in chans)
            if patches is None:
                relu_bits += 8 * (drelu_bytes(elems, ell_star, logp, ell) + relu_bytes(elems))
            else:
                n_p = sum(sp.weight(a, b) for sp, (a, b) in zip(patches, chans))
                n_e = sum(a * b for sp, (a, b) in zip(patches, chans) if not sp.identity)
                relu_bits += 8 * (drelu_bytes(n_p, ell_star, logp, ell) + brelu_bytes(n_e, n_p))
    return relu_bits, relu_bits + other_bits


def relu_cost_fraction(model, image_size: int, ell: int = 64, ell_star: int = 64, logp: int = 8) -> float:
    """Share of a model's traffic spent in ReLU-family layers at one image size."""
    relu_bits, total = _layer_costs(model, image_size, ell, ell_star, logp)
    return relu_bits / total if total else 0.0


def relu_cost_sweep(model, sizes, **kw) -> list[dict]:
    return [{"image_size": s, "relu_fraction": relu_cost_fraction(model, s, **kw)} for s in sizes]


def with_params(p: CommParams, **changes) -> CommParams:
    return replace(p, **changes)
