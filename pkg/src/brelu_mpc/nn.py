"""Plaintext reference engine: graph format, float and fixed-point interpreters.

The fixed-point mode reproduces the secure engine's arithmetic (same codec,
floor truncation after every product, patch sums in the ring) so that it can
serve as the bit-level oracle for secure inference, up to the one-LSB noise
of share truncation.

Model files: a JSON manifest plus a little-endian float32 blob, see
:func:`save_model`. Tensors are NCHW.
"""
from __future__ import annotations

import copy
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .protocols import PatchSpec, brelu_tags, patch_sums
from .ring import RING64, FixedPointCodec, as_u64

LAYER_KINDS = ("conv2d", "linear", "avgpool", "maxpool", "relu", "relu6", "brelu", "flatten", "add")
ACTIVATIONS = ("relu", "relu6", "brelu")
MODEL_VERSION = 1


class ShapeError(ValueError):
    """Tensor shapes do not fit the layer."""


# --------------------------------------------------------------------------
# kernels shared by the float, fixed and secure paths


def conv2d_output_shape(shape_x, shape_w, stride: int = 1, padding: int = 0):
    if len(shape_x) != 4 or len(shape_w) != 4:
        raise ShapeError(f"conv2d expects NCHW input and OIHW weight, got {shape_x} and {shape_w}")
    n, c, h, w = shape_x
    o, ci, kh, kw = shape_w
    if ci != c:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, weight expects {ci}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d kernel {kh}x{kw} does not fit input {h}x{w} with padding {padding}")
    return (n, o, ho, wo)


def im2col(x: np.ndarray, kh: int, kw: int, stride: int = 1, padding: int = 0) -> np.ndarray:
    """(N, C, H, W) -> (N, Ho*Wo, C*kh*kw) patches, any dtype."""
    n, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :ho, :wo]  # N C Ho Wo kh kw
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n, ho * wo, c * kh * kw)


def _conv2d(x, w, stride, padding):
    n, o, ho, wo = conv2d_output_shape(x.shape, w.shape, stride, padding)
    cols = im2col(x, w.shape[2], w.shape[3], stride, padding)
    out = cols @ w.reshape(o, -1).T  # N, Ho*Wo, O
    return out.transpose(0, 2, 1).reshape(n, o, ho, wo)


def conv2d_ring(x, w, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Convolution in Z_2^64 (uint64 matmul wraps modulo 2^64)."""
    return _conv2d(as_u64(x), as_u64(w), stride, padding)


def conv2d_float(x, w, stride: int = 1, padding: int = 0) -> np.ndarray:
    return _conv2d(np.asarray(x, dtype=np.float64), np.asarray(w, dtype=np.float64), stride, padding)


def pool_windows(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    """(N, C, Ho, Wo, k, k) view of pooling windows (no padding)."""
    if x.ndim != 4:
        raise ShapeError(f"pooling expects NCHW input, got shape {x.shape}")
    if kernel > x.shape[2] or kernel > x.shape[3]:
        raise ShapeError(f"pool kernel {kernel} larger than input {x.shape[2]}x{x.shape[3]}")
    win = np.lib.stride_tricks.sliding_window_view(x, (kernel, kernel), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def pool_sum(x: np.ndarray, kernel: int, stride: int | None = None) -> np.ndarray:
    """Window sums; wraps modulo 2^64 for ring tensors."""
    return pool_windows(x, kernel, stride or kernel).sum(axis=(4, 5), dtype=x.dtype)


def fixed_truncate(x, f: int) -> np.ndarray:
    """Plaintext truncation: arithmetic shift (floor division by 2^f)."""
    return (as_u64(x).view(np.int64) >> f).view(np.uint64)


# --------------------------------------------------------------------------
# graph


@dataclass
class Layer:
    kind: str
    params: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer type {self.kind!r}")
        if self.kind == "brelu":
            self.params["patches"] = [p if isinstance(p, PatchSpec) else PatchSpec.from_json(p)
                                      for p in self.params["patches"]]

    def manifest_params(self) -> dict:
        if self.kind == "brelu":
            return {**self.params, "patches": [p.to_json() for p in self.params["patches"]]}
        return dict(self.params)


@dataclass
class ModelGraph:
    """Ordered layer list; ``add`` layers refer back to an earlier output (-1 = input)."""

    input_shape: tuple
    layers: list
    frac_bits: int = 16

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        self.shapes = self.infer_shapes()

    def copy(self) -> "ModelGraph":
        return ModelGraph(self.input_shape, [Layer(l.kind, copy.deepcopy(l.params), dict(l.weights))
                                             for l in self.layers], self.frac_bits)

    def infer_shapes(self) -> list[tuple]:
        """Per-sample output shape after every layer (batch axis omitted)."""
        shapes, cur = [], self.input_shape
        for i, layer in enumerate(self.layers):
            cur = _layer_shape(layer, cur, shapes, self.input_shape, i)
            shapes.append(cur)
        return shapes

    def input_of(self, idx: int) -> tuple:
        return self.input_shape if idx == 0 else self.shapes[idx - 1]

    def activation_layers(self) -> list[int]:
        return [i for i, l in enumerate(self.layers) if l.kind in ACTIVATIONS]

    def last_activation(self) -> int:
        acts = self.activation_layers()
        if not acts:
            raise ValueError("model has no activation layer")
        return acts[-1]

    def channels(self) -> list["ChannelRef"]:
        """Global enumeration of all activation channels."""
        out = []
        for i in self.activation_layers():
            shp = self.input_of(i)
            c, h, w = (shp[0], shp[1], shp[2]) if len(shp) == 3 else (shp[0], 1, 1)
            for ch in range(c):
                out.append(ChannelRef(len(out), i, ch, h, w))
        return out

    def full_drelu_count(self) -> int:
        return sum(c.h * c.w for c in self.channels())

    def to_manifest(self) -> tuple[dict, bytes]:
        blob = bytearray()
        layers = []
        for layer in self.layers:
            entry = {"type": layer.kind, "params": layer.manifest_params(), "weights": {}}
            for name in sorted(layer.weights):
                arr = np.ascontiguousarray(layer.weights[name], dtype="<f4")
                entry["weights"][name] = {"offset": len(blob), "shape": list(arr.shape)}
                blob += arr.tobytes()
            layers.append(entry)
        manifest = {"version": MODEL_VERSION, "input_shape": list(self.input_shape),
                    "codec": {"frac_bits": self.frac_bits}, "layers": layers}
        return manifest, bytes(blob)

    def digest(self) -> str:
        manifest, blob = self.to_manifest()
        h = hashlib.sha256(json.dumps(manifest, sort_keys=True).encode())
        h.update(blob)
        return h.hexdigest()


@dataclass(frozen=True)
class ChannelRef:
    gid: int
    layer: int
    channel: int
    h: int
    w: int


def _layer_shape(layer: Layer, cur, shapes, input_shape, idx):
    p = layer.params
    k = layer.kind
    if k == "conv2d":
        w = layer.weights["w"]
        return conv2d_output_shape((1, *cur), w.shape, p.get("stride", 1), p.get("padding", 0))[1:]
    if k == "linear":
        w = layer.weights["w"]
        if len(cur) != 1 or cur[0] != w.shape[1]:
            raise ShapeError(f"layer {idx}: linear expects ({w.shape[1]},) input, got {cur}")
        return (w.shape[0],)
    if k in ("avgpool", "maxpool"):
        if len(cur) != 3:
            raise ShapeError(f"layer {idx}: pooling needs CHW input, got {cur}")
        kk, s = p["kernel"], p.get("stride", p["kernel"])
        if kk > cur[1] or kk > cur[2]:
            raise ShapeError(f"layer {idx}: pool kernel {kk} larger than {cur[1]}x{cur[2]}")
        return (cur[0], (cur[1] - kk) // s + 1, (cur[2] - kk) // s + 1)
    if k == "flatten":
        return (int(np.prod(cur)),)
    if k == "add":
        src = p["source"]
        if not -1 <= src < idx:
            raise ShapeError(f"layer {idx}: add source {src} must refer to an earlier layer")
        other = input_shape if src == -1 else shapes[src]
        if tuple(other) != tuple(cur):
            raise ShapeError(f"layer {idx}: add shapes differ: {other} vs {cur}")
        return cur
    if k == "brelu":
        c = cur[0]
        patches = p["patches"]
        if len(patches) != c:
            raise ShapeError(f"layer {idx}: {len(patches)} patch specs for {c} channels")
        h, w = (cur[1], cur[2]) if len(cur) == 3 else (1, 1)
        for spec in patches:
            if not spec.fits(h, w):
                raise ShapeError(f"layer {idx}: patch {spec.label()} does not fit {h}x{w}")
        return cur
    return cur  # relu, relu6


# --------------------------------------------------------------------------
# interpreters


def brelu_float(x: np.ndarray, patches) -> np.ndarray:
    x4 = x.reshape(x.shape[0], x.shape[1], 1, 1) if x.ndim == 2 else x
    out = x4.copy()
    n, _, h, w = x4.shape
    for ch, spec in enumerate(patches):
        if spec.identity:
            continue
        s = patch_sums(x4, ch, spec).reshape(n, -(-h // spec.ph), -(-w // spec.pw))
        keep = np.repeat(np.repeat(s >= 0, spec.ph, axis=1), spec.pw, axis=2)[:, :h, :w]
        out[:, ch] = np.where(keep, x4[:, ch], 0)
    return out.reshape(x.shape)


def brelu_fixed(x: np.ndarray, patches) -> np.ndarray:
    """Same as :func:`brelu_float` but decisions use ring patch sums."""
    x4 = x.reshape(x.shape[0], x.shape[1], 1, 1) if x.ndim == 2 else x
    out = x4.copy()
    n, _, h, w = x4.shape
    for ch, spec in enumerate(patches):
        if spec.identity:
            continue
        s = patch_sums(x4, ch, spec).view(np.int64).reshape(n, -(-h // spec.ph), -(-w // spec.pw))
        keep = np.repeat(np.repeat(s >= 0, spec.ph, axis=1), spec.pw, axis=2)[:, :h, :w]
        out[:, ch] = np.where(keep, x4[:, ch], np.uint64(0))
    return out.reshape(x.shape)


def apply_layer(layer: Layer, x, mode: str, codec: FixedPointCodec, history=None, model_input=None):
    p, k = layer.params, layer.kind
    fixed = mode == "fixed"
    # reduction order follows memory layout; keep it fixed so equal inputs give equal outputs
    x = np.ascontiguousarray(x)
    if k == "conv2d":
        s, pad = p.get("stride", 1), p.get("padding", 0)
        if fixed:
            y = fixed_truncate(conv2d_ring(x, codec.encode(layer.weights["w"]), s, pad), codec.frac_bits)
            return RING64.add(y, codec.encode(layer.weights["b"])[None, :, None, None]) if "b" in layer.weights else y
        y = conv2d_float(x, layer.weights["w"], s, pad)
        return y + layer.weights["b"][None, :, None, None] if "b" in layer.weights else y
    if k == "linear":
        if fixed:
            y = fixed_truncate(as_u64(x) @ codec.encode(layer.weights["w"]).T, codec.frac_bits)
            return RING64.add(y, codec.encode(layer.weights["b"])[None, :]) if "b" in layer.weights else y
        y = x @ layer.weights["w"].T.astype(np.float64)
        return y + layer.weights["b"][None, :] if "b" in layer.weights else y
    if k == "avgpool":
        kk, s = p["kernel"], p.get("stride", p["kernel"])
        if fixed:
            return fixed_truncate(RING64.mul(pool_sum(x, kk, s), codec.encode(1.0 / (kk * kk))), codec.frac_bits)
        return pool_windows(x, kk, s).mean(axis=(4, 5))
    if k == "maxpool":
        kk, s = p["kernel"], p.get("stride", p["kernel"])
        if fixed:
            return pool_windows(x.view(np.int64), kk, s).max(axis=(4, 5)).view(np.uint64)
        return pool_windows(x, kk, s).max(axis=(4, 5))
    if k == "relu":
        if fixed:
            return np.where(x.view(np.int64) >= 0, x, np.uint64(0))
        return np.where(x >= 0, x, 0.0)
    if k == "relu6":
        if fixed:
            six = codec.encode(6.0).view(np.int64)
            return np.clip(x.view(np.int64), 0, six).view(np.uint64)
        return np.clip(x, 0.0, 6.0)
    if k == "brelu":
        return brelu_fixed(x, p["patches"]) if fixed else brelu_float(x, p["patches"])
    if k == "flatten":
        return x.reshape(x.shape[0], -1)
    if k == "add":
        src = p["source"]
        other = model_input if src == -1 else history[src]
        return RING64.add(x, other) if fixed else x + other
    raise ValueError(f"unknown layer type {k!r}")


def run_layers(model: ModelGraph, x, start: int, history: list, mode: str = "float",
               codec: FixedPointCodec | None = None, model_input=None, stop: int | None = None) -> list:
    """Run layers ``start .. stop-1`` on ``x`` (the input of layer ``start``).

    ``history`` holds earlier layer outputs for residual sources and is
    extended in place; it is returned for convenience.
    """
    codec = codec or FixedPointCodec(model.frac_bits)
    stop = len(model.layers) if stop is None else stop
    for i in range(start, stop):
        x = apply_layer(model.layers[i], x, mode, codec, history, model_input)
        if len(history) > i:
            history[i] = x
        else:
            history.append(x)
    return history


def forward(model: ModelGraph, x, mode: str = "float", plan=None, codec: FixedPointCodec | None = None,
            return_all: bool = False):
    """Run the model; ``plan`` (a :class:`PatchPlan`) swaps activations for bReLU first.

    In fixed mode the input is encoded here and the result is decoded before
    returning, unless ``return_all`` is set, in which case the raw per-layer
    outputs (ring elements in fixed mode) are returned.
    """
    if mode not in ("float", "fixed"):
        raise ValueError(f"mode must be 'float' or 'fixed', got {mode!r}")
    if plan is not None:
        model = apply_plan(model, plan)
    codec = codec or FixedPointCodec(model.frac_bits)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1:] != model.input_shape:
        raise ShapeError(f"input shape {x.shape[1:]} does not match model input {model.input_shape}")
    x0 = codec.encode(x) if mode == "fixed" else x
    hist = run_layers(model, x0, 0, [], mode, codec, model_input=x0)
    if return_all:
        return hist
    return codec.decode(hist[-1]) if mode == "fixed" else hist[-1]


# --------------------------------------------------------------------------
# transforms and plans


def transform_model(model: ModelGraph) -> ModelGraph:
    """MaxPool -> AvgPool (same kernel and stride), ReLU6 -> ReLU."""
    out = model.copy()
    for layer in out.layers:
        if layer.kind == "maxpool":
            layer.kind = "avgpool"
        elif layer.kind == "relu6":
            layer.kind = "relu"
    out.shapes = out.infer_shapes()
    return out


@dataclass
class PatchPlan:
    """One :class:`PatchSpec` per global activation channel."""

    specs: list
    budget: int | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.specs)

    @classmethod
    def uniform(cls, model: ModelGraph, spec: PatchSpec = PatchSpec(1, 1)) -> "PatchPlan":
        return cls([spec if spec.fits(c.h, c.w) else PatchSpec(min(spec.ph, c.h), min(spec.pw, c.w))
                    for c in model.channels()])

    def weight(self, model: ModelGraph) -> int:
        self.validate(model)
        return sum(s.weight(c.h, c.w) for s, c in zip(self.specs, model.channels()))

    def validate(self, model: ModelGraph):
        chans = model.channels()
        if len(chans) != len(self.specs):
            raise ValueError(f"plan has {len(self.specs)} entries, model has {len(chans)} channels")
        for s, c in zip(self.specs, chans):
            if not s.fits(c.h, c.w):
                raise ValueError(f"channel {c.gid}: patch {s.label()} does not fit {c.h}x{c.w}")

    def layer_specs(self, model: ModelGraph) -> dict[int, list]:
        out: dict[int, list] = {}
        for s, c in zip(self.specs, model.channels()):
            out.setdefault(c.layer, []).append(s)
        return out

    def to_json(self, model: ModelGraph | None = None) -> str:
        chans = model.channels() if model is not None else None
        entries = {}
        for i, s in enumerate(self.specs):
            e = {"patch": s.to_json()}
            if chans is not None:
                e.update(layer=chans[i].layer, channel=chans[i].channel, h=chans[i].h, w=chans[i].w)
            entries[str(i)] = e
        obj = {"version": 1, "budget": self.budget, "meta": self.meta, "channels": entries}
        return json.dumps(obj, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PatchPlan":
        obj = json.loads(text)
        if obj.get("version") != 1:
            raise ValueError(f"unsupported plan version {obj.get('version')}")
        ch = obj["channels"]
        specs = [PatchSpec.from_json(ch[str(i)]["patch"]) for i in range(len(ch))]
        return cls(specs, obj.get("budget"), obj.get("meta", {}))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps([s.to_json() for s in self.specs]).encode()).hexdigest()


def apply_plan(model: ModelGraph, plan: PatchPlan) -> ModelGraph:
    """Replace every activation layer by a bReLU layer carrying the plan's patches."""
    if any(l.kind == "relu6" for l in model.layers):
        raise ValueError("plans apply to ReLU layers only; run transform_model first")
    plan.validate(model)
    out = model.copy()
    for idx, specs in plan.layer_specs(model).items():
        out.layers[idx] = Layer("brelu", {"patches": list(specs)})
    out.shapes = out.infer_shapes()
    return out


def with_channel_patch(model: ModelGraph, ref: ChannelRef, spec: PatchSpec) -> ModelGraph:
    """Model where only channel ``ref`` uses ``spec`` and every other channel stays 1x1."""
    plan = PatchPlan.uniform(model)
    plan.specs[ref.gid] = spec
    return apply_plan(model, plan)


def drelu_count(model: ModelGraph, plan: PatchPlan | None = None) -> int:
    """Decisions a plan needs: sum of ceil(h/ph)*ceil(w/pw) over non-identity channels."""
    if plan is None:
        plan = PatchPlan([l_spec for i in model.activation_layers() for l_spec in _layer_patches(model, i)])
    return plan.weight(model)


def _layer_patches(model: ModelGraph, idx: int) -> list:
    layer = model.layers[idx]
    if layer.kind == "brelu":
        return list(layer.params["patches"])
    return [PatchSpec(1, 1)] * model.input_of(idx)[0]


def layer_tags(layer: Layer) -> tuple[str, str]:
    return brelu_tags(layer.params["patches"]) if layer.kind == "brelu" else ("drelu", "relu")


# --------------------------------------------------------------------------
# toy models and IO


def gen_toy_model(seed: int = 0, in_ch: int = 3, hw: int = 8, widths=(4, 8), classes: int = 10,
                  residual: bool = False, frac_bits: int = 16, pool: str = "avgpool") -> ModelGraph:
    """Seeded CNN: conv-relu-pool-conv-relu[-conv-add-relu]-flatten-linear, He init."""
    rng = np.random.default_rng(seed)

    def conv(ci, co):
        w = rng.normal(0, np.sqrt(2.0 / (ci * 9)), (co, ci, 3, 3))
        return Layer("conv2d", {"stride": 1, "padding": 1},
                     {"w": w.astype(np.float32), "b": rng.normal(0, 0.1, co).astype(np.float32)})

    c1, c2 = widths
    layers = [conv(in_ch, c1), Layer("relu"), Layer(pool, {"kernel": 2, "stride": 2}), conv(c1, c2), Layer("relu")]
    if residual:
        src = len(layers) - 1
        layers += [conv(c2, c2), Layer("add", {"source": src}), Layer("relu")]
    feat = c2 * (hw // 2) ** 2
    w = rng.normal(0, np.sqrt(1.0 / feat), (classes, feat))
    layers += [Layer("flatten"), Layer("linear", {}, {"w": w.astype(np.float32),
                                                      "b": rng.normal(0, 0.1, classes).astype(np.float32)})]
    return ModelGraph((in_ch, hw, hw), layers, frac_bits)


def save_model(model: ModelGraph, path) -> Path:
    """Write ``path`` (manifest JSON) and ``path.with_suffix('.bin')`` (float32 blob)."""
    path = Path(path)
    manifest, blob = model.to_manifest()
    blob_path = path.with_suffix(".bin")
    manifest["weights_file"] = blob_path.name
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    blob_path.write_bytes(blob)
    return path


def load_model(path) -> ModelGraph:
    path = Path(path)
    manifest = json.loads(path.read_text())
    if manifest.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {manifest.get('version')}")
    blob = (path.parent / manifest.get("weights_file", path.with_suffix(".bin").name)).read_bytes()
    layers = []
    for entry in manifest["layers"]:
        weights = {}
        for name, ref in entry.get("weights", {}).items():
            count = int(np.prod(ref["shape"]))
            weights[name] = np.frombuffer(blob, dtype="<f4", count=count, offset=ref["offset"]).reshape(ref["shape"]).copy()
        layers.append(Layer(entry["type"], dict(entry.get("params", {})), weights))
    return ModelGraph(manifest["input_shape"], layers, manifest.get("codec", {}).get("frac_bits", 16))


TENSOR_MAGIC = b"NCHW"


def save_tensor(arr, path):
    """Raw float32 tensor: magic, uint32 ndim, uint32 dims, data."""
    arr = np.ascontiguousarray(arr, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        fh.write(arr.tobytes())


def load_tensor(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != TENSOR_MAGIC:
        raise ValueError(f"{path}: not an NCHW tensor file")
    (ndim,) = struct.unpack_from("<I", data, 4)
    shape = struct.unpack_from(f"<{ndim}I", data, 8)
    off = 8 + 4 * ndim
    return np.frombuffer(data, dtype="<f4", offset=off).reshape(shape).astype(np.float64)


# --------------------------------------------------------------------------
# activation statistics


def sign_agreement(acts: np.ndarray, distance: int) -> float:
    """P(same sign) for units ``distance`` apart along rows or columns of a channel."""
    if acts.ndim != 4:
        raise ShapeError("sign agreement needs NCHW activations")
    if distance == 0:
        return 1.0
    pos = acts >= 0
    pairs = []
    if distance < acts.shape[3]:
        pairs.append((pos[..., :, :-distance] == pos[..., :, distance:]).ravel())
    if distance < acts.shape[2]:
        pairs.append((pos[..., :-distance, :] == pos[..., distance:, :]).ravel())
    if not pairs:
        raise ValueError(f"distance {distance} exceeds the spatial size {acts.shape[2:]}")
    return float(np.concatenate(pairs).mean())


def sign_correlation(model: ModelGraph, dataset, distance: int) -> float:
    """Mean sign agreement of pre-activations over all 4-D activation layers."""
    dataset = np.asarray(dataset, dtype=np.float64)
    if dataset.shape[0] == 0:
        raise ValueError("dataset is empty")
    hist = forward(model, dataset, "float", return_all=True)
    vals = []
    for i in model.activation_layers():
        pre = dataset if i == 0 else hist[i - 1]
        if pre.ndim == 4 and (distance < pre.shape[2] or distance < pre.shape[3] or distance == 0):
            vals.append(sign_agreement(pre, distance))
    if not vals:
        raise ValueError("no spatial activation layer supports this distance")
    return float(np.mean(vals))
