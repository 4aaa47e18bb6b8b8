"""Sequential layer stacks with a per-layer precision policy.

Layers are declared as immutable specs; a Network pairs a definition with
latent real-valued parameters. Binary-precision conv/dense layers push
their latent weights through the sign nonlinearity on every forward pass,
so training gradients reach the latent values via the straight-through
rule. The first and last parameterized layers are forced to full precision
by default (images and logits stay real-valued).
"""

from __future__ import annotations

import functools
import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import rng
from .autodiff import ShapeError, Tensor

LAYER_KINDS = ("conv", "dense", "relu", "signact", "maxpool", "flatten")
PRECISIONS = ("full", "binary")

MODEL_MAGIC = b"BINSIGHT-MODEL\x00\x00"


class DefError(ValueError):
    """A network definition is internally inconsistent."""


class ModelFormatError(ValueError):
    """A model file does not decode under the model container format."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    precision: str = "full"
    out_channels: int | None = None   # conv
    kernel: int | None = None         # conv
    stride: int | None = None         # conv / maxpool
    padding: int | None = None        # conv
    units: int | None = None          # dense
    window: int | None = None         # maxpool

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise DefError(f"unknown layer kind {self.kind!r}")
        if self.precision not in PRECISIONS:
            raise DefError(f"unknown precision {self.precision!r}")
        if self.precision == "binary" and self.kind not in ("conv", "dense"):
            raise DefError(f"binary precision is only valid on conv/dense "
                           f"layers, not {self.kind!r}")
        allowed = {
            "conv": {"out_channels", "kernel", "stride", "padding"},
            "dense": {"units"},
            "maxpool": {"window", "stride"},
            "relu": set(),
            "signact": set(),
            "flatten": set(),
        }[self.kind]
        geom = {"out_channels", "kernel", "stride", "padding", "units",
                "window"}
        for name in geom:
            val = getattr(self, name)
            if val is not None and name not in allowed:
                raise DefError(f"{self.kind} layer does not take {name!r}")
        if self.kind == "conv":
            if not self.out_channels or not self.kernel:
                raise DefError("conv layer needs out_channels and kernel")
            if self.out_channels < 1 or self.kernel < 1:
                raise DefError("conv geometry must be positive")
            if (self.stride or 1) < 1 or (self.padding or 0) < 0:
                raise DefError("conv stride/padding out of range")
        elif self.kind == "dense":
            if not self.units or self.units < 1:
                raise DefError("dense layer needs positive units")
        elif self.kind == "maxpool":
            if not self.window or self.window < 1:
                raise DefError("maxpool layer needs a positive window")
            if self.stride is not None and self.stride < 1:
                raise DefError("maxpool stride must be positive")

    @property
    def conv_stride(self) -> int:
        return self.stride if self.stride is not None else 1

    @property
    def conv_padding(self) -> int:
        return self.padding if self.padding is not None else 0

    @property
    def pool_stride(self) -> int:
        return self.stride if self.stride is not None else self.window


def conv(out_channels: int, kernel: int, stride: int = 1, padding: int = 0,
         precision: str = "full") -> LayerSpec:
    return LayerSpec("conv", precision, out_channels=out_channels,
                     kernel=kernel, stride=stride, padding=padding)


def dense(units: int, precision: str = "full") -> LayerSpec:
    return LayerSpec("dense", precision, units=units)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def signact() -> LayerSpec:
    return LayerSpec("signact")


def maxpool(window: int, stride: int | None = None) -> LayerSpec:
    return LayerSpec("maxpool", window=window, stride=stride)


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


@dataclass(frozen=True)
class NetworkDef:
    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, int, int]  # (C, H, W)
    classes: int
    force_full_ends: bool = True

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        _plan(self)  # validate eagerly


@dataclass(frozen=True)
class DefPlan:
    """Derived layout of a validated NetworkDef."""
    output_shapes: tuple[tuple[int, ...], ...]
    param_layers: tuple[int, ...]              # layer indices of conv/dense
    param_shapes: tuple[tuple[tuple[int, ...], tuple[int, ...]], ...]
    effective_precision: tuple[str, ...]       # per param layer
    tap_index: int                             # trace index of A^k maps
    fan_in: tuple[int, ...]                    # per param layer


@functools.lru_cache(maxsize=None)
def _plan(defn: NetworkDef) -> DefPlan:
    c, h, w = defn.input_shape
    if min(c, h, w) < 1 or defn.classes < 1:
        raise DefError("input shape extents and class count must be positive")
    shape: tuple[int, ...] = (c, h, w)
    shapes: list[tuple[int, ...]] = []
    param_layers: list[int] = []
    param_shapes: list[tuple[tuple[int, ...], tuple[int, ...]]] = []
    fan_in: list[int] = []
    last_conv = None
    seen_conv = False
    for i, spec in enumerate(defn.layers):
        k = spec.kind
        if k == "conv":
            if len(shape) != 3:
                raise DefError(f"layer {i}: conv needs spatial input, have "
                               f"{shape}")
            ci, hi, wi = shape
            st, pad = spec.conv_stride, spec.conv_padding
            hp, wp = hi + 2 * pad, wi + 2 * pad
            if hp < spec.kernel or wp < spec.kernel:
                raise DefError(f"layer {i}: kernel {spec.kernel} exceeds "
                               f"padded extents {hp}x{wp}")
            if (hp - spec.kernel) % st or (wp - spec.kernel) % st:
                raise DefError(f"layer {i}: conv extents not exactly "
                               f"divisible by stride {st}")
            shape = (spec.out_channels, (hp - spec.kernel) // st + 1,
                     (wp - spec.kernel) // st + 1)
            param_layers.append(i)
            param_shapes.append(((spec.out_channels, ci, spec.kernel,
                                  spec.kernel), (spec.out_channels,)))
            fan_in.append(ci * spec.kernel * spec.kernel)
            last_conv = i
            seen_conv = True
        elif k == "dense":
            if len(shape) != 1:
                raise DefError(f"layer {i}: dense needs flattened input, "
                               f"have {shape}; add a flatten layer")
            if not seen_conv:
                raise DefError(f"layer {i}: at least one conv layer must "
                               f"precede the first dense layer")
            param_layers.append(i)
            param_shapes.append(((shape[0], spec.units), (spec.units,)))
            fan_in.append(shape[0])
            shape = (spec.units,)
        elif k == "maxpool":
            if len(shape) != 3:
                raise DefError(f"layer {i}: maxpool needs spatial input")
            ci, hi, wi = shape
            if spec.window > hi or spec.window > wi:
                raise DefError(f"layer {i}: window {spec.window} larger than "
                               f"input {hi}x{wi}")
            st = spec.pool_stride
            shape = (ci, (hi - spec.window) // st + 1,
                     (wi - spec.window) // st + 1)
        elif k == "flatten":
            shape = (int(np.prod(shape)),)
        # relu / signact keep the shape
        shapes.append(shape)
    if not seen_conv:
        raise DefError("network must contain at least one conv layer")
    if shape != (defn.classes,):
        raise DefError(f"final layer produces {shape}, expected "
                       f"({defn.classes},) logits")
    precisions = [defn.layers[i].precision for i in param_layers]
    if defn.force_full_ends and precisions:
        precisions[0] = "full"
        precisions[-1] = "full"
    tap = last_conv
    if last_conv + 1 < len(defn.layers) and \
            defn.layers[last_conv + 1].kind in ("relu", "signact"):
        tap = last_conv + 1
    return DefPlan(tuple(shapes), tuple(param_layers), tuple(param_shapes),
                   tuple(precisions), tap, tuple(fan_in))


def plan(defn: NetworkDef) -> DefPlan:
    return _plan(defn)


@dataclass
class Network:
    definition: NetworkDef
    weights: list[np.ndarray]  # one per parameterized layer, in layer order
    biases: list[np.ndarray]
    seed: int

    def copy(self) -> "Network":
        return Network(self.definition, [w.copy() for w in self.weights],
                       [b.copy() for b in self.biases], self.seed)


def _init_weight(defn: NetworkDef, ordinal: int, seed: int,
                 stream_base: int = 0) -> np.ndarray:
    p = _plan(defn)
    wshape, _ = p.param_shapes[ordinal]
    fan = p.fan_in[ordinal]
    bound = float(np.sqrt(6.0 / fan))
    if p.effective_precision[ordinal] == "binary":
        bound = min(bound, 1.0)  # latent binary weights start inside [-1, 1]
    size = int(np.prod(wshape))
    u = rng.uniforms(seed, stream_base + 2 * p.param_layers[ordinal], size)
    return ((2.0 * u - 1.0) * bound).astype(np.float32).reshape(wshape)


def build_network(defn: NetworkDef, seed: int) -> Network:
    """He-uniform weights (bound sqrt(6/fan_in)), zero biases; deterministic
    for a given seed."""
    p = _plan(defn)
    weights = [_init_weight(defn, k, seed) for k in range(len(p.param_layers))]
    biases = [np.zeros(b, dtype=np.float32) for _, b in p.param_shapes]
    return Network(defn, weights, biases, int(seed))


@dataclass
class ForwardTrace:
    logits: Tensor
    layer_outputs: list[Tensor] | None
    last_conv_index: int
    input_node: Tensor
    param_nodes: list[tuple[Tensor, Tensor]]
    classes: int


def forward(net: Network, x, record: bool = True,
            input_requires_grad: bool = True) -> ForwardTrace:
    """Run the stack; binary layers compute with sign-binarized weights,
    signact layers binarize activations. With `record`, every layer's
    output tensor is kept on the trace."""
    defn = net.definition
    p = _plan(defn)
    arr = np.asarray(getattr(x, "data", x), dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[1:] != defn.input_shape:
        raise ShapeError(f"forward: input shape {arr.shape} does not match "
                         f"definition input {defn.input_shape}")
    inp = Tensor(arr, requires_grad=input_requires_grad, op="input")
    h = inp
    outputs: list[Tensor] = []
    param_nodes: list[tuple[Tensor, Tensor]] = []
    ordinal = 0
    for spec in defn.layers:
        k = spec.kind
        if k in ("conv", "dense"):
            wn = Tensor(net.weights[ordinal], requires_grad=True, op="weight")
            bn = Tensor(net.biases[ordinal], requires_grad=True, op="bias")
            weff = ad.sign_binarize(wn) \
                if p.effective_precision[ordinal] == "binary" else wn
            if k == "conv":
                h = ad.conv2d(h, weff, bn, spec.conv_stride, spec.conv_padding)
            else:
                h = ad.dense(h, weff, bn)
            param_nodes.append((wn, bn))
            ordinal += 1
        elif k == "relu":
            h = ad.relu(h)
        elif k == "signact":
            h = ad.sign_binarize(h)
        elif k == "maxpool":
            h = ad.maxpool2d(h, spec.window, spec.pool_stride)
        elif k == "flatten":
            h = ad.flatten(h)
        if record:
            outputs.append(h)
    return ForwardTrace(logits=h, layer_outputs=outputs if record else None,
                        last_conv_index=p.tap_index, input_node=inp,
                        param_nodes=param_nodes, classes=defn.classes)


def class_score(trace: ForwardTrace, class_id: int) -> Tensor:
    """Differentiable pre-softmax logit of one class (single-image trace)."""
    if not 0 <= class_id < trace.classes:
        raise ValueError(f"class_id {class_id} out of range "
                         f"[0, {trace.classes})")
    if trace.logits.data.shape[0] != 1:
        raise ValueError("class_score expects a single-image trace")
    return ad.pick(trace.logits, (0, class_id))


def last_conv_output(trace: ForwardTrace) -> Tensor:
    """Feature maps of the final conv layer, taken after an immediately
    attached relu/signact when present. Shape (1, K, U, V) for one image."""
    if trace.layer_outputs is None:
        raise ValueError("last_conv_output needs a recorded trace")
    return trace.layer_outputs[trace.last_conv_index]


# ---------------------------------------------------------------------------
# FP / BNN pairing
# ---------------------------------------------------------------------------

def fp_variant(defn: NetworkDef) -> NetworkDef:
    """Full-precision twin: every layer full precision, activation
    binarization replaced by relu."""
    layers = []
    for spec in defn.layers:
        if spec.kind == "signact":
            layers.append(relu())
        elif spec.kind in ("conv", "dense"):
            layers.append(replace(spec, precision="full"))
        else:
            layers.append(spec)
    return replace(defn, layers=tuple(layers))


def bnn_variant(defn: NetworkDef) -> NetworkDef:
    """Binarized twin: every conv/dense requests binary weights (the
    first/last-full policy still applies); declared activations stay."""
    layers = []
    for spec in defn.layers:
        if spec.kind in ("conv", "dense"):
            layers.append(replace(spec, precision="binary"))
        else:
            layers.append(spec)
    return replace(defn, layers=tuple(layers))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_GEOM_FIELDS = ("out_channels", "kernel", "stride", "padding", "units",
                "window")


def _layer_to_json(spec: LayerSpec) -> dict:
    d = {"kind": spec.kind}
    if spec.kind in ("conv", "dense"):
        d["precision"] = spec.precision
    for name in _GEOM_FIELDS:
        val = getattr(spec, name)
        if val is not None:
            d[name] = val
    return d


def _layer_from_json(d: dict) -> LayerSpec:
    known = {"kind", "precision", *_GEOM_FIELDS}
    extra = set(d) - known
    if extra:
        raise ModelFormatError(f"unknown layer fields {sorted(extra)}")
    try:
        return LayerSpec(**d)
    except (TypeError, DefError) as e:
        raise ModelFormatError(f"bad layer record: {e}") from e


def def_to_json(defn: NetworkDef) -> dict:
    return {
        "layers": [_layer_to_json(s) for s in defn.layers],
        "input_shape": list(defn.input_shape),
        "classes": defn.classes,
        "force_full_ends": defn.force_full_ends,
    }


def def_from_json(d: dict) -> NetworkDef:
    known = {"layers", "input_shape", "classes", "force_full_ends"}
    extra = set(d) - known
    if extra:
        raise ModelFormatError(f"unknown definition fields {sorted(extra)}")
    try:
        return NetworkDef(
            layers=tuple(_layer_from_json(s) for s in d["layers"]),
            input_shape=tuple(d["input_shape"]),
            classes=int(d["classes"]),
            force_full_ends=bool(d.get("force_full_ends", True)),
        )
    except (KeyError, TypeError, DefError) as e:
        raise ModelFormatError(f"bad definition record: {e}") from e


def save_model(net: Network, path) -> None:
    """Magic, little-endian u32 length, UTF-8 JSON header, then raw
    little-endian float32 parameter blocks in layer order (weight then
    bias per parameterized layer). Round-trips bit-exactly."""
    header = json.dumps({"def": def_to_json(net.definition),
                         "seed": net.seed},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for w, b in zip(net.weights, net.biases):
            f.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(b, dtype="<f4").tobytes())


def load_model(path) -> Network:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:16] != MODEL_MAGIC:
        raise ModelFormatError(f"bad magic in {path}")
    if len(blob) < 20:
        raise ModelFormatError(f"truncated header in {path}")
    (hlen,) = struct.unpack("<I", blob[16:20])
    if len(blob) < 20 + hlen:
        raise ModelFormatError(f"truncated JSON header in {path}")
    try:
        head = json.loads(blob[20:20 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelFormatError(f"undecodable header in {path}: {e}") from e
    if not isinstance(head, dict) or set(head) != {"def", "seed"}:
        raise ModelFormatError(f"unexpected header keys in {path}")
    defn = def_from_json(head["def"])
    p = _plan(defn)
    pos = 20 + hlen
    weights: list[np.ndarray] = []
    biases: list[np.ndarray] = []
    for wshape, bshape in p.param_shapes:
        for shape, dest in ((wshape, weights), (bshape, biases)):
            nbytes = int(np.prod(shape)) * 4
            if len(blob) < pos + nbytes:
                raise ModelFormatError(f"truncated parameter block at byte "
                                       f"{pos} in {path}")
            dest.append(np.frombuffer(blob[pos:pos + nbytes],
                                      dtype="<f4").astype(np.float32)
                        .reshape(shape))
            pos += nbytes
    if pos != len(blob):
        raise ModelFormatError(f"{len(blob) - pos} trailing bytes in {path}")
    return Network(defn, weights, biases, int(head["seed"]))
