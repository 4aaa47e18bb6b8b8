"""Dense float32 tensors with reverse-mode automatic differentiation.

Every operation eagerly computes its forward value and returns a new
Tensor that records its parent nodes plus a closure implementing the
backward rule. `backward` orders the graph under one scalar output
topologically and accumulates gradients leaf-ward; fan-out sums naturally
because every consumer adds into its parent's gradient buffer.

The sign nonlinearity is special: its true derivative is zero almost
everywhere, so its backward rule is the clipped straight-through estimator
(the upstream gradient passes where the saved input lies in [-1, 1],
boundary included). That rule equals the exact derivative mask of
`hardtanh` at the same input, which is what the surrogate-equivalence
tests rely on.
"""

from __future__ import annotations

from typing import Callable, Dict, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class Tensor:
    """n-dimensional float32 array, optionally part of an autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "op", "parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf",
                 parents: Sequence["Tensor"] = ()):
        self.data = np.asarray(data, dtype=np.float32)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self.parents = tuple(parents)
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.data.shape})"


# A GradientSet maps each differentiable leaf reachable from the output to
# a float32 array of the leaf's shape.
GradientSet = Dict[Tensor, np.ndarray]


def _node(data, op: str, parents: Sequence[Tensor],
          backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents),
                 op=op, parents=parents)
    out._backward = backward
    return out


def _accum(t: Tensor, g) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: operand shapes {a.data.shape} and "
                         f"{b.data.shape} differ")


class Tape:
    """Topologically ordered record of the graph below one output node.

    Parents always precede their children in `nodes`.
    """

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, output: Tensor) -> "Tape":
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                stack.append((p, False))
        return cls(order)

    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if n.requires_grad and not n.parents]


def backward(output: Tensor, tape: Tape | None = None) -> GradientSet:
    """Reverse-mode gradients of a scalar output for every reachable leaf.

    Also leaves `.grad` populated on intermediate nodes, which callers may
    read for feature-map attributions. Gradients over fan-out accumulate
    by summation.
    """
    if output.data.size != 1:
        raise ValueError(f"backward requires a scalar output, got shape "
                         f"{output.data.shape}")
    if tape is None:
        tape = Tape.from_output(output)
    for n in tape.nodes:
        n.grad = None
    output.grad = np.ones_like(output.data)
    for n in reversed(tape.nodes):
        if n.grad is None or n._backward is None:
            continue
        n._backward(n.grad)
    grads: GradientSet = {}
    for leaf in tape.leaves():
        grads[leaf] = leaf.grad if leaf.grad is not None \
            else np.zeros_like(leaf.data)
    return grads


# ---------------------------------------------------------------------------
# elementwise and reduction primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)

    def bw(g):
        _accum(a, g)
        _accum(b, g)

    return _node(a.data + b.data, "add", (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)

    def bw(g):
        _accum(a, g)
        _accum(b, -g)

    return _node(a.data - b.data, "sub", (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)

    def bw(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _node(a.data * b.data, "mul", (a, b), bw)


def neg(a: Tensor) -> Tensor:
    def bw(g):
        _accum(a, -g)

    return _node(-a.data, "neg", (a,), bw)


def scale(a: Tensor, c: float) -> Tensor:
    c32 = np.float32(c)

    def bw(g):
        _accum(a, g * c32)

    return _node(a.data * c32, "scale", (a,), bw)


def sum_all(a: Tensor) -> Tensor:
    def bw(g):
        _accum(a, g)  # 0-d upstream broadcasts

    return _node(np.asarray(a.data.sum(), dtype=np.float32), "sum", (a,), bw)


def mean_all(a: Tensor) -> Tensor:
    n = np.float32(a.data.size)

    def bw(g):
        _accum(a, g / n)

    return _node(np.asarray(a.data.mean(), dtype=np.float32), "mean", (a,), bw)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    def bw(g):
        _accum(a, g.reshape(a.data.shape))

    return _node(a.data.reshape(shape), "reshape", (a,), bw)


def flatten(a: Tensor) -> Tensor:
    """Collapse all non-batch axes: (N, ...) -> (N, F)."""
    return reshape(a, (a.data.shape[0], -1))


def pick(a: Tensor, index: tuple[int, ...]) -> Tensor:
    """Scalar node selecting one element of a."""
    val = np.asarray(a.data[index], dtype=np.float32)

    def bw(g):
        full = np.zeros_like(a.data)
        full[index] = g
        _accum(a, full)

    return _node(val, "pick", (a,), bw)


def gather_rows(a: Tensor, cols: np.ndarray) -> Tensor:
    """Per-row element selection of a 2-d tensor: out[i] = a[i, cols[i]]."""
    if a.data.ndim != 2:
        raise ShapeError(f"gather_rows: expected 2-d input, got {a.data.shape}")
    rows = np.arange(a.data.shape[0])
    cols = np.asarray(cols, dtype=np.int64)

    def bw(g):
        full = np.zeros_like(a.data)
        full[rows, cols] = g
        _accum(a, full)

    return _node(a.data[rows, cols], "gather_rows", (a,), bw)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bw(g):
        _accum(a, g * mask)

    return _node(np.maximum(a.data, 0), "relu", (a,), bw)


def sign_binarize(a: Tensor) -> Tensor:
    """Elementwise sign with sign(0) = +1; backward is the clipped
    straight-through rule (see `ste_backward`)."""
    saved = a.data

    def bw(g):
        _accum(a, ste_backward(saved, g))

    out = np.where(saved >= 0, np.float32(1), np.float32(-1))
    return _node(out, "sign", (a,), bw)


def ste_backward(saved_input: np.ndarray, upstream_grad: np.ndarray) -> np.ndarray:
    """Clipped straight-through pseudo-gradient for the sign function.

    Passes the upstream gradient where |saved_input| <= 1 (boundary
    included), zero elsewhere.
    """
    saved_input = np.asarray(saved_input, dtype=np.float32)
    upstream_grad = np.asarray(upstream_grad, dtype=np.float32)
    if saved_input.shape != upstream_grad.shape:
        raise ShapeError(f"ste_backward: input shape {saved_input.shape} != "
                         f"upstream shape {upstream_grad.shape}")
    return upstream_grad * (np.abs(saved_input) <= 1)


def hardtanh(a: Tensor, lo: float = -1.0, hi: float = 1.0) -> Tensor:
    """clamp(x, lo, hi); gradient passes where lo <= x <= hi inclusive."""
    mask = (a.data >= lo) & (a.data <= hi)

    def bw(g):
        _accum(a, g * mask)

    return _node(np.clip(a.data, lo, hi), "hardtanh", (a,), bw)


def log_softmax(a: Tensor) -> Tensor:
    """Row-wise log softmax of a 2-d tensor, stabilized by max subtraction."""
    if a.data.ndim != 2:
        raise ShapeError(f"log_softmax: expected 2-d input, got {a.data.shape}")
    z = a.data - a.data.max(axis=1, keepdims=True)
    y = z - np.log(np.exp(z).sum(axis=1, keepdims=True))

    def bw(g):
        _accum(a, g - np.exp(y) * g.sum(axis=1, keepdims=True))

    return _node(y, "log_softmax", (a,), bw)


# ---------------------------------------------------------------------------
# linear and spatial primitives
# ---------------------------------------------------------------------------

def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map: (N,F) @ (F,G) + (G,)."""
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise ShapeError(f"dense: expected 2-d operands, got input "
                         f"{x.data.shape} and weight {w.data.shape}")
    n, f = x.data.shape
    fw, g_out = w.data.shape
    if f != fw:
        raise ShapeError(f"dense: input features {f} != weight rows {fw}")
    if b.data.shape != (g_out,):
        raise ShapeError(f"dense: bias shape {b.data.shape} != ({g_out},)")

    def bw(g):
        _accum(x, g @ w.data.T)
        _accum(w, x.data.T @ g)
        _accum(b, g.sum(axis=0))

    return _node(x.data @ w.data + b.data, "dense", (x, w, b), bw)


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1,
           padding: int = 0) -> Tensor:
    """Cross-correlation of NCHW input with OIHW weights (no kernel flip)."""
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-d NCHW input, got {x.data.shape}")
    if w.data.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-d OIHW weight, got {w.data.shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: bad stride {stride} or padding {padding}")
    n, c, h, wid = x.data.shape
    o, cw, kh, kw = w.data.shape
    if c != cw:
        raise ShapeError(f"conv2d: input channels {c} != weight channels {cw}")
    if b.data.shape != (o,):
        raise ShapeError(f"conv2d: bias shape {b.data.shape} != ({o},)")
    hp, wp = h + 2 * padding, wid + 2 * padding
    if hp < kh or wp < kw:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input "
                         f"{hp}x{wp}")
    if (hp - kh) % stride or (wp - kw) % stride:
        raise ShapeError(f"conv2d: extents ({hp}-{kh}, {wp}-{kw}) not exactly "
                         f"divisible by stride {stride}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding),
                             (padding, padding)))
    else:
        xp = x.data

    def window(arr, u, v):
        return arr[:, :, u:u + (ho - 1) * stride + 1:stride,
                   v:v + (wo - 1) * stride + 1:stride]

    out = np.zeros((n, o, ho, wo), dtype=np.float32)
    for u in range(kh):
        for v in range(kw):
            out += np.einsum("nchw,oc->nohw", window(xp, u, v),
                             w.data[:, :, u, v])
    out += b.data[None, :, None, None]

    def bw(g):
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for u in range(kh):
                for v in range(kw):
                    window(gxp, u, v)[...] += np.einsum(
                        "nohw,oc->nchw", g, w.data[:, :, u, v])
            gx = gxp[:, :, padding:padding + h, padding:padding + wid] \
                if padding else gxp
            _accum(x, gx)
        if w.requires_grad:
            gw = np.zeros_like(w.data)
            for u in range(kh):
                for v in range(kw):
                    gw[:, :, u, v] = np.einsum("nohw,nchw->oc", g,
                                               window(xp, u, v))
            _accum(w, gw)
        _accum(b, g.sum(axis=(0, 2, 3)))

    return _node(out, "conv2d", (x, w, b), bw)


def maxpool2d(x: Tensor, window: int, stride: int | None = None) -> Tensor:
    """Per-window maximum; backward routes the gradient to the first
    (row-major) maximal element of each window."""
    if x.data.ndim != 4:
        raise ShapeError(f"maxpool2d: expected 4-d input, got {x.data.shape}")
    stride = window if stride is None else stride
    if window < 1 or stride < 1:
        raise ValueError(f"maxpool2d: bad window {window} or stride {stride}")
    n, c, h, w = x.data.shape
    if window > h or window > w:
        raise ShapeError(f"maxpool2d: window {window} larger than input "
                         f"{h}x{w}")
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    out = np.empty((n, c, ho, wo), dtype=np.float32)
    idx = np.empty((n, c, ho, wo), dtype=np.int64)
    for i in range(ho):
        for j in range(wo):
            patch = x.data[:, :, i * stride:i * stride + window,
                           j * stride:j * stride + window].reshape(n, c, -1)
            k = patch.argmax(axis=2)  # first max in row-major window order
            out[:, :, i, j] = np.take_along_axis(patch, k[..., None], 2)[..., 0]
            idx[:, :, i, j] = k

    def bw(g):
        if not x.requires_grad:
            return
        gx = np.zeros_like(x.data)
        rows = np.arange(ho)[None, None, :, None] * stride + idx // window
        cols = np.arange(wo)[None, None, None, :] * stride + idx % window
        nn = np.arange(n)[:, None, None, None]
        cc = np.arange(c)[None, :, None, None]
        np.add.at(gx, (nn, cc, rows, cols), g)
        _accum(x, gx)

    return _node(out, "maxpool2d", (x,), bw)


# ---------------------------------------------------------------------------
# numerical differentiation
# ---------------------------------------------------------------------------

def finite_diff_gradient(f: Callable[[np.ndarray], float], x: np.ndarray,
                         h: float) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at
    a time: (f(x + h e_i) - f(x - h e_i)) / 2h. Returns float64."""
    if h <= 0:
        raise ValueError(f"h must be positive, got {h}")
    x = np.asarray(getattr(x, "data", x))
    grad = np.zeros(x.shape, dtype=np.float64)
    flat = grad.reshape(-1)
    for i in range(x.size):
        flat[i] = finite_diff_coordinate(f, x, i, h)
    return grad


def finite_diff_coordinate(f: Callable[[np.ndarray], float], x: np.ndarray,
                           flat_index: int, h: float) -> float:
    """Central difference along a single flat coordinate."""
    x = np.asarray(getattr(x, "data", x))
    xp = x.copy()
    xm = x.copy()
    xp.reshape(-1)[flat_index] += h
    xm.reshape(-1)[flat_index] -= h
    return (float(f(xp)) - float(f(xm))) / (2.0 * h)
