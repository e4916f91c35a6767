"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Everything is float64. A ``Tensor`` wraps a numpy array and, when it is the
result of a differentiable op, remembers its parents and a backward closure.
Tensors are immutable values: ops never write into an input array, so the
creation order of tensors is already a topological order of the compute
graph. ``Tape`` exploits that: it is the ordered record of grad-requiring
nodes reachable from a scalar root, and the backward pass walks it in exact
reverse creation order.

Only the layers this project uses are supported: 2-D matmul, elementwise
arithmetic with numpy-style broadcasting on add/sub/mul, a handful of
nonlinearities, concat/split/column-gather, reshape, reductions, MSE,
stride-2 convolutions (direct and transposed via zero dilation) and global
average pooling. No GPU, no higher-order derivatives.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import DimensionError, DomainError, NonFiniteError, OptimizerError, TapeError

_node_ids = itertools.count()


def _as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by op '{op}'")


class Tensor:
    """Immutable float64 array with optional gradient tracking.

    ``data`` must never be mutated after construction; the optimizer is the
    single sanctioned exception and only touches leaf parameters between
    backward passes.
    """

    __slots__ = ("data", "requires_grad", "grad", "_nid", "_parents", "_bwd", "_op", "_spent")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _bwd=None, _op="leaf"):
        self.data = _as_f64(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._nid = next(_node_ids)
        self._parents = _parents
        self._bwd = _bwd
        self._op = _op
        self._spent = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Same values, no graph connection."""
        return Tensor(self.data)

    def backward(self) -> None:
        """Reverse-mode pass from this scalar; fills ``.grad`` on leaves."""
        Tape.from_root(self).run(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op!r}, grad={self.requires_grad})"

    # operator sugar; python scalars become constant tensors
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of the grad-requiring nodes reachable from one root.

    Creation order is a valid topological order because tensors are
    immutable: every op's inputs exist before its output. ``run`` seeds the
    root with gradient 1, visits nodes in exact reverse creation order and
    lets each node's backward closure accumulate into its parents. A root
    can only be run once; rerunning would silently double-accumulate leaf
    gradients.
    """

    def __init__(self, nodes: list[Tensor]):
        self._nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        if root.data.size != 1:
            raise DimensionError("backward() requires a scalar root")
        if not root.requires_grad:
            raise TapeError("backward() on a tensor with no grad-requiring ancestry")
        seen: dict[int, Tensor] = {}
        stack = [root]
        while stack:
            t = stack.pop()
            if t._nid in seen:
                continue
            seen[t._nid] = t
            for p in t._parents:
                if p.requires_grad and p._nid not in seen:
                    stack.append(p)
        return cls(sorted(seen.values(), key=lambda t: t._nid))

    def run(self, root: Tensor) -> None:
        if root._spent:
            raise TapeError("second backward pass on the same root; rebuild the graph first")
        root._spent = True
        root.grad = np.ones_like(root.data)
        for node in reversed(self._nodes):
            if node._bwd is not None and node.grad is not None:
                node._bwd(node.grad)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _make(data: np.ndarray, parents: tuple, bwd, op: str, check: bool = True) -> Tensor:
    if check:
        _check_finite(data, op)
    req = any(p.requires_grad for p in parents)
    if not req:
        return Tensor(data, _op=op)
    return Tensor(data, requires_grad=True, _parents=parents, _bwd=bwd, _op=op)


# ---------------------------------------------------------------------------
# elementwise and linear ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data + b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), bwd, "add")


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data - b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _make(out_data, (a, b), bwd, "sub")


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data * b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), bwd, "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul inner dims disagree: {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _make(out_data, (a, b), bwd, "matmul")


def exp(a) -> Tensor:
    a = _wrap(a)
    with np.errstate(over="ignore"):
        out_data = np.exp(a.data)

    def bwd(g):
        _accumulate(a, g * out_data)

    return _make(out_data, (a,), bwd, "exp")


def tanh(a) -> Tensor:
    a = _wrap(a)
    out_data = np.tanh(a.data)

    def bwd(g):
        _accumulate(a, g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), bwd, "tanh")


def relu(a) -> Tensor:
    a = _wrap(a)
    out_data = np.maximum(a.data, 0.0)

    def bwd(g):
        _accumulate(a, g * (a.data > 0.0))

    return _make(out_data, (a,), bwd, "relu")


def leaky_relu(a, alpha: float = 0.01) -> Tensor:
    a = _wrap(a)
    out_data = np.where(a.data > 0.0, a.data, alpha * a.data)

    def bwd(g):
        _accumulate(a, g * np.where(a.data > 0.0, 1.0, alpha))

    return _make(out_data, (a,), bwd, "leaky_relu")


def sin(a) -> Tensor:
    a = _wrap(a)
    out_data = np.sin(a.data)

    def bwd(g):
        _accumulate(a, g * np.cos(a.data))

    return _make(out_data, (a,), bwd, "sin")


def cos(a) -> Tensor:
    a = _wrap(a)
    out_data = np.cos(a.data)

    def bwd(g):
        _accumulate(a, -g * np.sin(a.data))

    return _make(out_data, (a,), bwd, "cos")


def acos(a) -> Tensor:
    """Arccosine; inputs must stay strictly inside (-1, 1)."""
    a = _wrap(a)
    if np.any(np.abs(a.data) >= 1.0):
        raise DomainError("acos input touches +-1; clip first")
    out_data = np.arccos(a.data)

    def bwd(g):
        _accumulate(a, -g / np.sqrt(1.0 - a.data * a.data))

    return _make(out_data, (a,), bwd, "acos")


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values into [lo, hi]; gradient is zero where the clamp binds."""
    a = _wrap(a)
    out_data = np.clip(a.data, lo, hi)

    def bwd(g):
        _accumulate(a, g * ((a.data > lo) & (a.data < hi)))

    return _make(out_data, (a,), bwd, "clip")


def sigmoid(a) -> Tensor:
    """Logistic squashing, composed from tanh."""
    return mul(add(tanh(mul(a, 0.5)), 1.0), 0.5)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def concat(parts: list[Tensor], axis: int = 1) -> Tensor:
    parts = [_wrap(p) for p in parts]
    ref = parts[0].data.shape
    for p in parts:
        s = p.data.shape
        if len(s) != len(ref) or any(s[i] != ref[i] for i in range(len(ref)) if i != axis):
            raise DimensionError(f"concat off-axis shape mismatch: {s} vs {ref}")
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    offsets = np.cumsum([0] + [p.data.shape[axis] for p in parts])

    def bwd(g):
        for p, a, b in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(a, b)
            _accumulate(p, g[tuple(idx)])

    return _make(out_data, tuple(parts), bwd, "concat", check=False)


def narrow(t: Tensor, start: int, stop: int, axis: int = 1) -> Tensor:
    """Contiguous slice along one axis."""
    t = _wrap(t)
    if not (0 <= start <= stop <= t.data.shape[axis]):
        raise DimensionError(f"narrow [{start}:{stop}) outside axis of length {t.data.shape[axis]}")
    idx = [slice(None)] * t.data.ndim
    idx[axis] = slice(start, stop)
    out_data = t.data[tuple(idx)].copy()

    def bwd(g):
        if t.requires_grad:
            full = np.zeros_like(t.data)
            full[tuple(idx)] = g
            _accumulate(t, full)

    return _make(out_data, (t,), bwd, "narrow", check=False)


def split(t: Tensor, sizes: list[int], axis: int = 1) -> list[Tensor]:
    t = _wrap(t)
    if sum(sizes) != t.data.shape[axis]:
        raise DimensionError(f"split sizes {sizes} do not sum to axis length {t.data.shape[axis]}")
    outs, at = [], 0
    for s in sizes:
        outs.append(narrow(t, at, at + s, axis))
        at += s
    return outs


def gather_cols(t: Tensor, idx: np.ndarray) -> Tensor:
    """Column permutation/selection: out[:, j] = t[:, idx[j]]."""
    t = _wrap(t)
    idx = np.asarray(idx, dtype=np.intp)
    out_data = t.data[:, idx]

    def bwd(g):
        if t.requires_grad:
            full = np.zeros_like(t.data)
            np.add.at(full, (slice(None), idx), g)
            _accumulate(t, full)

    return _make(out_data, (t,), bwd, "gather_cols", check=False)


def reshape(t: Tensor, shape) -> Tensor:
    t = _wrap(t)
    out_data = t.data.reshape(shape)

    def bwd(g):
        _accumulate(t, g.reshape(t.data.shape))

    return _make(out_data, (t,), bwd, "reshape", check=False)


# ---------------------------------------------------------------------------
# reductions and losses
# ---------------------------------------------------------------------------

def tsum(t: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    t = _wrap(t)
    out_data = t.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            _accumulate(t, np.broadcast_to(g, t.data.shape).copy())
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            _accumulate(t, np.broadcast_to(ge, t.data.shape).copy())

    return _make(out_data, (t,), bwd, "sum", check=False)


def tmean(t: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    t = _wrap(t)
    n = t.data.size if axis is None else t.data.shape[axis]
    return mul(tsum(t, axis=axis, keepdims=keepdims), 1.0 / n)


def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error; gradient w.r.t. pred is 2*(pred-target)/n."""
    pred, target = _wrap(pred), _wrap(target)
    if pred.data.shape != target.data.shape:
        raise DimensionError(f"mse shape mismatch: {pred.data.shape} vs {target.data.shape}")
    diff = pred.data - target.data
    out_data = np.array(np.mean(diff * diff))
    n = pred.data.size

    def bwd(g):
        scaled = (2.0 / n) * float(g) * diff
        _accumulate(pred, scaled)
        _accumulate(target, -scaled)

    return _make(out_data, (pred, target), bwd, "mse")


# ---------------------------------------------------------------------------
# image ops (NHWC layout)
# ---------------------------------------------------------------------------

def _im2col(x: np.ndarray, k: int, stride: int, pad: int):
    n, h, w, c = x.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
    sn, sh, sw, sc = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, ho, wo, k, k, c),
        strides=(sn, sh * stride, sw * stride, sh, sw, sc),
        writeable=False,
    )
    return view.reshape(n, ho, wo, k * k * c), ho, wo


def _col2im(gcols: np.ndarray, x_shape, k: int, stride: int, pad: int) -> np.ndarray:
    n, h, w, c = x_shape
    _, ho, wo, _ = gcols.shape
    gc = gcols.reshape(n, ho, wo, k, k, c)
    gx = np.zeros((n, h + 2 * pad, w + 2 * pad, c))
    for i in range(k):
        for j in range(k):
            gx[:, i:i + ho * stride:stride, j:j + wo * stride:stride, :] += gc[:, :, :, i, j, :]
    return gx[:, pad:pad + h, pad:pad + w, :] if pad else gx


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 2, pad: int = 1) -> Tensor:
    """2-D convolution on (N,H,W,Cin) with weights (k,k,Cin,Cout)."""
    x, w, b = _wrap(x), _wrap(w), _wrap(b)
    k = w.data.shape[0]
    if w.data.shape[1] != k or w.data.shape[2] != x.data.shape[3]:
        raise DimensionError(f"conv2d weight {w.data.shape} does not match input {x.data.shape}")
    n = x.data.shape[0]
    cout = w.data.shape[3]
    cols, ho, wo = _im2col(x.data, k, stride, pad)
    flat = cols.reshape(-1, cols.shape[-1])
    wmat = w.data.reshape(-1, cout)
    out_data = (flat @ wmat + b.data).reshape(n, ho, wo, cout)

    def bwd(g):
        gflat = g.reshape(-1, cout)
        _accumulate(w, (flat.T @ gflat).reshape(w.data.shape))
        _accumulate(b, gflat.sum(axis=0))
        if x.requires_grad:
            gcols = (gflat @ wmat.T).reshape(n, ho, wo, -1)
            _accumulate(x, _col2im(gcols, x.data.shape, k, stride, pad))

    return _make(out_data, (x, w, b), bwd, "conv2d")


def zero_dilate(x: Tensor, stride: int) -> Tensor:
    """Insert stride-1 zeros between pixels; building block of transposed conv."""
    x = _wrap(x)
    n, h, w, c = x.data.shape
    out_data = np.zeros((n, stride * (h - 1) + 1, stride * (w - 1) + 1, c))
    out_data[:, ::stride, ::stride, :] = x.data

    def bwd(g):
        _accumulate(x, g[:, ::stride, ::stride, :].copy())

    return _make(out_data, (x,), bwd, "zero_dilate", check=False)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 2, pad: int = 1) -> Tensor:
    """Transposed convolution, realized as zero dilation + unit-stride conv.

    ``w`` is stored directly in the equivalent-convolution layout
    (k, k, Cin, Cout), so output size is stride*H for k=4, stride=2, pad=1.
    """
    k = w.data.shape[0]
    return conv2d(zero_dilate(x, stride), w, b, stride=1, pad=k - 1 - pad)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial axes: (N,H,W,C) -> (N,C)."""
    x = _wrap(x)
    n, h, w, c = x.data.shape
    out_data = x.data.mean(axis=(1, 2))

    def bwd(g):
        _accumulate(x, np.broadcast_to(g[:, None, None, :] / (h * w), x.data.shape).copy())

    return _make(out_data, (x,), bwd, "global_avg_pool", check=False)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: dict, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[dict[str, np.ndarray], dict]:
    """One bias-corrected Adam update on plain arrays; pure, returns copies.

    ``state`` is ``{"m": {...}, "v": {...}, "t": int}``; pass ``{}`` for a
    fresh start. Missing gradients count as zero (the moments still decay).
    """
    if not state:
        state = {"m": {k: np.zeros_like(v) for k, v in params.items()},
                 "v": {k: np.zeros_like(v) for k, v in params.items()},
                 "t": 0}
    t = state["t"] + 1
    new_params, new_m, new_v = {}, {}, {}
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        elif not np.all(np.isfinite(g)):
            raise OptimizerError(f"non-finite gradient for parameter '{name}'")
        if g.shape != p.shape:
            raise OptimizerError(f"gradient shape {g.shape} != param shape {p.shape} for '{name}'")
        m = beta1 * state["m"][name] + (1.0 - beta1) * g
        v = beta2 * state["v"][name] + (1.0 - beta2) * (g * g)
        step = lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        new_params[name] = p - step
        new_m[name] = m
        new_v[name] = v
    return new_params, {"m": new_m, "v": new_v, "t": t}


class Adam:
    """Adam over a dict of named leaf tensors; mutates their .data in place."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state: dict = {}

    def step(self, lr: float | None = None) -> None:
        arrs = {k: t.data for k, t in self.params.items()}
        grads = {k: t.grad for k, t in self.params.items() if t.grad is not None}
        new, self.state = adam_step(arrs, grads, self.state,
                                    self.lr if lr is None else lr,
                                    self.beta1, self.beta2, self.eps)
        for k, t in self.params.items():
            t.data = new[k]

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Flatten optimizer state for checkpointing."""
        out = {}
        if self.state:
            for k in self.params:
                out[f"adam.m.{k}"] = self.state["m"][k]
                out[f"adam.v.{k}"] = self.state["v"][k]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], t: int) -> None:
        if t == 0:
            self.state = {}
            return
        self.state = {
            "m": {k: np.array(arrays[f"adam.m.{k}"]) for k in self.params},
            "v": {k: np.array(arrays[f"adam.v.{k}"]) for k in self.params},
            "t": t,
        }
