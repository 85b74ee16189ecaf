"""Dense float64 tensors with reverse-mode automatic differentiation.

Operations executed inside a ``with Tape() as tape:`` block are recorded in
execution order, which is already a topological order (every node's inputs
are created before the node). ``tape.backward(loss)`` therefore runs one
reverse sweep over the node list, visiting each node exactly once, and leaves
gradients on every grad-enabled tensor the tape saw (zeros for tensors the
loss does not reach).

Outside a tape, ops run as plain numpy forward computations.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .errors import ConfigError, DimensionError, NumericsError

_ACTIVE_TAPE: Optional["Tape"] = None


class Tensor:
    """A dense n-dimensional float64 array, optionally participating in a tape."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag}, grad={'on' if self.requires_grad else 'off'})"


class _Node:
    __slots__ = ("output", "inputs", "backward_fn")

    def __init__(self, output: Tensor, inputs: Sequence[Tensor], backward_fn: Callable):
        self.output = output
        self.inputs = tuple(inputs)
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of operations for one reverse-mode sweep."""

    def __init__(self):
        self._nodes: list[_Node] = []
        self._watched: dict[int, Tensor] = {}

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise ConfigError("tapes do not nest; close the active tape first")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc) -> None:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None

    def _record(self, output: Tensor, inputs: Sequence[Tensor], backward_fn: Callable) -> None:
        for t in inputs:
            if t.requires_grad:
                self._watched.setdefault(id(t), t)
        self._nodes.append(_Node(output, inputs, backward_fn))

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(tensor) into .grad of every watched tensor.

        Unreached grad-enabled tensors get zero gradients. The loss must be a
        scalar produced on (or watched by) this tape.
        """
        if loss.data.size != 1:
            raise DimensionError(f"backward requires a scalar loss, got shape {loss.data.shape}")
        known = {id(n.output) for n in self._nodes}
        if id(loss) not in known and not loss.requires_grad:
            raise ConfigError("loss is not reachable from this tape")

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self._nodes):
            out_grad = grads.pop(id(node.output), None)
            if out_grad is None:
                continue
            input_grads = node.backward_fn(out_grad)
            for t, g in zip(node.inputs, input_grads):
                if g is None or not t.requires_grad:
                    continue
                acc = grads.get(id(t))
                if acc is None:
                    grads[id(t)] = g.copy() if g.base is not None or g is out_grad else g
                else:
                    acc += g
        if loss.requires_grad:
            self._watched.setdefault(id(loss), loss)
        for key, t in self._watched.items():
            g = grads.get(key)
            add = g if g is not None else np.zeros_like(t.data)
            if t.grad is None:
                t.grad = np.array(add, dtype=np.float64, copy=True)
            else:
                t.grad += add


def backward(tape: Tape, loss: Tensor) -> None:
    """Functional alias for ``tape.backward(loss)``."""
    tape.backward(loss)


def _finish(out_data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    if not np.all(np.isfinite(out_data)):
        raise NumericsError("forward op produced a non-finite value (overflow)")
    req = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=req and _ACTIVE_TAPE is not None)
    if _ACTIVE_TAPE is not None and req:
        _ACTIVE_TAPE._record(out, inputs, backward_fn)
    return out


# ---------------------------------------------------------------------------
# elementwise and structural ops


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} differ")

    def bwd(g):
        return g, g

    return _finish(a.data + b.data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} differ")

    def bwd(g):
        return g * b.data, g * a.data

    return _finish(a.data * b.data, (a, b), bwd)


def scale(a: Tensor, factor: float) -> Tensor:
    f = float(factor)

    def bwd(g):
        return (g * f,)

    return _finish(a.data * f, (a,), bwd)


def tsum(a: Tensor) -> Tensor:
    shape = a.shape

    def bwd(g):
        return (np.broadcast_to(g, shape),)

    return _finish(np.asarray(a.data.sum()), (a,), bwd)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    old = a.shape

    def bwd(g):
        return (g.reshape(old),)

    return _finish(a.data.reshape(shape), (a,), bwd)


def flatten(a: Tensor) -> Tensor:
    return reshape(a, (a.size,))


def concat(a: Tensor, b: Tensor, axis: int = 0) -> Tensor:
    if a.data.ndim != b.data.ndim:
        raise DimensionError(f"concat: ranks {a.data.ndim} and {b.data.ndim} differ")
    for d in range(a.data.ndim):
        if d != axis % a.data.ndim and a.shape[d] != b.shape[d]:
            raise DimensionError(f"concat: shapes {a.shape} and {b.shape} differ off axis {axis}")
    split = a.shape[axis % a.data.ndim]
    ax = axis % a.data.ndim

    def bwd(g):
        ga = np.take(g, range(split), axis=ax)
        gb = np.take(g, range(split, g.shape[ax]), axis=ax)
        return ga, gb

    return _finish(np.concatenate([a.data, b.data], axis=ax), (a, b), bwd)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bwd(g):
        return (g * mask,)

    return _finish(np.maximum(a.data, 0.0), (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(g):
        return (g * out * (1.0 - out),)

    return _finish(out, (a,), bwd)


def dropout(a: Tensor, rate: float, train_mode: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout: zero with probability ``rate`` and scale survivors at
    train time; identity in eval mode."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0,1), got {rate}")
    if not train_mode or rate == 0.0:
        def bwd_id(g):
            return (g,)

        return _finish(a.data.copy(), (a,), bwd_id)
    if rng is None:
        raise ConfigError("train-mode dropout needs an explicit rng for reproducibility")
    keep = rng.random(a.shape) >= rate
    factor = 1.0 / (1.0 - rate)
    mask = keep * factor

    def bwd(g):
        return (g * mask,)

    return _finish(a.data * mask, (a,), bwd)


# ---------------------------------------------------------------------------
# neural-net ops


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Fully-connected layer on a vector: out_i = sum_j W[i,j] x[j] + b[i]."""
    if x.data.ndim != 1 or weight.data.ndim != 2:
        raise DimensionError(f"linear expects vector and matrix, got {x.shape} and {weight.shape}")
    m, n = weight.shape
    if x.shape[0] != n or bias.shape != (m,):
        raise DimensionError(
            f"linear: weight {weight.shape} needs input ({n},) and bias ({m},), "
            f"got input {x.shape} and bias {bias.shape}"
        )

    def bwd(g):
        gx = weight.data.T @ g if x.requires_grad else None
        gw = np.outer(g, x.data) if weight.requires_grad else None
        gb = g if bias.requires_grad else None
        return gx, gw, gb

    return _finish(weight.data @ x.data + bias.data, (x, weight, bias), bwd)


def conv2d(x: Tensor, kernels_t: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of (C,H,W) input with (O,C,k,k) kernels plus
    per-output-channel bias."""
    if x.data.ndim != 3 or kernels_t.data.ndim != 4:
        raise DimensionError(f"conv2d expects (C,H,W) and (O,C,k,k), got {x.shape} and {kernels_t.shape}")
    C, H, W = x.shape
    O, Ck, k, k2 = kernels_t.shape
    if k != k2:
        raise DimensionError(f"conv2d kernels must be square, got {kernels_t.shape}")
    if Ck != C:
        raise DimensionError(f"conv2d: input has {C} channels but kernels expect {Ck} "
                             f"(input {x.shape}, kernels {kernels_t.shape})")
    if stride < 1:
        raise ConfigError(f"conv2d stride must be >= 1, got {stride}")
    if k > H + 2 * padding or k > W + 2 * padding:
        raise DimensionError(f"conv2d: kernel {k} exceeds padded input {(H + 2 * padding, W + 2 * padding)}")
    if bias is None:
        bias = Tensor(np.zeros(O))
    elif bias.shape != (O,):
        raise DimensionError(f"conv2d bias must be ({O},), got {bias.shape}")

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data
    xp = np.ascontiguousarray(xp)
    out = kernels.conv2d_forward(xp, np.ascontiguousarray(kernels_t.data),
                                 np.ascontiguousarray(bias.data), stride)
    Hp, Wp = xp.shape[1], xp.shape[2]

    def bwd(g):
        g = np.ascontiguousarray(g)
        gx = None
        if x.requires_grad:
            dxp = kernels.conv2d_backward_input(g, kernels_t.data, stride, Hp, Wp)
            gx = dxp[:, padding:Hp - padding, padding:Wp - padding] if padding else dxp
            gx = np.ascontiguousarray(gx)
        gw = gb = None
        if kernels_t.requires_grad or bias.requires_grad:
            gw, gb = kernels.conv2d_backward_kernel(g, xp, k, stride)
        return gx, gw, gb

    return _finish(np.asarray(out), (x, kernels_t, bias), bwd)


def max_pool2d(x: Tensor, window: int) -> Tensor:
    """Non-overlapping max pooling; gradient goes to the first row-major
    maximum of each window."""
    if x.data.ndim != 3:
        raise DimensionError(f"max_pool2d expects (C,H,W), got {x.shape}")
    C, H, W = x.shape
    if window > H or window > W:
        raise DimensionError(f"max_pool2d: window {window} exceeds spatial dims {(H, W)}")
    out, idx = kernels.maxpool_forward(np.ascontiguousarray(x.data), window)

    def bwd(g):
        return (kernels.maxpool_backward(np.ascontiguousarray(g), idx, H, W),)

    return _finish(np.asarray(out), (x,), bwd)


def bce_with_logits(logit: Tensor, label: float) -> Tensor:
    """Binary cross-entropy on a raw logit, in the stable log-sum-exp form."""
    if logit.data.size != 1:
        raise DimensionError(f"bce_with_logits expects a scalar logit, got shape {logit.shape}")
    y = float(label)
    if y not in (0.0, 1.0):
        raise ConfigError(f"label must be 0 or 1, got {label}")
    z = float(logit.data.reshape(()))
    # max(z,0) - z*y + log(1 + exp(-|z|))
    loss = max(z, 0.0) - z * y + np.log1p(np.exp(-abs(z)))
    sig = 1.0 / (1.0 + np.exp(-z)) if z >= 0 else np.exp(z) / (1.0 + np.exp(z))

    def bwd(g):
        return (np.full_like(logit.data, float(g) * (sig - y)),)

    return _finish(np.asarray(loss), (logit,), bwd)


def mean_of(losses: Sequence[Tensor]) -> Tensor:
    """Mean of scalar tensors via a deterministic left-to-right add chain."""
    if not losses:
        raise ConfigError("mean_of needs at least one tensor")
    total = losses[0]
    for t in losses[1:]:
        total = add(total, t)
    return scale(total, 1.0 / len(losses))
