"""Dense tensors with reverse-mode automatic differentiation.

The primitive set is deliberately small: matmul, add, mul, concat, relu,
tanh, sigmoid, log, softmax, l2_normalize, mean/sum reductions, embedding
lookup, basic slicing/reshape, dropout, and an LSTM cell composed from the
above.  Everything else in the package composes from these.

A recorded graph (the computation record) is single-threaded.  Parameters
may be shared read-only between graphs; merging gradients from parallel
graphs is the caller's job.  ``backward`` zeroes every gradient reachable
from the loss before accumulating, so repeated calls on the same graph are
deterministic.

Training runs in float32 by default; gradient checking requires float64
(finite differences are unreliable in single precision).
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / FD probes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A dense row-major array plus an optional gradient and graph edge."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data)
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(np.float32)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Reverse-mode sweep from a scalar loss.

        Populates ``.grad`` on every tensor in the graph; tensors with
        ``requires_grad`` that are not on any path to the loss keep a zero
        gradient (allocated lazily by the optimizer as needed).
        """
        if self.data.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {self.shape}")
        order = _toposort(self)
        for t in order:
            t.grad = None
        self.grad = np.ones_like(self.data)
        for t in reversed(order):
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype})"

    # operator sugar; the module-level functions do the work
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)


def _toposort(root: Tensor) -> list[Tensor]:
    # iterative DFS; unrolled sequence graphs overflow the recursion limit
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _record(out: Tensor, parents: Sequence[Tensor], backward: Callable[[np.ndarray], None]):
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to the shape of a broadcast operand."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    _record(out, (a, b), backward)
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    _record(out, (a, b), backward)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ContractError("matmul operands must be at least 2-D")
    out = Tensor(np.matmul(a.data, b.data))

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accumulate(_unbroadcast(gb, b.shape))

    _record(out, (a, b), backward)
    return out


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat of zero tensors")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        pieces = np.split(g, splits, axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                t._accumulate(piece)

    _record(out, tensors, backward)
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * (x.data > 0))

    _record(out, (x,), backward)
    return out


def tanh(x: Tensor) -> Tensor:
    out = Tensor(np.tanh(x.data))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * (1.0 - out.data * out.data))

    _record(out, (x,), backward)
    return out


def sigmoid(x: Tensor) -> Tensor:
    # two-branch form: exp only ever sees non-positive arguments
    pos = x.data >= 0
    e = np.exp(np.where(pos, -x.data, x.data))
    out = Tensor(np.where(pos, 1.0 / (1.0 + e), e / (1.0 + e)))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * out.data * (1.0 - out.data))

    _record(out, (x,), backward)
    return out


def log(x: Tensor) -> Tensor:
    out = Tensor(np.log(x.data))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g / x.data)

    _record(out, (x,), backward)
    return out


def softmax(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Stable softmax over the last axis.

    ``mask`` (broadcastable boolean, True = keep) forces masked positions to
    probability exactly 0.  Rows with no unmasked position come out all-zero;
    callers that consider that illegal must check first.
    """
    if x.data.size == 0 or x.data.shape[-1] == 0:
        raise ContractError("softmax of an empty vector")
    if mask is None:
        shifted = x.data - x.data.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
    else:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), x.data.shape)
        low = np.where(m, x.data, -np.inf).max(axis=-1, keepdims=True)
        low = np.where(np.isfinite(low), low, 0.0)  # all-masked rows
        e = np.exp(x.data - low) * m
    denom = e.sum(axis=-1, keepdims=True)
    safe = np.where(denom > 0, denom, 1.0)
    out = Tensor(e / safe)

    def backward(g):
        if x.requires_grad:
            y = out.data
            inner = (g * y).sum(axis=-1, keepdims=True)
            x._accumulate(y * (g - inner))

    _record(out, (x,), backward)
    return out


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale rows (last axis) to unit Euclidean norm; rows with norm <= eps
    come out as zero vectors instead of dividing by ~0."""
    norm = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    keep = norm > eps
    safe = np.where(keep, norm, 1.0)
    out = Tensor(np.where(keep, x.data / safe, 0.0))

    def backward(g):
        if x.requires_grad:
            y = out.data
            inner = (g * y).sum(axis=-1, keepdims=True)
            x._accumulate(np.where(keep, (g - y * inner) / safe, 0.0))

    _record(out, (x,), backward)
    return out


def mean(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out = Tensor(x.data.mean(axis=axis, keepdims=keepdims))
    count = x.data.size if axis is None else x.data.shape[axis]

    def backward(g):
        if x.requires_grad:
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            x._accumulate(np.broadcast_to(g, x.shape) / count)

    _record(out, (x,), backward)
    return out


def tsum(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if x.requires_grad:
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            x._accumulate(np.broadcast_to(g, x.shape).copy())

    _record(out, (x,), backward)
    return out


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g.reshape(x.shape))

    _record(out, (x,), backward)
    return out


def take(x: Tensor, index) -> Tensor:
    """Basic indexing (ints / slices / tuples thereof)."""
    out = Tensor(x.data[index])

    def backward(g):
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            x.grad[index] += g

    _record(out, (x,), backward)
    return out


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Pick one column per row: out[i] = x[i, idx[i]]."""
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(x.data.shape[0])
    out = Tensor(x.data[rows, idx])

    def backward(g):
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            np.add.at(x.grad, (rows, idx), g)

    _record(out, (x,), backward)
    return out


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ContractError("embedding id out of vocabulary range")
    out = Tensor(table.data[ids])

    def backward(g):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, ids, g)

    _record(out, (table,), backward)
    return out


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; callers skip the call entirely at eval time."""
    if rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    out = Tensor(x.data * keep)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * keep)

    _record(out, (x,), backward)
    return out


@dataclass
class LstmCellParams:
    """Fused gate parameters; gate order along the last axis is (i, f, g, o)."""

    w_x: Tensor  # [input_size, 4*hidden]
    w_h: Tensor  # [hidden, 4*hidden]
    b: Tensor    # [4*hidden]

    @property
    def input_size(self) -> int:
        return self.w_x.shape[0]

    @property
    def hidden_size(self) -> int:
        return self.w_h.shape[0]


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, p: LstmCellParams) -> tuple[Tensor, Tensor]:
    """One step of a standard LSTM; x [B, in], h and c [B, hidden]."""
    hid = p.hidden_size
    if x.shape[-1] != p.input_size or h.shape[-1] != hid or c.shape[-1] != hid:
        raise ContractError(
            f"lstm_cell dims: x {x.shape}, h {h.shape}, c {c.shape} vs "
            f"params ({p.input_size} -> {hid})"
        )
    z = add(add(matmul(x, p.w_x), matmul(h, p.w_h)), p.b)
    i = sigmoid(z[..., 0 * hid:1 * hid])
    f = sigmoid(z[..., 1 * hid:2 * hid])
    g = tanh(z[..., 2 * hid:3 * hid])
    o = sigmoid(z[..., 3 * hid:4 * hid])
    c2 = add(mul(f, c), mul(i, g))
    h2 = mul(o, tanh(c2))
    return h2, c2


def backward(loss: Tensor, params: Iterable[Tensor]) -> dict[str, np.ndarray]:
    """Run the reverse sweep and return a gradient per named parameter.

    Parameters not on any path to the loss map to zero gradients.
    """
    loss.backward()
    grads: dict[str, np.ndarray] = {}
    for i, p in enumerate(params):
        key = p.name if p.name is not None else f"param_{i}"
        grads[key] = p.grad if p.grad is not None else np.zeros_like(p.data)
    return grads


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Max over parameters of |analytic - central-FD| / max(|analytic|, |FD|, 1e-8).

    |.| is the Euclidean magnitude of the parameter's gradient, so the check
    is insensitive to individual coordinates whose true gradient sits below
    the float64 finite-difference noise floor (~1e-11 for a unit-scale
    loss at this eps).  ``f`` rebuilds the forward graph on each call and is
    evaluated 2 * #scalars + 1 times; use float64 parameters and disable
    dropout.
    """
    loss = f()
    loss.backward()
    analytic = [np.array(p.grad) if p.grad is not None else np.zeros_like(p.data) for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            with no_grad():
                up = f().item()
            flat[i] = orig - eps
            with no_grad():
                down = f().item()
            flat[i] = orig
            fd[i] = (up - down) / (2.0 * eps)
        ga_flat = ga.reshape(-1)
        denom = max(float(np.linalg.norm(ga_flat)), float(np.linalg.norm(fd)), 1e-8)
        worst = max(worst, float(np.linalg.norm(ga_flat - fd)) / denom)
    return worst
