"""Small reverse-mode autodiff over float64 numpy arrays.

Only what the agent needs: dense layers, elementwise nonlinearities,
reductions, log-softmax / gather for categorical policies, and Adam.
Every dense layer reports its multiply-adds to the active ``OpCounter``.
"""

from __future__ import annotations

import contextlib
import struct
from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Dimension mismatch between operands."""


class ContractError(ValueError):
    """A precondition of an operation was violated."""


# ---------------------------------------------------------------------------
# op counting

class OpCounter:
    """Cumulative scalar multiply-add counts keyed by component tag."""

    def __init__(self):
        self.counts: dict[str, int] = {}

    def add(self, tag: str, n: int) -> None:
        self.counts[tag] = self.counts.get(tag, 0) + int(n)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def snapshot(self) -> dict[str, int]:
        return dict(self.counts)


_COUNTERS: list[OpCounter] = []


@contextlib.contextmanager
def counting(counter: OpCounter):
    _COUNTERS.append(counter)
    try:
        yield counter
    finally:
        _COUNTERS.pop()


def _count(tag: str, n: int) -> None:
    if _COUNTERS:
        _COUNTERS[-1].add(tag, n)


# ---------------------------------------------------------------------------
# tensors

def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; numpy must defer to the reflected methods below
    __array_ufunc__ = None

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return mul(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)
    def __pow__(self, p: float): return power(self, p)
    def __getitem__(self, idx): return getitem(self, idx)

    def sum(self, axis=None, keepdims=False): return tsum(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward) -> Tensor:
    live = tuple(p for p in parents if p.requires_grad)
    if not live:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def power(a: Tensor, p: float) -> Tensor:
    return _node(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),))


def square(a: Tensor) -> Tensor:
    return _node(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    return _node(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def linear(x, w: Tensor, b: Tensor, tag: str = "shared") -> Tensor:
    """``x @ w + b`` with multiply-add accounting (forward and backward)."""
    x = as_tensor(x)
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input width {x.shape[-1]} != {w.shape[0]}")
    rows = x.data.shape[0] if x.ndim > 1 else 1
    macs = rows * w.shape[0] * w.shape[1]
    _count(tag, macs)

    def backward(g):
        n = 0
        gx = gw = None
        if x.requires_grad:
            gx = g @ w.data.T
            n += macs
        if w.requires_grad:
            gw = x.data.reshape(rows, -1).T @ g.reshape(rows, -1)
            n += macs
        _count(tag, n)
        gb = g.reshape(rows, -1).sum(axis=0) if b.requires_grad else None
        return gx, gw, gb

    return _node(x.data @ w.data + b.data, (x, w, b), backward)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def sigmoid(a: Tensor) -> Tensor:
    out = _np_sigmoid(a.data)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def log_sigmoid(a: Tensor) -> Tensor:
    # log(sigmoid(a)) = -softplus(-a)
    out = -np.logaddexp(0.0, -a.data)
    return _node(out, (a,), lambda g: (g * _np_sigmoid(-a.data),))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    mask = (a.data >= lo) & (a.data <= hi)
    return _node(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,))


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data <= b.data
    return _node(np.where(pick_a, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(g * pick_a, a.shape),
                            _unbroadcast(g * ~pick_a, b.shape)))


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def getitem(a: Tensor, idx) -> Tensor:
    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)
    return _node(a.data[idx], (a,), backward)


def concat(parts, axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]
    return _node(np.concatenate([p.data for p in parts], axis=axis), tuple(parts),
                 lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(parts, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    return _node(np.stack([p.data for p in parts], axis=axis), tuple(parts),
                 lambda g: tuple(np.moveaxis(g, axis, 0)))


def log_softmax(a: Tensor) -> Tensor:
    out = a.data - _np_logsumexp(a.data)
    soft = np.exp(out)
    return _node(out, (a,), lambda g: (g - soft * g.sum(axis=-1, keepdims=True),))


def take_rows(a: Tensor, cols: np.ndarray) -> Tensor:
    """Select ``a[r, cols[r]]`` for every row ``r``."""
    rows = np.arange(a.shape[0])
    cols = np.asarray(cols, dtype=np.int64)
    return getitem(a, (rows, cols))


def _np_sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -x))


def _np_logsumexp(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    return m + np.log(np.exp(x - m).sum(axis=-1, keepdims=True))


np_sigmoid = _np_sigmoid
np_logsumexp = _np_logsumexp


# ---------------------------------------------------------------------------
# backward pass

def _toposort(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Returns the map ``{leaf: gradient}`` for this call only.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    grads = {id(loss): np.ones_like(loss.data)}
    leaves: dict[Tensor, np.ndarray] = {}
    for node in reversed(_toposort(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            leaves[node] = g
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    return leaves


# ---------------------------------------------------------------------------
# networks

def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


_ACTIVATIONS = {"tanh": (tanh, np.tanh), "relu": (relu, lambda v: np.maximum(v, 0.0))}


class Mlp:
    """Dense network; ``sizes`` lists input, hidden and output widths.

    Hidden layers use ``activation``; the output layer is linear.
    """

    def __init__(self, sizes, activation: str = "tanh", rng: np.random.Generator | None = None,
                 tag: str = "shared", name: str = "mlp"):
        if len(sizes) < 2 or any(int(s) < 1 for s in sizes):
            raise ContractError(f"bad layer widths {sizes}")
        if activation not in _ACTIVATIONS:
            raise ContractError(f"unknown activation {activation!r}")
        self.sizes = [int(s) for s in sizes]
        self.activation = activation
        self.tag = tag
        self.name = name
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params: list[Tensor] = []
        for i, (n_in, n_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            self.params.append(Tensor(glorot_uniform(rng, n_in, n_out), True, f"{name}.w{i}"))
            self.params.append(Tensor(np.zeros(n_out), True, f"{name}.b{i}"))

    @property
    def n_params(self) -> int:
        return sum(p.data.size for p in self.params)

    def parameters(self) -> list[Tensor]:
        return list(self.params)

    def _check(self, width: int) -> None:
        if width != self.sizes[0]:
            raise ShapeError(f"{self.name}: input width {width} != {self.sizes[0]}")

    def __call__(self, x, frozen: bool = False) -> Tensor:
        """Differentiable forward; ``frozen`` treats parameters as constants."""
        x = as_tensor(x)
        self._check(x.shape[-1])
        act = _ACTIVATIONS[self.activation][0]
        n_layers = len(self.sizes) - 1
        for i in range(n_layers):
            w, b = self.params[2 * i], self.params[2 * i + 1]
            if frozen:
                w, b = Tensor(w.data), Tensor(b.data)
            x = linear(x, w, b, self.tag)
            if i < n_layers - 1:
                x = act(x)
        return x

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Forward on raw arrays without building a graph."""
        x = np.asarray(x, dtype=np.float64)
        self._check(x.shape[-1])
        act = _ACTIVATIONS[self.activation][1]
        n_layers = len(self.sizes) - 1
        rows = x.shape[0] if x.ndim > 1 else 1
        for i in range(n_layers):
            w, b = self.params[2 * i].data, self.params[2 * i + 1].data
            _count(self.tag, rows * w.shape[0] * w.shape[1])
            x = x @ w + b
            if i < n_layers - 1:
                x = act(x)
        return x

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def copy_from(self, other: "Mlp") -> None:
        if other.sizes != self.sizes:
            raise ShapeError(f"copy_from: {other.sizes} != {self.sizes}")
        for mine, theirs in zip(self.params, other.params):
            mine.data = theirs.data.copy()

    def arrays(self) -> list[np.ndarray]:
        return [p.data for p in self.params]

    def load_arrays(self, arrays) -> None:
        for p, a in zip(self.params, arrays, strict=True):
            if p.data.shape != a.shape:
                raise ShapeError(f"{p.name}: {a.shape} != {p.data.shape}")
            p.data = np.array(a, dtype=np.float64)


def mlp_param_count(sizes) -> int:
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


# ---------------------------------------------------------------------------
# optimisation

@dataclass(frozen=True)
class LinearSchedule:
    """Linear interpolation from ``start`` to ``end`` as progress goes 0 -> 1."""

    start: float
    end: float

    def __call__(self, progress: float) -> float:
        p = min(max(progress, 0.0), 1.0)
        return self.start + (self.end - self.start) * p


@dataclass
class Adam:
    params: list[Tensor]
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros_like(p.data) for p in self.params]
            self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float) -> None:
        """One Adam update using ``p.grad``; parameters without a gradient are skipped."""
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            if p.grad.shape != p.data.shape:
                raise ShapeError(f"{p.name}: grad {p.grad.shape} != {p.data.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def arrays(self) -> list[np.ndarray]:
        return self.m + self.v

    def load_arrays(self, arrays, step_count: int) -> None:
        n = len(self.params)
        self.m = [np.array(a, dtype=np.float64) for a in arrays[:n]]
        self.v = [np.array(a, dtype=np.float64) for a in arrays[n:2 * n]]
        self.step_count = step_count


# ---------------------------------------------------------------------------
# finite-difference checking

@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    worst: tuple[int, int] | None

    def ok(self, tol: float) -> bool:
        return self.max_rel_error <= tol


def gradient_check(fn, params: list[Tensor], h: float = 1e-5, scale_floor: float = 1e-6,
                   max_entries: int | None = None, rng: np.random.Generator | None = None
                   ) -> GradCheckReport:
    """Compare autodiff gradients of scalar ``fn()`` with central differences.

    Relative error per entry is ``|a - n| / max(|a|, |n|, scale_floor)``.
    ``max_entries`` subsamples entries per parameter.
    """
    for p in params:
        p.grad = None
    loss = fn()
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    worst, worst_err, n = None, 0.0, 0
    for pi, p in enumerate(params):
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False)
        for j in idx:
            orig = flat[j]
            flat[j] = orig + h
            up = float(fn().data)
            flat[j] = orig - h
            down = float(fn().data)
            flat[j] = orig
            num = (up - down) / (2 * h)
            ana = analytic[pi].reshape(-1)[j]
            err = abs(ana - num) / max(abs(ana), abs(num), scale_floor)
            n += 1
            if err > worst_err:
                worst_err, worst = err, (pi, int(j))
    for p in params:
        p.grad = None
    return GradCheckReport(worst_err, n, worst)


# ---------------------------------------------------------------------------
# serialisation: b"BOPW", u32 version, u32 count, then per tensor
# u32 rank, rank x u64 dims, little-endian f64 payload

MAGIC = b"BOPW"
FORMAT_VERSION = 1


def dump_arrays(arrays) -> bytes:
    out = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(arrays))]
    for a in arrays:
        a = np.asarray(a, dtype=np.float64)
        out.append(struct.pack("<I", a.ndim))
        out.append(struct.pack(f"<{a.ndim}Q", *a.shape))
        out.append(np.ascontiguousarray(a).astype("<f8").tobytes())
    return b"".join(out)


def load_arrays(blob: bytes) -> list[np.ndarray]:
    if blob[:4] != MAGIC:
        raise ContractError("not a BOPW blob")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != FORMAT_VERSION:
        raise ContractError(f"unsupported BOPW version {version}")
    off = 12
    arrays = []
    for _ in range(count):
        (rank,) = struct.unpack_from("<I", blob, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}Q", blob, off)
        off += 8 * rank
        size = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=off).reshape(dims)
        arrays.append(arr.astype(np.float64))
        off += 8 * size
    if off != len(blob):
        raise ContractError("trailing bytes in BOPW blob")
    return arrays
