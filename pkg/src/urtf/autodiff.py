"""Reverse-mode automatic differentiation with gradients of gradients.

Tensors are immutable float64 arrays. Every primitive records its parents
and a vector-Jacobian rule. The rules are themselves written with
primitives, so when :func:`grad` runs with ``higher_order=True`` the
returned gradients are recorded expressions and can be differentiated
again.

Only rank-2 matmul and same-shape elementwise ops are supported; there is
no implicit broadcasting.
"""

from __future__ import annotations

import contextlib
import itertools
import threading
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

__all__ = [
    "ShapeMismatch",
    "NotScalar",
    "Tensor",
    "Tape",
    "ParamStore",
    "tensor",
    "constant",
    "no_record",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "matmul",
    "transpose",
    "sum",
    "mean",
    "fill",
    "exp",
    "log_softmax",
    "row_sum",
    "tile_cols",
    "gather",
    "scatter",
    "embedding_lookup",
    "scatter_rows",
    "concat_cols",
    "slice_cols",
    "pad_cols",
    "reshape",
    "cross_entropy",
    "grad",
    "finite_diff_check",
]


class ShapeMismatch(ValueError):
    def __init__(self, op: str, *shapes):
        super().__init__(f"{op}: incompatible shapes {', '.join(map(str, shapes))}")
        self.shapes = shapes


class NotScalar(ValueError):
    pass


_ids = itertools.count()
_state = threading.local()


def _recording() -> bool:
    return getattr(_state, "recording", True)


@contextlib.contextmanager
def no_record() -> Iterator[None]:
    """Evaluate without recording the graph (results are constants)."""
    prev = _recording()
    _state.recording = False
    try:
        yield
    finally:
        _state.recording = prev


@contextlib.contextmanager
def _record(flag: bool) -> Iterator[None]:
    prev = _recording()
    _state.recording = flag
    try:
        yield
    finally:
        _state.recording = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "parents", "vjp", "op", "id")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.vjp: Callable | None = None
        self.op = "leaf"
        self.id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise NotScalar(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other, self.shape))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.shape))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.shape), self)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def _as_tensor(x, shape) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.full(shape, float(x)))


def tensor(data, requires_grad: bool = True) -> Tensor:
    """A differentiable leaf."""
    return Tensor(data, requires_grad=requires_grad)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _node(data: np.ndarray, op: str, parents: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    if _recording() and any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True)
        out.parents = parents
        out.vjp = vjp
        out.op = op
        return out
    return Tensor(data)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(op, a.shape, b.shape)


def _rank2(op: str, *ts: Tensor) -> None:
    for t in ts:
        if t.data.ndim != 2:
            raise ShapeMismatch(op, *(t.shape for t in ts))


# --------------------------------------------------------------------------
# Elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _node(a.data + b.data, "add", (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _node(a.data - b.data, "sub", (a, b), lambda g: (g, neg(g)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    return _node(a.data * b.data, "mul", (a, b), lambda g: (mul(g, b), mul(g, a)))


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, "neg", (a,), lambda g: (neg(g),))


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a constant scalar."""
    c = float(c)
    return _node(a.data * c, "scale", (a,), lambda g: (scale(g, c),))


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def vjp(g):
        return (mul(g, out),)

    out = _node(out_data, "exp", (a,), vjp)
    return out


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    old = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch("reshape", old, shape) from None
    return _node(data, "reshape", (a,), lambda g: (reshape(g, old),))


# --------------------------------------------------------------------------
# Linear algebra and reductions


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _rank2("matmul", a, b)
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch("matmul", a.shape, b.shape)
    return _node(
        a.data @ b.data,
        "matmul",
        (a, b),
        lambda g: (matmul(g, transpose(b)), matmul(transpose(a), g)),
    )


def transpose(a: Tensor) -> Tensor:
    _rank2("transpose", a)
    return _node(a.data.T, "transpose", (a,), lambda g: (transpose(g),))


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = a.shape
    return _node(np.array(a.data.sum()), "sum", (a,), lambda g: (fill(g, shape),))


def mean(a: Tensor) -> Tensor:
    n = a.size
    if n == 0:
        raise ShapeMismatch("mean", a.shape)
    return scale(sum(a), 1.0 / n)


def fill(s: Tensor, shape: Sequence[int]) -> Tensor:
    """Broadcast a scalar tensor to ``shape``."""
    if s.shape != ():
        raise ShapeMismatch("fill", s.shape, ())
    shape = tuple(shape)
    return _node(np.full(shape, float(s.data)), "fill", (s,), lambda g: (sum(g),))


def row_sum(a: Tensor) -> Tensor:
    """(n, m) -> (n, 1)."""
    _rank2("row_sum", a)
    m = a.shape[1]
    return _node(a.data.sum(axis=1, keepdims=True), "row_sum", (a,), lambda g: (tile_cols(g, m),))


def tile_cols(a: Tensor, m: int) -> Tensor:
    """(n, 1) -> (n, m) by repeating the column."""
    _rank2("tile_cols", a)
    if a.shape[1] != 1:
        raise ShapeMismatch("tile_cols", a.shape, (a.shape[0], 1))
    return _node(np.repeat(a.data, m, axis=1), "tile_cols", (a,), lambda g: (row_sum(g),))


def log_softmax(a: Tensor) -> Tensor:
    """Row-wise log-softmax of a rank-2 tensor."""
    _rank2("log_softmax", a)
    x = a.data
    shifted = x - x.max(axis=1, keepdims=True)
    out_data = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    m = a.shape[1]

    def vjp(g):
        return (sub(g, mul(exp(out), tile_cols(row_sum(g), m))),)

    out = _node(out_data, "log_softmax", (a,), vjp)
    return out


# --------------------------------------------------------------------------
# Indexing


def _index(idx, n_rows: int | None = None) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeMismatch("index", idx.shape)
    return idx


def gather(a: Tensor, idx) -> Tensor:
    """``out[i] = a[i, idx[i]]`` for rank-2 ``a``."""
    _rank2("gather", a)
    idx = _index(idx)
    n, m = a.shape
    if idx.shape[0] != n:
        raise ShapeMismatch("gather", a.shape, idx.shape)
    return _node(a.data[np.arange(n), idx], "gather", (a,), lambda g: (scatter(g, idx, m),))


def scatter(g: Tensor, idx, m: int) -> Tensor:
    """Inverse of :func:`gather`: (n,) -> (n, m) with zeros elsewhere."""
    idx = _index(idx)
    n = g.shape[0]
    if g.shape != (n,) or idx.shape[0] != n:
        raise ShapeMismatch("scatter", g.shape, idx.shape)
    data = np.zeros((n, m))
    data[np.arange(n), idx] = g.data
    return _node(data, "scatter", (g,), lambda h: (gather(h, idx),))


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Rows of ``table`` selected by ``ids``: (V, d) -> (n, d)."""
    _rank2("embedding_lookup", table)
    ids = _index(ids)
    v = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= v):
        raise IndexError("embedding id out of range")
    return _node(table.data[ids], "embedding_lookup", (table,), lambda g: (scatter_rows(g, ids, v),))


def scatter_rows(g: Tensor, ids, v: int) -> Tensor:
    """Accumulate rows of ``g`` into a (v, d) zero table at ``ids``."""
    _rank2("scatter_rows", g)
    ids = _index(ids)
    data = np.zeros((v, g.shape[1]))
    np.add.at(data, ids, g.data)
    return _node(data, "scatter_rows", (g,), lambda h: (embedding_lookup(h, ids),))


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    _rank2("concat_cols", a, b)
    if a.shape[0] != b.shape[0]:
        raise ShapeMismatch("concat_cols", a.shape, b.shape)
    da, db = a.shape[1], b.shape[1]
    return _node(
        np.concatenate([a.data, b.data], axis=1),
        "concat_cols",
        (a, b),
        lambda g: (slice_cols(g, 0, da), slice_cols(g, da, da + db)),
    )


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    _rank2("slice_cols", a)
    total = a.shape[1]
    if not 0 <= start <= stop <= total:
        raise ShapeMismatch("slice_cols", a.shape, (start, stop))
    return _node(a.data[:, start:stop], "slice_cols", (a,), lambda g: (pad_cols(g, start, total),))


def pad_cols(a: Tensor, start: int, total: int) -> Tensor:
    """Place ``a`` at column ``start`` of a zero matrix with ``total`` columns."""
    _rank2("pad_cols", a)
    stop = start + a.shape[1]
    if stop > total:
        raise ShapeMismatch("pad_cols", a.shape, (start, total))
    data = np.zeros((a.shape[0], total))
    data[:, start:stop] = a.data
    return _node(data, "pad_cols", (a,), lambda g: (slice_cols(g, start, stop),))


def cross_entropy(logits: Tensor, target_index) -> Tensor:
    """Mean negative log-likelihood of ``target_index`` under row softmax."""
    return neg(mean(gather(log_softmax(logits), target_index)))


# --------------------------------------------------------------------------
# Reverse sweep


class Tape:
    """Recorded nodes reachable from an output, in creation order.

    Creation order is a topological order because a node's parents always
    exist before it.
    """

    def __init__(self, output: Tensor):
        seen: dict[int, Tensor] = {}
        stack = [output]
        while stack:
            node = stack.pop()
            if node.id in seen or not node.requires_grad:
                continue
            seen[node.id] = node
            stack.extend(node.parents)
        self.nodes: list[Tensor] = [seen[k] for k in sorted(seen)]

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)


def grad(
    loss: Tensor, params: Sequence[Tensor] | Mapping[str, Tensor], higher_order: bool = False
):
    """Gradients of scalar ``loss`` with respect to ``params``.

    Returns a list (or a dict when ``params`` is a mapping) of tensors with
    the shapes of ``params``. With ``higher_order=True`` the gradients are
    themselves recorded and can be passed to another :func:`grad` call.
    """
    if loss.size != 1 or loss.data.ndim > 1:
        raise NotScalar(f"loss must be a scalar, got shape {loss.shape}")
    if isinstance(params, Mapping):
        names = list(params)
        grads = grad(loss, [params[k] for k in names], higher_order)
        return dict(zip(names, grads))

    params = list(params)
    wanted = {p.id for p in params}
    cot: dict[int, Tensor] = {}
    if loss.requires_grad:
        cot[loss.id] = Tensor(np.ones(loss.shape))
    with _record(higher_order and _recording()):
        for node in reversed(Tape(loss).nodes):
            g = cot.get(node.id)
            if g is None or node.vjp is None:
                continue
            if node.id not in wanted:
                del cot[node.id]
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = cot.get(parent.id)
                cot[parent.id] = pg if prev is None else add(prev, pg)
    return [cot.get(p.id, Tensor(np.zeros(p.shape))) for p in params]


# --------------------------------------------------------------------------
# Parameters


class ParamStore(Mapping[str, Tensor]):
    """Immutable named parameters with functional updates."""

    def __init__(self, tensors: Mapping[str, Tensor] | Iterable[tuple[str, Tensor]]):
        self._tensors = dict(tensors)

    def __getitem__(self, key: str) -> Tensor:
        return self._tensors[key]

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def __repr__(self) -> str:
        shapes = ", ".join(f"{k}={v.shape}" for k, v in self._tensors.items())
        return f"ParamStore({shapes})"

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray], requires_grad: bool = True) -> "ParamStore":
        return cls({k: Tensor(v, requires_grad=requires_grad) for k, v in arrays.items()})

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self._tensors.items()}

    def detached(self) -> "ParamStore":
        """Fresh differentiable leaves with the same values."""
        return ParamStore.from_arrays(self.arrays())

    def sgd(self, grads: Mapping[str, Tensor], lr: float) -> "ParamStore":
        """``params - lr * grad``, recorded so it stays differentiable."""
        return ParamStore({k: sub(v, scale(grads[k], lr)) for k, v in self._tensors.items()})

    @property
    def n_params(self) -> int:
        return int(np.sum([v.size for v in self._tensors.values()]))


def finite_diff_check(
    f: Callable[[ParamStore], Tensor],
    params: ParamStore,
    epsilon: float = 1e-5,
    analytic: Mapping[str, Tensor] | None = None,
) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    The relative error of each coordinate is ``|a - n| / max(1, |a|)``.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if analytic is None:
        analytic = grad(f(params), params)
    base = params.arrays()
    worst = 0.0
    for name, arr in base.items():
        a = analytic[name].data
        for idx in np.ndindex(arr.shape):
            vals = []
            for sign in (1.0, -1.0):
                bumped = arr.copy()
                bumped[idx] += sign * epsilon
                trial = dict(base)
                trial[name] = bumped
                # f may differentiate internally (an inner SGD step), so its
                # inputs stay differentiable here
                vals.append(f(ParamStore.from_arrays(trial)).item())
            numeric = (vals[0] - vals[1]) / (2 * epsilon)
            err = abs(a[idx] - numeric) / max(1.0, abs(a[idx]))
            worst = max(worst, err)
    return worst
