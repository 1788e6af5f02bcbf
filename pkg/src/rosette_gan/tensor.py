"""Dense tensors with tape-based reverse-mode differentiation.

A :class:`Tensor` wraps a row-major numpy buffer.  Operations executed while a
:class:`GradientTape` is active append a node to that tape whenever at least
one input is tracked (a watched leaf or the output of a recorded node).
:func:`backward` replays the tape in reverse creation order, which is a valid
reverse topological order because every node's parents precede it.

Values are stored as 32-bit reals.  Reductions and matrix products accumulate
in 64-bit and round once on output.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import InvalidShapeError, NumericError, RankError, ShapeError, ValidationError

DTYPE = np.float32

_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> "GradientTape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class no_record:
    """Context manager that suspends recording on the current thread."""

    def __enter__(self):
        _tape_stack().append(None)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False


class Node:
    __slots__ = ("tape", "index", "parents", "backward_fn", "op")

    def __init__(self, tape, index, parents, backward_fn, op):
        self.tape = tape
        self.index = index
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op

    def __repr__(self):
        return f"Node({self.index}, op={self.op!r})"


class Tensor:
    """An n-dimensional array of reals with an optional graph node."""

    __slots__ = ("data", "grad", "name", "node", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, *, name: str | None = None, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype != np.float32 and arr.dtype != np.float64:
            arr = arr.astype(DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if any(d < 1 for d in arr.shape):
            raise InvalidShapeError(f"all dimensions must be >= 1, got shape {list(arr.shape)}")
        self.data = arr
        self.grad = None
        self.name = name
        self.node = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise RankError(f"item() needs a single-element tensor, got shape {list(self.shape)}")
        return float(self.data.reshape(-1)[0])

    __float__ = item

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={list(self.shape)}{label})"

    def __len__(self):
        return self.shape[0]

    def __add__(self, other):
        if isinstance(other, Tensor):
            return apply_binary("add", self, other)
        return add_scalar(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return apply_binary("sub", self, other)
        return add_scalar(self, -other)

    def __rsub__(self, other):
        return add_scalar(scale(self, -1.0), other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return apply_binary("mul", self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return apply_binary("matmul", self, other)


class GradientTape:
    """Ordered record of graph nodes for one differentiation pass.

    Usage::

        with GradientTape() as tape:
            tape.watch(params)
            loss = model(x)
        grads = backward(loss, tape)
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.leaves: dict[str, tuple[Tensor, Node]] = {}

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False

    def watch(self, tensors) -> None:
        """Register learnable leaves.

        Accepts a mapping of name to tensor, a single named tensor, or an
        iterable of named tensors.
        """
        if isinstance(tensors, Tensor):
            items = [(tensors.name, tensors)]
        elif isinstance(tensors, Mapping):
            items = list(tensors.items())
        else:
            items = [(t.name, t) for t in tensors]
        for name, t in items:
            if name is None:
                raise ValidationError("watched tensors need a name")
            node = Node(self, len(self.nodes), (), None, "leaf")
            self.nodes.append(node)
            t.node = node
            self.leaves[name] = (t, node)

    def record(self, out: np.ndarray, inputs: Sequence[Tensor], backward_fn, op: str) -> Tensor:
        result = Tensor(out)
        parents = tuple(
            t.node if (t.node is not None and t.node.tape is self) else None for t in inputs
        )
        if any(p is not None for p in parents):
            node = Node(self, len(self.nodes), parents, backward_fn, op)
            self.nodes.append(node)
            result.node = node
        return result


def _record(out: np.ndarray, inputs: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    tape = active_tape()
    if tape is None:
        return Tensor(out)
    return tape.record(out, inputs, backward_fn, op)


def backward(loss: Tensor, tape: GradientTape | None = None, wrt: Iterable[str] | None = None) -> dict:
    """Gradient of a single-element ``loss`` with respect to the tape's leaves.

    Returns ``{name: Tensor}`` for every watched leaf (or only those named in
    ``wrt``).  Leaves that do not influence the loss get zeros.  Passing
    ``wrt`` also prunes backward work that cannot reach those leaves.
    """
    if loss.size != 1:
        raise RankError(f"loss must have a single element, got shape {list(loss.shape)}")
    root = loss.node
    if tape is None:
        tape = root.tape if root is not None else active_tape()
    if tape is None or not tape.nodes:
        raise ValidationError("backward needs a non-empty tape")
    leaves = tape.leaves if wrt is None else {n: tape.leaves[n] for n in wrt}

    leaf_grads: dict[int, np.ndarray] = {}
    if root is not None and root.tape is tape:
        nodes = tape.nodes
        needed = None
        if wrt is not None:
            needed = bytearray(root.index + 1)
            for _, node in leaves.values():
                if node.index <= root.index:
                    needed[node.index] = 1
            for node in nodes[: root.index + 1]:
                if node.backward_fn is not None and any(
                    p is not None and needed[p.index] for p in node.parents
                ):
                    needed[node.index] = 1
        acc = {root.index: np.ones(loss.shape, dtype=loss.dtype)}
        for idx in range(root.index, -1, -1):
            g = acc.pop(idx, None)
            if g is None:
                continue
            node = nodes[idx]
            if node.backward_fn is None:
                leaf_grads[idx] = g
                continue
            needs = tuple(
                p is not None and (needed is None or bool(needed[p.index])) for p in node.parents
            )
            if not any(needs):
                continue
            parent_grads = node.backward_fn(g, needs)
            for parent, need, pg in zip(node.parents, needs, parent_grads):
                if not need or pg is None:
                    continue
                prev = acc.get(parent.index)
                acc[parent.index] = pg if prev is None else prev + pg

    result = {}
    for name, (t, node) in leaves.items():
        g = leaf_grads.get(node.index)
        if g is None:
            arr = np.zeros_like(t.data)
        else:
            arr = np.array(g, dtype=t.data.dtype).reshape(t.shape)
        t.grad = arr
        result[name] = Tensor(arr)
    return result


# ---------------------------------------------------------------------------
# creation

@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float


@dataclass(frozen=True)
class Normal:
    mean: float
    std: float


def tensor_create(shape: Sequence[int], fill=0.0, rng: np.random.Generator | None = None,
                  *, name: str | None = None, dtype=DTYPE) -> Tensor:
    """New tensor filled with a constant, ``Uniform(lo, hi)`` or ``Normal(mean, std)``."""
    shape = tuple(int(d) for d in shape)
    if not shape or any(d < 1 for d in shape):
        raise InvalidShapeError(f"shape must be non-empty with dims >= 1, got {list(shape)}")
    if isinstance(fill, Uniform):
        if not fill.lo < fill.hi:
            raise ValidationError(f"uniform fill needs lo < hi, got [{fill.lo}, {fill.hi})")
        rng = _need_rng(rng)
        vals = rng.uniform(fill.lo, fill.hi, size=shape).astype(dtype)
        # rounding to 32 bits can land on the excluded upper bound
        top = np.nextafter(dtype(fill.hi), dtype(fill.lo))
        np.minimum(vals, top, out=vals)
    elif isinstance(fill, Normal):
        rng = _need_rng(rng)
        vals = rng.normal(fill.mean, fill.std, size=shape).astype(dtype)
    else:
        vals = np.full(shape, fill, dtype=dtype)
    return Tensor(vals, name=name)


def _need_rng(rng):
    if rng is None:
        raise ValidationError("random fills need a seeded generator")
    return rng


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# binary ops

def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        lead + i for i, d in enumerate(shape) if d == 1 and g.shape[lead + i] != 1
    )
    return g.sum(axis=axes, dtype=np.float64).reshape(shape).astype(g.dtype)


def _check_elementwise(op: str, a: Tensor, b: Tensor) -> tuple:
    if a.shape == b.shape:
        return a.shape
    try:
        out = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        out = None
    if out is None or (out != a.shape and out != b.shape):
        raise ShapeError(f"{op}: incompatible shapes {list(a.shape)} and {list(b.shape)}")
    return out


def apply_binary(op: str, a: Tensor, b: Tensor) -> Tensor:
    """``add``, ``sub``, ``mul`` (elementwise, one-sided broadcast) or 2-D ``matmul``."""
    a, b = as_tensor(a), as_tensor(b)
    dtype = np.result_type(a.dtype, b.dtype)
    if op == "matmul":
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: incompatible shapes {list(a.shape)} and {list(b.shape)}")
        a64 = a.data.astype(np.float64)
        b64 = b.data.astype(np.float64)
        out = (a64 @ b64).astype(dtype)

        def bw(g, needs):
            g64 = g.astype(np.float64)
            ga = (g64 @ b64.T).astype(a.dtype) if needs[0] else None
            gb = (a64.T @ g64).astype(b.dtype) if needs[1] else None
            return ga, gb

        return _record(out, (a, b), bw, "matmul")

    _check_elementwise(op, a, b)
    sa, sb = a.shape, b.shape
    if op == "add":
        out = np.add(a.data, b.data, dtype=dtype)

        def bw(g, needs):
            return _unbroadcast(g, sa), _unbroadcast(g, sb)
    elif op == "sub":
        out = np.subtract(a.data, b.data, dtype=dtype)

        def bw(g, needs):
            return _unbroadcast(g, sa), _unbroadcast(-g, sb)
    elif op == "mul":
        ad, bd = a.data, b.data
        out = np.multiply(ad, bd, dtype=dtype)

        def bw(g, needs):
            ga = _unbroadcast(g * bd, sa) if needs[0] else None
            gb = _unbroadcast(g * ad, sb) if needs[1] else None
            return ga, gb
    else:
        raise ValidationError(f"unknown binary op {op!r}")
    return _record(out, (a, b), bw, op)


def add(a, b):
    return apply_binary("add", a, b)


def sub(a, b):
    return apply_binary("sub", a, b)


def mul(a, b):
    return apply_binary("mul", a, b)


def matmul(a, b):
    return apply_binary("matmul", a, b)


# ---------------------------------------------------------------------------
# unary / structural ops

def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = (a.data * c).astype(a.dtype)
    return _record(out, (a,), lambda g, needs: ((g * c).astype(g.dtype),), "scale")


def add_scalar(a: Tensor, c: float) -> Tensor:
    out = (a.data + c).astype(a.dtype)
    return _record(out, (a,), lambda g, needs: (g,), "add_scalar")


def sum_all(a: Tensor) -> Tensor:
    out = np.array([a.data.sum(dtype=np.float64)], dtype=a.dtype)
    shape, dtype = a.shape, a.dtype
    return _record(out, (a,), lambda g, needs: (np.full(shape, g[0], dtype=dtype),), "sum")


def mean_all(a: Tensor) -> Tensor:
    n = a.size
    out = np.array([a.data.sum(dtype=np.float64) / n], dtype=a.dtype)
    shape, dtype = a.shape, a.dtype
    return _record(out, (a,), lambda g, needs: (np.full(shape, g[0] / n, dtype=dtype),), "mean")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {list(old)} to {list(shape)}") from exc
    return _record(out, (a,), lambda g, needs: (g.reshape(old),), "reshape")


def flatten(a: Tensor) -> Tensor:
    return reshape(a, (a.shape[0], -1))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            d != r for i, (d, r) in enumerate(zip(t.shape, ref)) if i != axis
        ):
            raise ShapeError(
                f"concat along axis {axis}: incompatible shapes "
                + ", ".join(str(list(x.shape)) for x in tensors)
            )
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def bw(g, needs):
        sl = [slice(None)] * g.ndim
        parts = []
        for i in range(len(bounds) - 1):
            if needs[i]:
                sl[axis] = slice(bounds[i], bounds[i + 1])
                parts.append(g[tuple(sl)])
            else:
                parts.append(None)
        return tuple(parts)

    return _record(out, tensors, bw, "concat")


def log(a: Tensor) -> Tensor:
    x = a.data
    out = np.log(x)
    return _record(out, (a,), lambda g, needs: (g / x,), "log")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record(out, (a,), lambda g, needs: (g * out,), "exp")


def square(a: Tensor) -> Tensor:
    x = a.data
    return _record(x * x, (a,), lambda g, needs: (2 * g * x,), "square")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; the gradient is zero where the clamp is active."""
    x = a.data
    out = np.clip(x, lo, hi).astype(a.dtype)
    inside = (x >= lo) & (x <= hi)
    return _record(out, (a,), lambda g, needs: (g * inside,), "clip")


# ---------------------------------------------------------------------------
# verification

def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-2,
                      coords: Iterable[int] | None = None) -> float:
    """Max relative error between the tape gradient and central differences.

    The step for coordinate ``i`` is ``eps * max(1, |x_i|)``; the error is
    ``|analytic - numeric| / max(1, |analytic|)``.  ``coords`` restricts the
    check to a subset of flat indices.
    """
    if not eps > 0:
        raise ValidationError(f"eps must be positive, got {eps}")
    base = np.array(x.data)
    probe = Tensor(base.copy(), name="x")
    with GradientTape() as tape:
        tape.watch({"x": probe})
        out = f(probe)
        analytic = backward(out, tape)["x"].data.reshape(-1).astype(np.float64)
    if not np.all(np.isfinite(analytic)):
        bad = int(np.flatnonzero(~np.isfinite(analytic))[0])
        raise NumericError(f"non-finite analytic gradient at coordinate {bad}")

    flat = base.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    worst = 0.0
    with no_record():
        for i in idx:
            h = eps * max(1.0, abs(float(flat[i])))
            up = flat.copy()
            dn = flat.copy()
            up[i] += h
            dn[i] -= h
            step = float(up[i]) - float(dn[i])
            fu = float(f(Tensor(up.reshape(base.shape))).item())
            fd = float(f(Tensor(dn.reshape(base.shape))).item())
            if not (np.isfinite(fu) and np.isfinite(fd)):
                raise NumericError(f"non-finite function value at coordinate {i}")
            numeric = (fu - fd) / step
            err = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]))
            worst = max(worst, err)
    return worst
