"""Dense rank-<=2 tensors with reverse-mode automatic differentiation.

Everything is float64 and at most a matrix: scalars are stored as 1x1,
vectors as 1xD. Each op records its parents and a backward rule on the
output node; `backward(loss)` builds the tape (a topological order of the
graph below `loss`) and replays it in reverse, accumulating gradients into
`.grad` of every `requires_grad` node.

Broadcasting for binary ops is limited to what the models need: equal
shapes, a 1xD row against NxD, an Nx1 column against NxD, or a 1x1 scalar.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError, EmptyInputError


def _as_matrix(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"rank-{arr.ndim} arrays are not supported")
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_rule")

    def __init__(self, data, requires_grad=False, _parents=(), _backward_rule=None):
        self.data = _as_matrix(data)
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in _parents
        )
        self.grad = None
        self._parents = _parents
        self._backward_rule = _backward_rule

    # ------------------------------------------------------------------ basics
    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data[0, 0])

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -------------------------------------------------------------- arithmetic
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# ---------------------------------------------------------------------- tape


def build_tape(loss: Tensor) -> list[Tensor]:
    """Topological order of the graph below `loss` (inputs before outputs)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into `.grad` of every requires_grad node."""
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got {loss.shape}")
    tape = build_tape(loss)
    flowing: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    for node in reversed(tape):
        g = flowing.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
        if node._backward_rule is None:
            continue
        for parent, pg in zip(node._parents, node._backward_rule(g)):
            if pg is None or not parent.requires_grad:
                # grads only need to flow toward trainable leaves
                continue
            if id(parent) in flowing:
                flowing[id(parent)] = flowing[id(parent)] + pg
            else:
                flowing[id(parent)] = pg


def zero_grads(params) -> None:
    for p in params:
        p.zero_grad()


# ----------------------------------------------------------- elementwise ops


def _check_broadcast(a: Tensor, b: Tensor):
    (ar, ac), (br, bc) = a.shape, b.shape
    if (ar != br and 1 not in (ar, br)) or (ac != bc and 1 not in (ac, bc)):
        raise DimensionError(f"incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    for axis in (0, 1):
        if shape[axis] == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _binary(a: Tensor, b: Tensor, out: np.ndarray, da, db) -> Tensor:
    def rule(g):
        return (_unbroadcast(da(g), a.shape), _unbroadcast(db(g), b.shape))

    return Tensor(out, _parents=(a, b), _backward_rule=rule)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)
    return _binary(a, b, a.data + b.data, lambda g: g, lambda g: g)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)
    return _binary(a, b, a.data - b.data, lambda g: g, lambda g: -g)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)
    return _binary(
        a, b, a.data * b.data, lambda g: g * b.data, lambda g: g * a.data
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)
    return _binary(
        a,
        b,
        a.data / b.data,
        lambda g: g / b.data,
        lambda g: -g * a.data / (b.data * b.data),
    )


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0  # subgradient 0 at exactly 0
    return Tensor(
        a.data * mask, _parents=(a,), _backward_rule=lambda g: (g * mask,)
    )


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return Tensor(
        np.abs(a.data), _parents=(a,), _backward_rule=lambda g: (g * sign,)
    )


def square(a: Tensor) -> Tensor:
    return Tensor(
        a.data * a.data,
        _parents=(a,),
        _backward_rule=lambda g: (2.0 * g * a.data,),
    )


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    # clamp keeps 0 * (1/sqrt(0)) from poisoning gradients with NaN
    denom = np.maximum(out, 1e-150)
    return Tensor(
        out, _parents=(a,), _backward_rule=lambda g: (g * 0.5 / denom,)
    )


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor(out, _parents=(a,), _backward_rule=lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return Tensor(
        np.log(a.data), _parents=(a,), _backward_rule=lambda g: (g / a.data,)
    )


def clamp_min(a: Tensor, floor: float) -> Tensor:
    mask = a.data > floor
    return Tensor(
        np.maximum(a.data, floor),
        _parents=(a,),
        _backward_rule=lambda g: (g * mask,),
    )


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "relu": relu,
    "abs": absolute,
    "square": square,
}


def elementwise(op_kind: str, a: Tensor, b: Tensor | None = None) -> Tensor:
    """Dispatch by name; binary kinds require `b`."""
    if op_kind not in _ELEMENTWISE:
        raise ContractError(f"unknown elementwise op {op_kind!r}")
    fn = _ELEMENTWISE[op_kind]
    if op_kind in ("add", "sub", "mul"):
        if b is None:
            raise ContractError(f"{op_kind} needs two operands")
        return fn(a, b)
    if b is not None:
        raise ContractError(f"{op_kind} is unary")
    return fn(a)


# --------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner mismatch: {a.shape} x {b.shape}")
    return Tensor(
        a.data @ b.data,
        _parents=(a, b),
        _backward_rule=lambda g: (g @ b.data.T, a.data.T @ g),
    )


def transpose(a: Tensor) -> Tensor:
    return Tensor(
        a.data.T.copy(), _parents=(a,), _backward_rule=lambda g: (g.T,)
    )


# ------------------------------------------------------------------ reductions


def _check_nonempty(a: Tensor):
    if a.data.size == 0:
        raise EmptyInputError("reduction over an empty tensor")


def sum_all(a: Tensor) -> Tensor:
    _check_nonempty(a)
    return Tensor(
        a.data.sum(),
        _parents=(a,),
        _backward_rule=lambda g: (np.full(a.shape, g[0, 0]),),
    )


def mean_all(a: Tensor) -> Tensor:
    _check_nonempty(a)
    n = a.data.size
    return Tensor(
        a.data.mean(),
        _parents=(a,),
        _backward_rule=lambda g: (np.full(a.shape, g[0, 0] / n),),
    )


def mean_axis0(a: Tensor) -> Tensor:
    _check_nonempty(a)
    n = a.shape[0]
    return Tensor(
        a.data.mean(axis=0, keepdims=True),
        _parents=(a,),
        _backward_rule=lambda g: (np.repeat(g, n, axis=0) / n,),
    )


def sum_axis1(a: Tensor) -> Tensor:
    _check_nonempty(a)
    d = a.shape[1]
    return Tensor(
        a.data.sum(axis=1, keepdims=True),
        _parents=(a,),
        _backward_rule=lambda g: (np.repeat(g, d, axis=1),),
    )


def mean_axis1(a: Tensor) -> Tensor:
    _check_nonempty(a)
    d = a.shape[1]
    return Tensor(
        a.data.mean(axis=1, keepdims=True),
        _parents=(a,),
        _backward_rule=lambda g: (np.repeat(g, d, axis=1) / d,),
    )


def reduce(op_kind: str, a: Tensor) -> Tensor:
    fns = {"mean_all": mean_all, "sum_all": sum_all, "mean_axis0": mean_axis0}
    if op_kind not in fns:
        raise ContractError(f"unknown reduction {op_kind!r}")
    return fns[op_kind](a)


# ------------------------------------------------------------- shape plumbing


def concat_cols(tensors) -> Tensor:
    tensors = list(tensors)
    rows = tensors[0].shape[0]
    for t in tensors:
        if t.shape[0] != rows:
            raise DimensionError("concat_cols requires equal row counts")
    widths = [t.shape[1] for t in tensors]
    offsets = np.cumsum([0] + widths)

    def rule(g):
        return tuple(
            g[:, offsets[i] : offsets[i + 1]] for i in range(len(tensors))
        )

    return Tensor(
        np.concatenate([t.data for t in tensors], axis=1),
        _parents=tuple(tensors),
        _backward_rule=rule,
    )


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start < stop <= a.shape[1]):
        raise DimensionError(
            f"column slice [{start}:{stop}] out of range for shape {a.shape}"
        )

    def rule(g):
        full = np.zeros(a.shape)
        full[:, start:stop] = g
        return (full,)

    return Tensor(a.data[:, start:stop].copy(), _parents=(a,), _backward_rule=rule)
