"""Reverse-mode automatic differentiation over dense float64 tensors.

Operations record themselves on the active ``Tape`` (if any) when at least one
input requires a gradient. Outside a tape every operation is a plain numpy
computation, which is what decoding uses.
"""
from __future__ import annotations

import itertools
import logging
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..exceptions import ContractError, DimensionError

_LOGGER = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, Sequence[float], float]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_NODE_IDS = itertools.count(1)
_ACTIVE_TAPE: ContextVar[Optional["Tape"]] = ContextVar("nmtlab_tape", default=None)


class Tensor:
    """Dense float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "node_id", "name", "_is_leaf")

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: Optional[str] = None,
    ) -> None:
        """Initialize a leaf tensor (data is copied to float64)."""
        self.data = np.array(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.node_id = next(_NODE_IDS)
        self.name = name
        self._is_leaf = True

    @classmethod
    def _from_op(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = requires_grad
        out.node_id = next(_NODE_IDS)
        out.name = None
        out._is_leaf = not requires_grad
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        """Shape of the underlying array."""
        return tuple(self.data.shape)

    @property
    def size(self) -> int:
        """Number of entries."""
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        """Whether the tensor was created by the caller rather than an op."""
        return self._is_leaf

    def zero_grad(self) -> None:
        """Reset the accumulated gradient."""
        self.grad = None

    def item(self) -> float:
        """Return the single value of a one-element tensor."""
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: Union["Tensor", float]) -> "Tensor":
        if isinstance(other, Tensor):
            return hadamard(self, other)
        return scale(self, float(other))

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def constant(data: ArrayLike) -> Tensor:
    """Wrap data as a tensor that never receives gradients."""
    return Tensor(data, requires_grad=False)


def parameter(data: ArrayLike, name: Optional[str] = None) -> Tensor:
    """Wrap data as a trainable leaf tensor."""
    return Tensor(data, requires_grad=True, name=name)


def as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    """Return ``value`` unchanged if it is a tensor, else a constant."""
    if isinstance(value, Tensor):
        return value
    return constant(value)


@dataclass
class _Node:
    """One recorded primitive application."""

    op: str
    inputs: Tuple[Tensor, ...]
    output_id: int
    backward: BackwardFn


class Tape:
    """Ordered record of primitive applications, in topological order."""

    def __init__(self) -> None:
        """Initialize an empty tape."""
        self.nodes: List[_Node] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc_info: object) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.nodes)

    def record(
        self, op: str, inputs: Tuple[Tensor, ...], output: Tensor, fn: BackwardFn
    ) -> None:
        """Append an op; inputs precede it by construction."""
        self.nodes.append(_Node(op, inputs, output.node_id, fn))


def active_tape() -> Optional[Tape]:
    """Return the tape recording in the current context, if any."""
    return _ACTIVE_TAPE.get()


def _emit(
    op: str, inputs: Tuple[Tensor, ...], data: np.ndarray, fn: BackwardFn
) -> Tensor:
    tape = _ACTIVE_TAPE.get()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor._from_op(data, needs_grad)
    if needs_grad:
        tape.record(op, inputs, out, fn)
    return out


def _check_same(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of ``a`` (m x k) and ``b`` (k x n, or a k-vector)."""
    if a.data.ndim != 2 or b.data.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.data, b.data

    def backward(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        if bv.ndim == 1:
            return np.outer(g, bv), av.T @ g
        return g @ bv.T, av.T @ g

    return _emit("matmul", (a, b), av @ bv, backward)


def contract(subscripts: str, a: Tensor, b: Tensor) -> Tensor:
    """Two-operand einsum, e.g. ``"tb,tdb->db"``.

    Every index of an operand must appear in the output or in the other
    operand, and no index may repeat within one operand.
    """
    try:
        inputs, out_sub = subscripts.replace(" ", "").split("->")
        a_sub, b_sub = inputs.split(",")
    except ValueError as err:
        raise ContractError(f"contract: malformed subscripts {subscripts!r}") from err
    for sub, operand in ((a_sub, a), (b_sub, b)):
        if len(sub) != operand.data.ndim:
            raise DimensionError(
                f"contract {subscripts!r}: operand rank mismatch, got {a.shape} and "
                f"{b.shape}"
            )
    try:
        out = np.einsum(subscripts, a.data, b.data)
    except ValueError as err:
        raise DimensionError(
            f"contract {subscripts!r}: incompatible shapes {a.shape} and {b.shape}"
        ) from err
    av, bv = a.data, b.data

    def backward(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        ga = np.einsum(f"{out_sub},{b_sub}->{a_sub}", g, bv)
        gb = np.einsum(f"{out_sub},{a_sub}->{b_sub}", g, av)
        return ga, gb

    return _emit("contract", (a, b), np.asarray(out, dtype=np.float64), backward)


# ---------------------------------------------------------------------------
# Elementwise
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum."""
    _check_same("add", a, b)
    return _emit("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise difference."""
    _check_same("sub", a, b)
    return _emit("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product."""
    _check_same("hadamard", a, b)
    av, bv = a.data, b.data
    return _emit("hadamard", (a, b), av * bv, lambda g: (g * bv, g * av))


def scale(x: Tensor, factor: Union[float, Tensor]) -> Tensor:
    """Multiply by a scalar constant or a one-element tensor."""
    if isinstance(factor, Tensor):
        if factor.size != 1:
            raise DimensionError(f"scale: factor must be scalar, got {factor.shape}")
        xv, fv = x.data, float(factor.data.reshape(()))
        return _emit(
            "scale",
            (x, factor),
            xv * fv,
            lambda g: (g * fv, np.reshape(np.sum(g * xv), factor.shape)),
        )
    f = float(factor)
    return _emit("scale", (x,), x.data * f, lambda g: (g * f,))


def affine(x: Tensor, alpha: float, beta: float) -> Tensor:
    """Compute ``alpha * x + beta`` with constant coefficients."""
    a, b = float(alpha), float(beta)
    return _emit("affine", (x,), a * x.data + b, lambda g: (g * a,))


def neg(x: Tensor) -> Tensor:
    """Elementwise negation."""
    return scale(x, -1.0)


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "hadamard": hadamard,
    "scale": scale,
    "affine": affine,
    "neg": neg,
}


def elementwise(kind: str, *args: Union[Tensor, float]) -> Tensor:
    """Dispatch one of add, sub, hadamard, scale, affine, neg."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError as err:
        raise ContractError(f"unknown elementwise kind: {kind}") from err
    return fn(*args)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function, computed branch-wise so it never overflows."""
    y = _stable_sigmoid(x.data)
    return _emit("sigmoid", (x,), y, lambda g: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    """Hyperbolic tangent."""
    y = np.tanh(x.data)
    return _emit("tanh", (x,), y, lambda g: (g * (1.0 - y * y),))


def log_sigmoid(x: Tensor) -> Tensor:
    """``log(sigmoid(x))`` without overflow."""
    xv = x.data
    y = np.minimum(xv, 0.0) - np.log1p(np.exp(-np.abs(xv)))
    return _emit("log_sigmoid", (x,), y, lambda g: (g * _stable_sigmoid(-xv),))


_ACTIVATIONS = {
    "sigmoid": sigmoid,
    "logistic": sigmoid,
    "tanh": tanh,
    "log_sigmoid": log_sigmoid,
}


def activation(kind: str, x: Tensor) -> Tensor:
    """Dispatch sigmoid / logistic / tanh / log_sigmoid."""
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError as err:
        raise ContractError(f"unknown activation: {kind}") from err
    return fn(x)


def log(x: Tensor, floor: float = 0.0) -> Tensor:
    """Natural log of ``max(x, floor)``; clamped entries get no gradient."""
    xv = x.data
    clamped = xv < floor
    safe = np.where(clamped, floor, xv)
    y = np.log(safe)
    return _emit("log", (x,), y, lambda g: (np.where(clamped, 0.0, g / safe),))


def maximum(parts: Sequence[Tensor]) -> Tensor:
    """Elementwise maximum across equally shaped tensors; ties go to the first."""
    if not parts:
        raise DimensionError("maximum: no operands")
    for p in parts[1:]:
        _check_same("maximum", parts[0], p)
    stacked = np.stack([p.data for p in parts])
    winner = np.argmax(stacked, axis=0)
    out = np.take_along_axis(stacked, winner[None], axis=0)[0]

    def backward(g: np.ndarray) -> Tuple[np.ndarray, ...]:
        return tuple(np.where(winner == k, g, 0.0) for k in range(len(parts)))

    return _emit("maximum", tuple(parts), out, backward)


# ---------------------------------------------------------------------------
# Normalisation
# ---------------------------------------------------------------------------


def softmax(e: Tensor, axis: int = 0, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax along ``axis`` with max-subtraction; masked entries get zero."""
    ev = e.data
    if ev.size == 0 or ev.shape[axis] == 0:
        raise DimensionError(f"softmax: empty input of shape {e.shape}")
    if mask is None:
        shifted = ev - np.max(ev, axis=axis, keepdims=True)
        ex = np.exp(shifted)
    else:
        keep = np.asarray(mask, dtype=bool)
        if keep.shape != ev.shape:
            raise DimensionError(f"softmax: mask {keep.shape} vs scores {e.shape}")
        top = np.max(np.where(keep, ev, -np.inf), axis=axis, keepdims=True)
        ex = np.where(keep, np.exp(np.where(keep, ev - top, 0.0)), 0.0)
    y = ex / np.sum(ex, axis=axis, keepdims=True)

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _emit("softmax", (e,), y, backward)


def softmax_vec(e: Tensor) -> Tensor:
    """Softmax of a score vector (or of each column of a score matrix)."""
    return softmax(e, axis=0)


def log_softmax(x: Tensor, axis: int = 0) -> Tensor:
    """Numerically stable log-softmax along ``axis``."""
    xv = x.data
    if xv.size == 0:
        raise DimensionError(f"log_softmax: empty input of shape {x.shape}")
    shifted = xv - np.max(xv, axis=axis, keepdims=True)
    y = shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    probs = np.exp(y)

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        return (g - probs * np.sum(g, axis=axis, keepdims=True),)

    return _emit("log_softmax", (x,), y, backward)


def column_norm(x: Tensor) -> Tensor:
    """Euclidean norm of each column (axis 0); zero columns get zero gradient."""
    xv = x.data
    n = np.sqrt(np.sum(xv * xv, axis=0))

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        safe = np.where(n > 0, n, 1.0)
        return (np.where(n > 0, g / safe, 0.0) * xv,)

    return _emit("column_norm", (x,), n, backward)


def total(x: Tensor) -> Tensor:
    """Sum of all entries as a 0-d tensor."""
    shape = x.data.shape
    return _emit(
        "total", (x,), np.asarray(np.sum(x.data)), lambda g: (np.full(shape, g),)
    )


# ---------------------------------------------------------------------------
# Shape manipulation
# ---------------------------------------------------------------------------


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Join tensors along ``axis``; the gradient is split back."""
    if not parts:
        raise DimensionError("concat: no operands")
    if len(parts) == 1:
        return parts[0]
    ndim = parts[0].data.ndim
    for p in parts:
        if p.data.ndim != ndim or p.shape[:axis] + p.shape[axis + 1 :] != (
            parts[0].shape[:axis] + parts[0].shape[axis + 1 :]
        ):
            raise DimensionError(
                f"concat: incompatible shapes {[q.shape for q in parts]}"
            )
    out = np.concatenate([p.data for p in parts], axis=axis)
    cuts = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def backward(g: np.ndarray) -> Tuple[np.ndarray, ...]:
        return tuple(np.split(g, cuts, axis=axis))

    return _emit("concat", tuple(parts), out, backward)


def stack(parts: Sequence[Tensor]) -> Tensor:
    """Stack equally shaped tensors along a new leading axis."""
    if not parts:
        raise DimensionError("stack: no operands")
    for p in parts[1:]:
        _check_same("stack", parts[0], p)
    out = np.stack([p.data for p in parts])
    return _emit(
        "stack", tuple(parts), out, lambda g: tuple(g[k] for k in range(len(parts)))
    )


def expand(x: Tensor, count: int) -> Tensor:
    """Repeat ``x`` along a new leading axis of length ``count``."""
    if count < 1:
        raise DimensionError(f"expand: count must be positive, got {count}")
    out = np.broadcast_to(x.data, (count,) + x.shape).copy()
    return _emit("expand", (x,), out, lambda g: (np.sum(g, axis=0),))


def embed(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Gather columns of an (dim x vocab) embedding table for a batch of ids."""
    idx = np.asarray(ids, dtype=np.int64)
    if table.data.ndim != 2:
        raise DimensionError(f"embed: table must be a matrix, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[1]):
        raise DimensionError(
            f"embed: ids outside [0, {table.shape[1]}) for table {table.shape}"
        )
    shape = table.shape

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        gt = np.zeros(shape)
        np.add.at(gt, (slice(None), idx), g)
        return (gt,)

    return _emit("embed", (table,), table.data[:, idx], backward)


def conv_windows(w: Tensor, width: int) -> Tensor:
    """Zero-padded sliding windows of a (T x B) matrix: result is (T x width x B).

    ``out[t, k, b] = w[t + k - width // 2, b]`` with zeros outside ``[0, T)``.
    """
    if width < 1 or width % 2 == 0:
        raise DimensionError(f"conv_windows: width must be odd, got {width}")
    if w.data.ndim != 2:
        raise DimensionError(f"conv_windows: expected (T x B), got {w.shape}")
    steps = w.shape[0]
    pad = width // 2
    padded = np.pad(w.data, ((pad, pad), (0, 0)))
    out = np.stack([padded[k : k + steps] for k in range(width)], axis=1)

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        gp = np.zeros_like(padded)
        for k in range(width):
            gp[k : k + steps] += g[:, k, :]
        return (gp[pad : pad + steps],)

    return _emit("conv_windows", (w,), out, backward)


# ---------------------------------------------------------------------------
# Backward pass and checks
# ---------------------------------------------------------------------------


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss.is_leaf:
        if loss.requires_grad:
            _accumulate(loss, np.ones_like(loss.data))
        return

    grads = {loss.node_id: np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(node.output_id, None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp.is_leaf:
                _accumulate(inp, gi)
            elif inp.node_id in grads:
                grads[inp.node_id] = grads[inp.node_id] + gi
            else:
                grads[inp.node_id] = gi


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    g = np.reshape(g, t.data.shape)
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def numerical_gradient(
    fn: Callable[[], float], t: Tensor, step: float = 1e-5
) -> np.ndarray:
    """Central finite differences of ``fn`` with respect to every entry of ``t``."""
    grad = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        plus = fn()
        flat[i] = orig - step
        minus = fn()
        flat[i] = orig
        gflat[i] = (plus - minus) / (2.0 * step)
    return grad
