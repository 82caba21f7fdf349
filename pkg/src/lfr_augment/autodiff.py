"""
Tape-based reverse-mode differentiation over a fixed set of array primitives.

Values are float64 numpy arrays. Leading axes act as batch axes for matvec, dot,
slice and concat, so a whole batch of subsections can share one tape.

Model code is written once against the primitive-call interface and evaluated either
eagerly with `NumpyOps` or recorded on a `Tape` for gradients.
"""

import logging
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Optional, Sequence, Union

import numpy as np

from lfr_augment.errors import (
    ConstructionError,
    NumericError,
    UnregisteredPrimitiveError,
)

logger = logging.getLogger(__name__)

Forward = Callable[..., np.ndarray]
Adjoint = Callable[..., tuple[np.ndarray, ...]]


def _arr(value: Any) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the shape of the original operand."""
    grad = _arr(grad)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


@dataclass(frozen=True)
class Primitive:
    name: str
    forward: Forward
    adjoint: Adjoint


PRIMITIVES: dict[str, Primitive] = {}


def register_primitive(name: str, forward: Forward, adjoint: Adjoint) -> None:
    """Register a differentiable primitive.

    Args:
        name: Operation id recorded on tapes
        forward: f(*inputs, **aux) -> output array
        adjoint: a(g, out, *inputs, **aux) -> one gradient per input
    """
    PRIMITIVES[name] = Primitive(name=name, forward=forward, adjoint=adjoint)


def unregister_primitive(name: str) -> None:
    PRIMITIVES.pop(name, None)


# ---- primitive set ----


def _add_fwd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return _arr(a + b)


def _add_adj(
    g: np.ndarray, out: np.ndarray, a: np.ndarray, b: np.ndarray
) -> tuple[np.ndarray, ...]:
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _sub_fwd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return _arr(a - b)


def _sub_adj(
    g: np.ndarray, out: np.ndarray, a: np.ndarray, b: np.ndarray
) -> tuple[np.ndarray, ...]:
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


def _neg_fwd(a: np.ndarray) -> np.ndarray:
    return _arr(-a)


def _neg_adj(g: np.ndarray, out: np.ndarray, a: np.ndarray) -> tuple[np.ndarray, ...]:
    return (_arr(-g),)


def _mul_fwd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return _arr(a * b)


def _mul_adj(
    g: np.ndarray, out: np.ndarray, a: np.ndarray, b: np.ndarray
) -> tuple[np.ndarray, ...]:
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _matvec_fwd(m: np.ndarray, x: np.ndarray) -> np.ndarray:
    # rows of x are vectors; works for a single vector and for a batch
    return _arr(x @ m.T)


def _matvec_adj(
    g: np.ndarray, out: np.ndarray, m: np.ndarray, x: np.ndarray
) -> tuple[np.ndarray, ...]:
    rows, cols = m.shape
    g2 = np.broadcast_to(g, np.broadcast_shapes(g.shape, x.shape[:-1] + (rows,)))
    x2 = np.broadcast_to(x, g2.shape[:-1] + (cols,))
    grad_m = g2.reshape(-1, rows).T @ x2.reshape(-1, cols)
    grad_x = _unbroadcast(g2 @ m, x.shape)
    return _arr(grad_m), grad_x


def _matmul_fwd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return _arr(a @ b)


def _matmul_adj(
    g: np.ndarray, out: np.ndarray, a: np.ndarray, b: np.ndarray
) -> tuple[np.ndarray, ...]:
    return _arr(g @ b.T), _arr(a.T @ g)


def _dot_fwd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return _arr(np.sum(a * b, axis=-1))


def _dot_adj(
    g: np.ndarray, out: np.ndarray, a: np.ndarray, b: np.ndarray
) -> tuple[np.ndarray, ...]:
    g_col = _arr(g)[..., None]
    return _unbroadcast(g_col * b, a.shape), _unbroadcast(g_col * a, b.shape)


def _tanh_fwd(a: np.ndarray) -> np.ndarray:
    return _arr(np.tanh(a))


def _tanh_adj(g: np.ndarray, out: np.ndarray, a: np.ndarray) -> tuple[np.ndarray, ...]:
    return (_arr(g * (1.0 - out * out)),)


def _power_fwd(a: np.ndarray, *, exponent: int) -> np.ndarray:
    return _arr(a**exponent)


def _power_adj(
    g: np.ndarray, out: np.ndarray, a: np.ndarray, *, exponent: int
) -> tuple[np.ndarray, ...]:
    if exponent == 0:
        return (np.zeros_like(a),)
    return (_arr(g * exponent * a ** (exponent - 1)),)


def _reciprocal_fwd(a: np.ndarray) -> np.ndarray:
    return _arr(1.0 / a)


def _reciprocal_adj(
    g: np.ndarray, out: np.ndarray, a: np.ndarray
) -> tuple[np.ndarray, ...]:
    return (_arr(-g * out * out),)


def _sum_fwd(a: np.ndarray) -> np.ndarray:
    return _arr(np.sum(a))


def _sum_adj(g: np.ndarray, out: np.ndarray, a: np.ndarray) -> tuple[np.ndarray, ...]:
    return (_arr(np.full(a.shape, float(g))),)


def _mean_fwd(a: np.ndarray) -> np.ndarray:
    return _arr(np.mean(a))


def _mean_adj(g: np.ndarray, out: np.ndarray, a: np.ndarray) -> tuple[np.ndarray, ...]:
    return (_arr(np.full(a.shape, float(g) / max(a.size, 1))),)


def _squared_norm_fwd(a: np.ndarray) -> np.ndarray:
    return _arr(np.sum(a * a))


def _squared_norm_adj(
    g: np.ndarray, out: np.ndarray, a: np.ndarray
) -> tuple[np.ndarray, ...]:
    return (_arr(2.0 * float(g) * a),)


def _slice_fwd(a: np.ndarray, *, start: int, stop: int) -> np.ndarray:
    return _arr(a[..., start:stop])


def _slice_adj(
    g: np.ndarray, out: np.ndarray, a: np.ndarray, *, start: int, stop: int
) -> tuple[np.ndarray, ...]:
    grad = np.zeros(a.shape)
    grad[..., start:stop] = g
    return (grad,)


def _concat_fwd(*parts: np.ndarray) -> np.ndarray:
    batch = np.broadcast_shapes(*(p.shape[:-1] for p in parts))
    return _arr(
        np.concatenate(
            [np.broadcast_to(p, batch + (p.shape[-1],)) for p in parts], axis=-1
        )
    )


def _concat_adj(
    g: np.ndarray, out: np.ndarray, *parts: np.ndarray
) -> tuple[np.ndarray, ...]:
    grads = []
    offset = 0
    for part in parts:
        width = part.shape[-1]
        grads.append(_unbroadcast(g[..., offset : offset + width], part.shape))
        offset += width
    return tuple(grads)


for _name, _fwd, _adj in (
    ("add", _add_fwd, _add_adj),
    ("sub", _sub_fwd, _sub_adj),
    ("neg", _neg_fwd, _neg_adj),
    ("mul", _mul_fwd, _mul_adj),
    ("matvec", _matvec_fwd, _matvec_adj),
    ("matmul", _matmul_fwd, _matmul_adj),
    ("dot", _dot_fwd, _dot_adj),
    ("tanh", _tanh_fwd, _tanh_adj),
    ("power", _power_fwd, _power_adj),
    ("reciprocal", _reciprocal_fwd, _reciprocal_adj),
    ("sum", _sum_fwd, _sum_adj),
    ("mean", _mean_fwd, _mean_adj),
    ("squared_norm", _squared_norm_fwd, _squared_norm_adj),
    ("slice", _slice_fwd, _slice_adj),
    ("concat", _concat_fwd, _concat_adj),
):
    register_primitive(_name, _fwd, _adj)


# ---- parameters ----


@dataclass(frozen=True)
class ParamSlot:
    offset: int
    shape: tuple[int, ...]
    trainable: bool

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    @property
    def stop(self) -> int:
        return self.offset + self.size


class ParamVector:
    """Flat parameter vector with a name -> (offset, shape) index.

    Slices are appended in registration order, so they are disjoint and cover the
    vector exactly. Views returned by `view` alias the flat storage.
    """

    def __init__(self) -> None:
        self.data: np.ndarray = np.zeros(0)
        self.index: dict[str, ParamSlot] = {}

    def add(self, name: str, value: Any, trainable: bool = True) -> None:
        if name in self.index:
            raise ConstructionError(f"parameter {name} already registered")
        array = _arr(value)
        slot = ParamSlot(
            offset=self.data.size, shape=tuple(array.shape), trainable=trainable
        )
        self.data = np.concatenate([self.data, array.ravel()])
        self.index[name] = slot

    def slot(self, name: str) -> ParamSlot:
        try:
            return self.index[name]
        except KeyError as e:
            raise ConstructionError(f"unknown parameter {name}") from e

    def view(self, name: str) -> np.ndarray:
        slot = self.slot(name)
        return self.data[slot.offset : slot.stop].reshape(slot.shape)

    def set(self, name: str, value: Any) -> None:
        slot = self.slot(name)
        array = _arr(value)
        if array.shape != slot.shape:
            raise ConstructionError(
                f"parameter {name}: expected shape {slot.shape}, got {array.shape}"
            )
        self.data[slot.offset : slot.stop] = array.ravel()

    def set_trainable(self, name: str, trainable: bool) -> None:
        slot = self.slot(name)
        self.index[name] = ParamSlot(
            offset=slot.offset, shape=slot.shape, trainable=trainable
        )

    def is_trainable(self, name: str) -> bool:
        return self.slot(name).trainable

    def names(self) -> list[str]:
        return list(self.index)

    def trainable_mask(self) -> np.ndarray:
        mask = np.zeros(self.data.size, dtype=bool)
        for slot in self.index.values():
            if slot.trainable:
                mask[slot.offset : slot.stop] = True
        return mask

    def copy(self) -> "ParamVector":
        clone = ParamVector()
        clone.data = self.data.copy()
        clone.index = dict(self.index)
        return clone

    def __contains__(self, name: object) -> bool:
        return name in self.index

    def __len__(self) -> int:
        return int(self.data.size)


# ---- evaluation backends ----

Operand = Union[np.ndarray, "Node", float]


class _PrimitiveCalls:
    """Named wrappers around `apply` shared by both evaluation backends."""

    def apply(self, op: str, *inputs: Any, **aux: Any) -> Any:
        raise NotImplementedError

    def add(self, a: Any, b: Any) -> Any:
        return self.apply("add", a, b)

    def sub(self, a: Any, b: Any) -> Any:
        return self.apply("sub", a, b)

    def neg(self, a: Any) -> Any:
        return self.apply("neg", a)

    def mul(self, a: Any, b: Any) -> Any:
        return self.apply("mul", a, b)

    def matvec(self, m: Any, x: Any) -> Any:
        return self.apply("matvec", m, x)

    def matmul(self, a: Any, b: Any) -> Any:
        return self.apply("matmul", a, b)

    def dot(self, a: Any, b: Any) -> Any:
        return self.apply("dot", a, b)

    def tanh(self, a: Any) -> Any:
        return self.apply("tanh", a)

    def power(self, a: Any, exponent: int) -> Any:
        return self.apply("power", a, exponent=exponent)

    def reciprocal(self, a: Any) -> Any:
        return self.apply("reciprocal", a)

    def sum(self, a: Any) -> Any:
        return self.apply("sum", a)

    def mean(self, a: Any) -> Any:
        return self.apply("mean", a)

    def squared_norm(self, a: Any) -> Any:
        return self.apply("squared_norm", a)

    def slice(self, a: Any, start: int, stop: int) -> Any:
        return self.apply("slice", a, start=start, stop=stop)

    def concat(self, parts: Sequence[Any]) -> Any:
        return self.apply("concat", *parts)

    def scale(self, a: Any, factor: float) -> Any:
        return self.mul(a, self.constant(np.asarray(factor)))

    def constant(self, value: Any) -> Any:
        raise NotImplementedError

    def param(self, name: str) -> Any:
        raise NotImplementedError

    @staticmethod
    def shape(a: Any) -> tuple[int, ...]:
        if isinstance(a, Node):
            return tuple(a.value.shape)
        return tuple(np.shape(a))


class NumpyOps(_PrimitiveCalls):
    """Eager evaluation: every primitive call returns a plain array."""

    def __init__(self, params: Optional[ParamVector] = None):
        self.params = params

    def apply(self, op: str, *inputs: Any, **aux: Any) -> np.ndarray:
        primitive = PRIMITIVES.get(op)
        if primitive is None:
            raise UnregisteredPrimitiveError(f"primitive {op!r} is not registered")
        return _arr(primitive.forward(*[_arr(v) for v in inputs], **aux))

    def constant(self, value: Any) -> np.ndarray:
        return _arr(value)

    def param(self, name: str) -> np.ndarray:
        if self.params is None:
            raise ConstructionError(f"no parameter vector bound; cannot read {name}")
        return self.params.view(name)


class Node:
    """Handle to one value recorded on a tape."""

    __slots__ = ("tape", "index")

    def __init__(self, tape: "Tape", index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.records[self.index].value

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.value.shape)

    def __add__(self, other: Any) -> "Node":
        return self.tape.add(self, other)

    def __radd__(self, other: Any) -> "Node":
        return self.tape.add(other, self)

    def __sub__(self, other: Any) -> "Node":
        return self.tape.sub(self, other)

    def __rsub__(self, other: Any) -> "Node":
        return self.tape.sub(other, self)

    def __mul__(self, other: Any) -> "Node":
        return self.tape.mul(self, other)

    def __rmul__(self, other: Any) -> "Node":
        return self.tape.mul(other, self)

    def __neg__(self) -> "Node":
        return self.tape.neg(self)

    def __repr__(self) -> str:
        return f"Node(#{self.index}, shape={self.shape})"


@dataclass
class TapeRecord:
    op: str
    inputs: tuple[int, ...]
    value: np.ndarray
    aux: dict[str, Any]


class Tape(_PrimitiveCalls):
    """Wengert list of primitive applications, recorded in topological order."""

    def __init__(self, params: Optional[ParamVector] = None):
        self.params = params
        self.records: list[TapeRecord] = []
        self._param_nodes: dict[str, Node] = {}

    def _push(
        self, op: str, inputs: tuple[int, ...], value: np.ndarray, aux: dict[str, Any]
    ) -> Node:
        self.records.append(TapeRecord(op=op, inputs=inputs, value=value, aux=aux))
        return Node(self, len(self.records) - 1)

    def _as_node(self, value: Any) -> Node:
        if isinstance(value, Node):
            if value.tape is not self:
                raise ConstructionError("node belongs to a different tape")
            return value
        return self.constant(value)

    def constant(self, value: Any) -> Node:
        return self._push("const", (), _arr(value), {})

    def param(self, name: str) -> Node:
        if name in self._param_nodes:
            return self._param_nodes[name]
        if self.params is None:
            raise ConstructionError(f"no parameter vector bound; cannot read {name}")
        node = self._push("param", (), self.params.view(name).copy(), {"name": name})
        self._param_nodes[name] = node
        return node

    def apply(self, op: str, *inputs: Any, **aux: Any) -> Node:
        primitive = PRIMITIVES.get(op)
        if primitive is None:
            raise UnregisteredPrimitiveError(f"primitive {op!r} is not registered")
        nodes = [self._as_node(v) for v in inputs]
        value = _arr(primitive.forward(*[n.value for n in nodes], **aux))
        if not np.all(np.isfinite(value)):
            raise NumericError(node_id=len(self.records), op=op)
        return self._push(op, tuple(n.index for n in nodes), value, dict(aux))

    def backward(self, output: Node) -> np.ndarray:
        """Propagate adjoints from a scalar output to the parameter leaves.

        Returns:
            Flat gradient with the length of the bound parameter vector; frozen
            slices stay zero.
        """
        if output.value.size != 1:
            raise ConstructionError(
                f"backward needs a scalar output, got shape {output.shape}"
            )
        size = len(self.params) if self.params is not None else 0
        gradient = np.zeros(size)
        adjoints: list[Optional[np.ndarray]] = [None] * (output.index + 1)
        adjoints[output.index] = np.ones_like(output.value)
        for i in range(output.index, -1, -1):
            g = adjoints[i]
            if g is None:
                continue
            record = self.records[i]
            if record.op == "const":
                continue
            if record.op == "param":
                assert self.params is not None
                slot = self.params.slot(record.aux["name"])
                if slot.trainable:
                    gradient[slot.offset : slot.stop] += _arr(g).ravel()
                continue
            input_values = [self.records[j].value for j in record.inputs]
            grads = PRIMITIVES[record.op].adjoint(
                g, record.value, *input_values, **record.aux
            )
            for j, gj in zip(record.inputs, grads):
                current = adjoints[j]
                adjoints[j] = _arr(gj) if current is None else current + gj
            adjoints[i] = None
        return gradient

    def replay(self, output: Node) -> np.ndarray:
        """Re-evaluate the recorded graph from its leaves and return the output value."""
        values: list[np.ndarray] = []
        for record in self.records[: output.index + 1]:
            if record.op == "param":
                assert self.params is not None
                values.append(self.params.view(record.aux["name"]).copy())
            elif record.op == "const":
                values.append(record.value)
            else:
                values.append(
                    _arr(
                        PRIMITIVES[record.op].forward(
                            *[values[j] for j in record.inputs], **record.aux
                        )
                    )
                )
        return values[output.index]

    def __len__(self) -> int:
        return len(self.records)


# ---- drivers ----

LossBuilder = Callable[[Tape], Node]


def grad(loss_builder: LossBuilder, params: ParamVector) -> tuple[float, np.ndarray]:
    """Evaluate a scalar loss and its gradient with respect to `params`."""
    tape = Tape(params)
    loss = loss_builder(tape)
    if not isinstance(loss, Node):
        raise ConstructionError("loss builder must return a tape node")
    gradient = tape.backward(loss)
    logger.debug(f"gradient over {len(tape)} tape nodes")
    return float(loss.value.reshape(())), gradient


def loss_value(loss_builder: LossBuilder, params: ParamVector) -> float:
    return float(loss_builder(Tape(params)).value.reshape(()))


def check_grad(
    loss_builder: LossBuilder,
    params: ParamVector,
    coords: Iterable[int],
    step: float = 1e-6,
) -> float:
    """Compare the tape gradient with central differences on selected coordinates.

    Returns:
        Worst relative error, using max(|analytic|, |numeric|, 1e-8) as denominator
    """
    if step <= 0:
        raise ValueError("step must be positive")
    _, analytic = grad(loss_builder, params)
    worst = 0.0
    for coord in coords:
        original = float(params.data[coord])
        params.data[coord] = original + step
        plus = loss_value(loss_builder, params)
        params.data[coord] = original - step
        minus = loss_value(loss_builder, params)
        params.data[coord] = original
        numeric = (plus - minus) / (2.0 * step)
        denom = max(abs(float(analytic[coord])), abs(numeric), 1e-8)
        worst = max(worst, abs(float(analytic[coord]) - numeric) / denom)
    return worst


def jacobian(fn: Callable[[Tape, Node], Node], x: Any) -> np.ndarray:
    """Dense Jacobian of a vector function, one reverse pass per output entry."""
    point = ParamVector()
    point.add("x", _arr(x).ravel())
    first = Tape(point)
    n_out = fn(first, first.param("x")).value.size
    rows: list[np.ndarray] = []
    for i in range(n_out):
        tape = Tape(point)
        out = fn(tape, tape.param("x"))
        rows.append(tape.backward(tape.sum(tape.slice(out, i, i + 1))))
    return np.vstack(rows) if rows else np.zeros((0, point.data.size))
