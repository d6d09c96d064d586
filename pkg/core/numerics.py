import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.errors import CheckpointError, DegenerateRowError, DimensionError, EvaluationError

logger = logging.getLogger(__name__)

# --- CONFIGURATIONS ---
DTYPE = np.float64
LEAKY_SLOPE = 0.2
LAYER_NORM_EPS = 1e-5
GRAD_CHECK_FLOOR = 1e-8

Operand = Union["Tensor", np.ndarray, float, int]


# HELPER -> Reverses numpy broadcasting on a gradient.
def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _topological_order(root: "Tensor") -> List["Tensor"]:
    """Inputs-first ordering of every tensor reachable from ``root`` (iterative, no recursion limit)."""
    order: List[Tensor] = []
    seen = set()
    stack = [(root, False)]
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


# --- DATA STRUCTURES ---
class Tensor:
    """
    Dense float64 value with reverse-mode differentiation.

    ``data`` is a row-major numpy array; every op below records its inputs and a
    closure that pushes the output gradient back to them. Leading axes are batch
    axes for all model code.
    """

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, _parents: Tuple["Tensor", ...] = (), _backward: Optional[Callable] = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: Optional[np.ndarray] = None
        self._parents = _parents
        self._backward = _backward

    # Shape helpers
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def flat(self) -> List[float]:
        return self.data.reshape(-1).tolist()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(grad, dtype=DTYPE)
        else:
            self.grad = self.grad + grad

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(f"backward() needs a seed gradient for non-scalar output of shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        self._accumulate(np.asarray(grad, dtype=DTYPE))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operators. The other operand may be a number or an array.
    def __add__(self, other: Operand) -> "Tensor":
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other: Operand) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: Operand) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: Operand) -> "Tensor":
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other: Operand) -> "Tensor":
        return div(self, other)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: Operand) -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index) -> "Tensor":
        return slice_(self, index)


class Parameter(Tensor):
    """A named, trainable tensor. Names are dotted paths such as ``gat.layer1.theta``."""

    __slots__ = ("name", "group")

    def __init__(self, name: str, data, group: str = "trunk"):
        super().__init__(np.array(data, dtype=DTYPE))
        self.name = name
        self.group = group

    @property
    def value(self) -> np.ndarray:
        return self.data

    @property
    def gradient(self) -> np.ndarray:
        return self.grad if self.grad is not None else np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


class ParameterSet:
    """Ordered, name-unique collection of parameters belonging to one model."""

    def __init__(self):
        self._params: Dict[str, Parameter] = {}

    def add(self, name: str, data, group: str = "trunk") -> Parameter:
        if name in self._params:
            raise ValueError(f"Duplicate parameter name '{name}'")
        param = Parameter(name, data, group)
        self._params[name] = param
        return param

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> List[str]:
        return list(self._params)

    def zero_grad(self) -> None:
        for param in self._params.values():
            param.zero_grad()

    def state_dict(self) -> Dict[str, Dict[str, list]]:
        return {
            name: {"shape": list(p.shape), "data": p.data.reshape(-1).tolist()}
            for name, p in self._params.items()
        }

    def load_state_dict(self, state: Dict[str, Dict[str, list]]) -> None:
        missing = set(self._params) - set(state)
        unexpected = set(state) - set(self._params)
        if missing or unexpected:
            raise CheckpointError(f"Parameter mismatch. missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, entry in state.items():
            param = self._params[name]
            shape = tuple(entry["shape"])
            if shape != param.shape:
                raise CheckpointError(f"Shape mismatch for '{name}': checkpoint {shape} vs model {param.shape}")
            param.data[...] = np.asarray(entry["data"], dtype=DTYPE).reshape(shape)


@dataclass
class GradCheckReport:
    parameter: str
    max_rel_error: float
    tolerance: float
    passed: bool
    coordinates: int = 0


def _lift(x: Operand) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(data) -> Tensor:
    """Constant tensor holding a copy of ``data``."""
    return Tensor(np.array(data, dtype=DTYPE))


def glorot(rng: np.random.Generator, shape: Sequence[int]) -> np.ndarray:
    fan_in, fan_out = (shape[-2], shape[-1]) if len(shape) >= 2 else (shape[0], 1)
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=tuple(shape))


# --- ELEMENTWISE OPS ---
def add(a: Operand, b: Operand) -> Tensor:
    a, b = _lift(a), _lift(b)

    def _backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return Tensor(a.data + b.data, (a, b), _backward)


def sub(a: Operand, b: Operand) -> Tensor:
    a, b = _lift(a), _lift(b)

    def _backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(-g, b.shape))

    return Tensor(a.data - b.data, (a, b), _backward)


def mul(a: Operand, b: Operand) -> Tensor:
    a, b = _lift(a), _lift(b)

    def _backward(g):
        a._accumulate(_unbroadcast(g * b.data, a.shape))
        b._accumulate(_unbroadcast(g * a.data, b.shape))

    return Tensor(a.data * b.data, (a, b), _backward)


def div(a: Operand, b: Operand) -> Tensor:
    a, b = _lift(a), _lift(b)

    def _backward(g):
        a._accumulate(_unbroadcast(g / b.data, a.shape))
        b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return Tensor(a.data / b.data, (a, b), _backward)


def neg(x: Operand) -> Tensor:
    x = _lift(x)
    return Tensor(-x.data, (x,), lambda g: x._accumulate(-g))


def sigmoid(x: Operand) -> Tensor:
    x = _lift(x)
    # exp of a non-positive argument only, so large |x| saturates instead of overflowing
    e = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def _backward(g):
        x._accumulate(g * out * (1.0 - out))

    return Tensor(out, (x,), _backward)


def elu(x: Operand, alpha: float = 1.0) -> Tensor:
    x = _lift(x)
    positive = x.data > 0
    out = np.where(positive, x.data, alpha * np.expm1(np.minimum(x.data, 0.0)))

    def _backward(g):
        x._accumulate(g * np.where(positive, 1.0, out + alpha))

    return Tensor(out, (x,), _backward)


def leaky_relu(x: Operand, slope: float = LEAKY_SLOPE) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"LeakyReLU slope must lie in (0, 1), got {slope}")
    x = _lift(x)
    factor = np.where(x.data >= 0, 1.0, slope)

    def _backward(g):
        x._accumulate(g * factor)

    return Tensor(x.data * factor, (x,), _backward)


def exp(x: Operand) -> Tensor:
    x = _lift(x)
    out = np.exp(x.data)
    return Tensor(out, (x,), lambda g: x._accumulate(g * out))


def log(x: Operand) -> Tensor:
    x = _lift(x)
    return Tensor(np.log(x.data), (x,), lambda g: x._accumulate(g / x.data))


def power(x: Operand, exponent: float) -> Tensor:
    x = _lift(x)
    if exponent == 0:
        return Tensor(np.ones_like(x.data))

    def _backward(g):
        x._accumulate(g * exponent * np.power(x.data, exponent - 1))

    return Tensor(np.power(x.data, exponent), (x,), _backward)


def clip(x: Operand, low: float, high: float) -> Tensor:
    x = _lift(x)
    inside = (x.data >= low) & (x.data <= high)
    return Tensor(np.clip(x.data, low, high), (x,), lambda g: x._accumulate(g * inside))


# --- LINEAR ALGEBRA ---
def matmul(a: Operand, b: Operand) -> Tensor:
    """Batched matrix product over the last two axes; leading axes broadcast."""
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"Cannot multiply shapes {a.shape} and {b.shape}")

    def _backward(g):
        a._accumulate(_unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        b._accumulate(_unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return Tensor(np.matmul(a.data, b.data), (a, b), _backward)


def linear(x: Operand, weight: Operand, bias: Optional[Operand] = None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


# --- REDUCTIONS & SHAPE OPS ---
def sum_(x: Operand, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> Tensor:
    x = _lift(x)

    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.shape))

    return Tensor(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), _backward)


def mean(x: Operand, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> Tensor:
    x = _lift(x)
    total = sum_(x, axis=axis, keepdims=keepdims)
    count = x.size // max(total.size, 1) if axis is not None else x.size
    return div(total, float(count))


def reshape(x: Operand, shape: Sequence[int]) -> Tensor:
    x = _lift(x)
    return Tensor(x.data.reshape(shape), (x,), lambda g: x._accumulate(g.reshape(x.shape)))


def transpose(x: Operand, axes: Optional[Sequence[int]] = None) -> Tensor:
    """Permutes axes; by default swaps the last two."""
    x = _lift(x)
    if axes is None:
        axes = list(range(x.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    inverse = np.argsort(axes)
    return Tensor(np.transpose(x.data, axes), (x,), lambda g: x._accumulate(np.transpose(g, inverse)))


def concat(tensors: Sequence[Operand], axis: int = -1) -> Tensor:
    parts = [_lift(t) for t in tensors]
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def _backward(g):
        for part, piece in zip(parts, np.split(g, splits, axis=axis)):
            part._accumulate(piece)

    return Tensor(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), _backward)


def stack(tensors: Sequence[Operand], axis: int = 0) -> Tensor:
    parts = [_lift(t) for t in tensors]
    out = np.stack([p.data for p in parts], axis=axis)
    norm_axis = axis if axis >= 0 else out.ndim + axis

    def _backward(g):
        for i, part in enumerate(parts):
            part._accumulate(np.take(g, i, axis=norm_axis))

    return Tensor(out, tuple(parts), _backward)


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None for i in items)


def slice_(x: Operand, index) -> Tensor:
    x = _lift(x)

    def _backward(g):
        full = np.zeros_like(x.data)
        if _is_basic_index(index):
            full[index] += g
        else:
            np.add.at(full, index, g)
        x._accumulate(full)

    return Tensor(np.array(x.data[index]), (x,), _backward)


# --- COMPOSITE OPS ---
def softmax_masked(logits: Operand, mask: Optional[Union["Tensor", np.ndarray]] = None) -> Tensor:
    """
    Softmax over the last axis after adding an additive mask of {0, -inf}.
    Masked entries come out exactly 0; a row with nothing permitted is an error.
    """
    logits = _lift(logits)
    z = logits.data
    if mask is not None:
        z = z + (mask.data if isinstance(mask, Tensor) else np.asarray(mask, dtype=DTYPE))
    row_max = np.max(z, axis=-1, keepdims=True)
    if np.any(np.isneginf(row_max)):
        raise DegenerateRowError("Softmax row is fully masked")
    e = np.exp(z - row_max)
    out = e / np.sum(e, axis=-1, keepdims=True)

    def _backward(g):
        logits._accumulate(out * (g - np.sum(g * out, axis=-1, keepdims=True)))

    return Tensor(out, (logits,), _backward)


def layer_norm(x: Operand, scale: Operand, shift: Operand, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalizes over the last axis, then applies the learnable scale/shift."""
    x, scale, shift = _lift(x), _lift(scale), _lift(shift)
    centered = x.data - np.mean(x.data, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(np.mean(centered * centered, axis=-1, keepdims=True) + eps)
    x_hat = centered * inv_std

    def _backward(g):
        g_hat = g * scale.data
        x._accumulate(inv_std * (
            g_hat
            - np.mean(g_hat, axis=-1, keepdims=True)
            - x_hat * np.mean(g_hat * x_hat, axis=-1, keepdims=True)
        ))
        scale._accumulate(_unbroadcast(g * x_hat, scale.shape))
        shift._accumulate(_unbroadcast(g, shift.shape))

    return Tensor(x_hat * scale.data + shift.data, (x, scale, shift), _backward)


# --- GRADIENT CHECKING ---
def _evaluate(closure: Callable[[], Tensor]) -> float:
    value = closure().item()
    if not np.isfinite(value):
        raise EvaluationError(f"Loss evaluated to a non-finite value ({value})")
    return value


def grad_check(
    closure: Callable[[], Tensor],
    params: Iterable[Parameter],
    epsilon: float = 1e-6,
    tol: float = 1e-4,
    max_coords: int = 32,
    seed: int = 0,
) -> List[GradCheckReport]:
    """
    Compares analytic gradients against central finite differences.

    Parameters larger than ``max_coords`` entries are checked on a seeded sample of
    coordinates. Relative error uses the denominator max(|analytic|, |numeric|, 1e-8).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    params = list(params)
    for p in params:
        p.zero_grad()
    loss = closure()
    if not np.isfinite(loss.item()):
        raise EvaluationError(f"Loss evaluated to a non-finite value ({loss.item()})")
    loss.backward()
    analytic = {p.name: p.gradient.copy() for p in params}

    rng = np.random.default_rng(seed)
    reports: List[GradCheckReport] = []
    for p in params:
        if p.size <= max_coords:
            coords = np.arange(p.size)
        else:
            coords = np.sort(rng.choice(p.size, size=max_coords, replace=False))
        worst = 0.0
        for flat_index in coords:
            index = np.unravel_index(int(flat_index), p.shape)
            original = p.data[index]
            p.data[index] = original + epsilon
            f_plus = _evaluate(closure)
            p.data[index] = original - epsilon
            f_minus = _evaluate(closure)
            p.data[index] = original
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            exact = analytic[p.name][index]
            denom = max(abs(exact), abs(numeric), GRAD_CHECK_FLOOR)
            worst = max(worst, abs(exact - numeric) / denom)
        report = GradCheckReport(p.name, worst, tol, worst <= tol, len(coords))
        logger.debug("grad-check %s: max rel error %.3e over %d coords", p.name, worst, len(coords))
        reports.append(report)
    for p in params:
        p.zero_grad()
    return reports
