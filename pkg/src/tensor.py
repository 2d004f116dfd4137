"""Dense tensors with reverse-mode automatic differentiation."""

import itertools
import threading
from contextlib import contextmanager
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .config import Precision
from .errors import NonFiniteError, PhotorealError, ShapeError

_DTYPES = {Precision.TRAIN32: np.float32, Precision.CHECK64: np.float64}

_local = threading.local()


def get_precision() -> Precision:
    """Precision mode of the calling thread."""
    return getattr(_local, "precision", Precision.TRAIN32)


def default_dtype() -> np.dtype:
    return np.dtype(_DTYPES[get_precision()])


@contextmanager
def precision(mode: Precision) -> Iterator[None]:
    """Temporarily switch the precision new tensors are created in."""
    previous = get_precision()
    _local.precision = mode
    try:
        yield
    finally:
        _local.precision = previous


def is_grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate without recording operations for backward."""
    previous = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


ArrayLike = Union[np.ndarray, float, int, Sequence[float], Sequence[Sequence[float]]]


class Function:
    """Base class for differentiable operations.

    Subclasses implement `forward` on raw arrays and `backward`, which maps the
    gradient of the output to one gradient (or None) per tensor input.
    """

    _sequence = itertools.count()

    def __init__(self, *inputs: "Tensor"):
        self.inputs = inputs
        self.needs_input_grad = tuple(t.requires_grad for t in inputs)
        self.seq = next(Function._sequence)
        self.output: Optional["Tensor"] = None

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no forward pass")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError(f"{type(self).__name__} has no backward pass")

    @classmethod
    def apply(cls, *inputs: "Tensor", **kwargs: Any) -> "Tensor":
        func = cls(*inputs)
        out = func.forward(*(t.data for t in inputs), **kwargs)
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(f"{cls.__name__} produced non-finite values")
        requires_grad = is_grad_enabled() and any(func.needs_input_grad)
        result = Tensor(out, requires_grad=requires_grad, dtype=out.dtype,
                        creator=func if requires_grad else None)
        if requires_grad:
            func.output = result
        return result

    @staticmethod
    def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
        """Sum out the axes numpy broadcasting added to reach `grad.shape`."""
        if grad.shape == shape:
            return grad
        while grad.ndim > len(shape):
            grad = grad.sum(axis=0)
        for axis, extent in enumerate(shape):
            if extent == 1 and grad.shape[axis] != 1:
                grad = grad.sum(axis=axis, keepdims=True)
        return grad


class Tensor:
    """An array plus the bookkeeping reverse-mode differentiation needs."""

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: Optional[str] = None,
        dtype: Optional[Any] = None,
        creator: Optional[Function] = None,
    ):
        dtype = dtype if dtype is not None else default_dtype()
        # Op outputs are fresh arrays already; leaves copy so callers can't alias them
        self.data = np.asarray(data, dtype=dtype) if creator is not None else np.array(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.name = name
        self.creator = creator
        self.grad: Optional[np.ndarray] = None

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
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self.creator is None

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single value, tensor has shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, name=self.name, dtype=self.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; the ops live in functional
    def __add__(self, other: Union["Tensor", float]) -> "Tensor":
        from . import functional as F
        if isinstance(other, Tensor):
            return F.add(self, other)
        return F.shift(self, float(other))

    __radd__ = __add__

    def __sub__(self, other: Union["Tensor", float]) -> "Tensor":
        from . import functional as F
        if isinstance(other, Tensor):
            return F.sub(self, other)
        return F.shift(self, -float(other))

    def __rsub__(self, other: float) -> "Tensor":
        from . import functional as F
        return F.shift(F.scale(self, -1.0), float(other))

    def __mul__(self, other: Union["Tensor", float]) -> "Tensor":
        from . import functional as F
        if isinstance(other, Tensor):
            return F.mul(self, other)
        return F.scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        from . import functional as F
        return F.scale(self, -1.0)

    def __truediv__(self, other: float) -> "Tensor":
        from . import functional as F
        return F.scale(self, 1.0 / float(other))

    def sum(self) -> "Tensor":
        from . import functional as F
        return F.sum(self)

    def mean(self) -> "Tensor":
        from . import functional as F
        return F.mean(self)

    def reshape(self, *shape: int) -> "Tensor":
        from . import functional as F
        return F.reshape(self, shape)


class Graph:
    """Operations reachable from an output, in the order they were executed."""

    def __init__(self, nodes: List[Function]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, output: Tensor) -> "Graph":
        seen: Dict[int, Function] = {}
        stack = [output.creator] if output.creator is not None else []
        while stack:
            func = stack.pop()
            if id(func) in seen:
                continue
            seen[id(func)] = func
            stack.extend(t.creator for t in func.inputs if t.creator is not None)
        # Sequence numbers are assigned at execution, so sorting them is a topological order
        return cls(sorted(seen.values(), key=lambda f: f.seq))

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self) -> Iterator[Function]:
        return iter(self.nodes)


def backward(loss: Tensor, graph: Optional[Graph] = None) -> Graph:
    """Populate `.grad` of every leaf that requires it and is reachable from `loss`.

    Leaf gradients accumulate across calls; callers zero them between steps.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise PhotorealError("loss does not depend on any tensor that requires grad")
    graph = graph if graph is not None else Graph.from_output(loss)

    if loss.is_leaf:
        _accumulate(loss, np.ones_like(loss.data))
        return graph

    pending: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for func in reversed(graph.nodes):
        grad = pending.pop(id(func.output), None)
        if grad is None:
            continue
        input_grads = func.backward(grad)
        for tensor, needed, g in zip(func.inputs, func.needs_input_grad, input_grads):
            if not needed or g is None:
                continue
            if g.shape != tensor.shape:
                raise ShapeError(
                    f"{type(func).__name__} returned gradient of shape {g.shape} "
                    f"for input of shape {tensor.shape}"
                )
            if tensor.is_leaf:
                _accumulate(tensor, g)
            elif id(tensor) in pending:
                pending[id(tensor)] = pending[id(tensor)] + g
            else:
                pending[id(tensor)] = g
    return graph


def _accumulate(tensor: Tensor, grad: np.ndarray) -> None:
    grad = grad.astype(tensor.dtype, copy=False)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError(f"non-finite gradient for {tensor.name or tensor!r}")
    tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad
