"""Dense-tensor reverse-mode automatic differentiation.

A tape is recorded implicitly while ops execute: every op result keeps
references to its inputs and a closure that routes the output gradient
back to them. ``backward`` replays the tape in reverse topological order
and then frees it, so graphs never outlive one forward/backward cycle.

Conventions:
  - double precision by default (``set_default_dtype`` switches builds
    to float32 for speed at the cost of the tight test tolerances);
  - no broadcasting beyond scalar-with-tensor and matrix-plus-row-bias;
    anything else raises ``ShapeError`` naming both shapes;
  - under strict mode (default) any op producing NaN/Inf raises
    ``NumericError`` immediately instead of letting the values spread.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DegenerateInputError, NumericError, ShapeError

_default_dtype = np.float64
_strict_finite = True


def set_default_dtype(dtype) -> None:
    """Set the dtype used for newly created tensors (float64 or float32)."""
    global _default_dtype
    if dtype not in (np.float64, np.float32):
        raise ValueError(f"unsupported dtype {dtype!r}; use np.float64 or np.float32")
    _default_dtype = dtype


def default_dtype():
    return _default_dtype


def set_strict_finite(enabled: bool) -> None:
    """Toggle the NaN/Inf guard that runs after every forward op."""
    global _strict_finite
    _strict_finite = bool(enabled)


def strict_finite() -> bool:
    return _strict_finite


class Tensor:
    """A dense array plus its slot in the gradient tape.

    ``grad`` is populated by ``backward`` for every tensor with
    ``requires_grad`` reachable from the loss; contributions from
    multiple uses of the same tensor accumulate additively.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_default_dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """A view of the same values cut off from the gradient tape."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def sum(self) -> "Tensor":
        return sum_all(self)

    def mean(self) -> "Tensor":
        return mean_all(self)

    # Operators lift plain numbers to constant tensors.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def param(data) -> Tensor:
    """A trainable leaf tensor."""
    return Tensor(data, requires_grad=True)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (int, float, np.floating, np.integer, np.ndarray, list, tuple)):
        return Tensor(x)
    raise TypeError(f"cannot interpret {type(x).__name__} as Tensor")


def _guard(data: np.ndarray, op: str) -> np.ndarray:
    if _strict_finite and not np.all(np.isfinite(data)):
        raise NumericError(f"{op} produced non-finite values")
    return data


def _result(data: np.ndarray, op: str, inputs: tuple[Tensor, ...],
            backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(_guard(data, op))
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._parents = inputs
        out._backward = backward
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


# ---------------------------------------------------------------------------
# elementwise and scalar ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also scalar+tensor and matrix+row-bias."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:
        def bw(g):
            _accumulate(a, g)
            _accumulate(b, g)
    elif a.shape == ():
        def bw(g):
            _accumulate(a, g.sum())
            _accumulate(b, g)
    elif b.shape == ():
        def bw(g):
            _accumulate(a, g)
            _accumulate(b, g.sum())
    elif a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        def bw(g):
            _accumulate(a, g)
            _accumulate(b, g.sum(axis=0))
    else:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")
    return _result(a.data + b.data, "add", (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:
        def bw(g):
            _accumulate(a, g)
            _accumulate(b, -g)
    elif a.shape == ():
        def bw(g):
            _accumulate(a, g.sum())
            _accumulate(b, -g)
    elif b.shape == ():
        def bw(g):
            _accumulate(a, g)
            _accumulate(b, -g.sum())
    else:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}")
    return _result(a.data - b.data, "sub", (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; also scalar*tensor."""
    a, b = _as_tensor(a), _as_tensor(b)
    if not (a.shape == b.shape or a.shape == () or b.shape == ()):
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        ga = g * b.data
        gb = g * a.data
        _accumulate(a, ga.sum() if a.shape == () and ga.shape != () else ga)
        _accumulate(b, gb.sum() if b.shape == () and gb.shape != () else gb)
    return _result(a.data * b.data, "mul", (a, b), bw)


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if not (a.shape == b.shape or a.shape == () or b.shape == ()):
        raise ShapeError(f"div: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        _accumulate(a, ga.sum() if a.shape == () and ga.shape != () else ga)
        _accumulate(b, gb.sum() if b.shape == () and gb.shape != () else gb)
    return _result(a.data / b.data, "div", (a, b), bw)


def neg(a: Tensor) -> Tensor:
    a = _as_tensor(a)

    def bw(g):
        _accumulate(a, -g)
    return _result(-a.data, "neg", (a,), bw)


def sqrt(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out_data = np.sqrt(a.data)

    def bw(g):
        _accumulate(a, g * 0.5 / out_data)
    return _result(out_data, "sqrt", (a,), bw)


def exp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out_data = np.exp(a.data)

    def bw(g):
        _accumulate(a, g * out_data)
    return _result(out_data, "exp", (a,), bw)


def log(a: Tensor) -> Tensor:
    a = _as_tensor(a)

    def bw(g):
        _accumulate(a, g / a.data)
    return _result(np.log(a.data), "log", (a,), bw)


def silu(a: Tensor) -> Tensor:
    """x * sigmoid(x), the smooth gate used in the feed-forward blocks."""
    a = _as_tensor(a)
    sig = 1.0 / (1.0 + np.exp(-a.data))

    def bw(g):
        _accumulate(a, g * sig * (1.0 + a.data * (1.0 - sig)))
    return _result(a.data * sig, "silu", (a,), bw)


def softplus(a: Tensor) -> Tensor:
    """log(1 + e^x), computed in the overflow-safe form."""
    a = _as_tensor(a)
    x = a.data
    out_data = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def bw(g):
        _accumulate(a, g / (1.0 + np.exp(-x)))
    return _result(out_data, "softplus", (a,), bw)


def sum_all(a: Tensor) -> Tensor:
    a = _as_tensor(a)

    def bw(g):
        _accumulate(a, np.full_like(a.data, float(g)))
    return _result(np.asarray(a.data.sum()), "sum", (a,), bw)


def mean_all(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size

    def bw(g):
        _accumulate(a, np.full_like(a.data, float(g) / n))
    return _result(np.asarray(a.data.mean()), "mean", (a,), bw)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Strict 2-D matrix product with the standard transpose backward rules."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expected 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree: {a.shape} vs {b.shape}")

    def bw(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)
    return _result(a.data @ b.data, "matmul", (a, b), bw)


def transpose(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose: expected 2-D operand, got {a.shape}")

    def bw(g):
        _accumulate(a, g.T)
    return _result(a.data.T.copy(), "transpose", (a,), bw)


def dot(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"dot: expected equal-length vectors, got {a.shape} and {b.shape}")

    def bw(g):
        _accumulate(a, float(g) * b.data)
        _accumulate(b, float(g) * a.data)
    return _result(np.asarray(a.data @ b.data), "dot", (a, b), bw)


def cosine_sim(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity of two nonzero vectors, differentiable in both.

    Composed as dot(a, b) / (sqrt(dot(a, a)) * sqrt(dot(b, b))) so external
    recomputations of the same expression match bit for bit.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"cosine_sim: expected equal-length vectors, got {a.shape} and {b.shape}")
    if float(a.data @ a.data) == 0.0:
        raise DegenerateInputError("cosine_sim: first argument has zero norm")
    if float(b.data @ b.data) == 0.0:
        raise DegenerateInputError("cosine_sim: second argument has zero norm")
    return div(dot(a, b), mul(sqrt(dot(a, a)), sqrt(dot(b, b))))


# ---------------------------------------------------------------------------
# shape manipulation: gather / slice / concat / stack
# ---------------------------------------------------------------------------

def take_rows(a: Tensor, indices) -> Tensor:
    """Row gather (embedding-table lookup); backward scatter-adds."""
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"take_rows: expected 2-D table, got {a.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError(f"take_rows: expected 1-D index list, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError(f"take_rows: index out of range for table with {a.shape[0]} rows")

    def bw(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            np.add.at(a.grad, idx, g)
    return _result(a.data[idx], "take_rows", (a,), bw)


def pick(a: Tensor, i: int) -> Tensor:
    """Select position ``i`` along axis 0: a row of a matrix, or an element of a vector."""
    a = _as_tensor(a)
    if a.ndim == 0:
        raise ShapeError("pick: cannot index a scalar")
    if not 0 <= i < a.shape[0]:
        raise ShapeError(f"pick: index {i} out of range for axis of length {a.shape[0]}")

    def bw(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[i] += g
    return _result(np.asarray(a.data[i]), "pick", (a,), bw)


def cols(a: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous column slice of a matrix (used to split attention heads)."""
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"cols: expected 2-D operand, got {a.shape}")
    if not 0 <= start < stop <= a.shape[1]:
        raise ShapeError(f"cols: invalid slice [{start}:{stop}] for width {a.shape[1]}")

    def bw(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[:, start:stop] += g
    return _result(a.data[:, start:stop].copy(), "cols", (a,), bw)


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate 2-D blocks along the sequence (row) axis."""
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat_rows: need at least one tensor")
    width = ts[0].shape[1] if ts[0].ndim == 2 else None
    for t in ts:
        if t.ndim != 2 or t.shape[1] != width:
            raise ShapeError(f"concat_rows: blocks must be 2-D with equal width, got {[t.shape for t in ts]}")
    sizes = [t.shape[0] for t in ts]

    def bw(g):
        offset = 0
        for t, n in zip(ts, sizes):
            _accumulate(t, g[offset:offset + n])
            offset += n
    return _result(np.concatenate([t.data for t in ts], axis=0), "concat_rows", tuple(ts), bw)


def concat_cols(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate 2-D blocks along the feature (column) axis."""
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat_cols: need at least one tensor")
    height = ts[0].shape[0] if ts[0].ndim == 2 else None
    for t in ts:
        if t.ndim != 2 or t.shape[0] != height:
            raise ShapeError(f"concat_cols: blocks must be 2-D with equal height, got {[t.shape for t in ts]}")
    widths = [t.shape[1] for t in ts]

    def bw(g):
        offset = 0
        for t, w in zip(ts, widths):
            _accumulate(t, g[:, offset:offset + w])
            offset += w
    return _result(np.concatenate([t.data for t in ts], axis=1), "concat_cols", tuple(ts), bw)


def stack(tensors: Sequence[Tensor]) -> Tensor:
    """Stack same-shaped tensors along a new leading axis (scalars become a vector)."""
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("stack: need at least one tensor")
    shape = ts[0].shape
    for t in ts:
        if t.shape != shape:
            raise ShapeError(f"stack: mismatched element shapes {[t.shape for t in ts]}")

    def bw(g):
        for i, t in enumerate(ts):
            _accumulate(t, g[i])
    return _result(np.stack([t.data for t in ts], axis=0), "stack", tuple(ts), bw)


# ---------------------------------------------------------------------------
# normalization and softmax-family ops
# ---------------------------------------------------------------------------

def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a matrix, stabilized by row-max subtraction."""
    x = _as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"softmax_rows: expected 2-D operand, got {x.shape}")
    if _strict_finite and np.isnan(x.data).any():
        raise NumericError("softmax_rows received NaN input")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        _accumulate(x, y * (g - (g * y).sum(axis=1, keepdims=True)))
    return _result(y, "softmax_rows", (x,), bw)


def logsumexp(x: Tensor) -> Tensor:
    """log(sum(exp(x))) of a vector, stabilized; backward is softmax(x)."""
    x = _as_tensor(x)
    if x.ndim != 1:
        raise ShapeError(f"logsumexp: expected 1-D operand, got {x.shape}")
    m = x.data.max()
    e = np.exp(x.data - m)
    s = e.sum()

    def bw(g):
        _accumulate(x, float(g) * e / s)
    return _result(np.asarray(m + np.log(s)), "logsumexp", (x,), bw)


def rms_norm(x: Tensor, weight: Tensor, eps: float = 1e-6) -> Tensor:
    """Scale each length-d slice by 1/sqrt(mean(x^2) + eps), then by ``weight``.

    ``eps`` may be zero (exact root-mean-square) but not negative.
    """
    x, weight = _as_tensor(x), _as_tensor(weight)
    if eps < 0.0:
        raise ValueError(f"rms_norm: eps must be >= 0, got {eps}")
    if weight.ndim != 1:
        raise ShapeError(f"rms_norm: weight must be 1-D, got {weight.shape}")
    if x.ndim not in (1, 2) or x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"rms_norm: input {x.shape} does not end in weight length {weight.shape}")
    d = x.shape[-1]
    ms = (x.data * x.data).mean(axis=-1, keepdims=True)
    r = 1.0 / np.sqrt(ms + eps)
    y = x.data * r * weight.data

    def bw(g):
        gw = g * weight.data
        _accumulate(x, gw * r - x.data * (r ** 3 / d) * (gw * x.data).sum(axis=-1, keepdims=True))
        gweight = g * x.data * r
        if gweight.ndim == 2:
            gweight = gweight.sum(axis=0)
        _accumulate(weight, gweight)
    return _result(y, "rms_norm", (x, weight), bw)


# ---------------------------------------------------------------------------
# backward driver
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(leaf) to every requires_grad tensor in the graph.

    The loss must be scalar. The recorded tape is traversed exactly once in
    reverse execution order and then freed; a second backward through the
    same graph is not possible.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.shape != ():
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)
            node._backward = None
            node._parents = ()


def global_grad_norm(tensors: Iterable[Tensor]) -> float:
    total = 0.0
    for t in tensors:
        if t.grad is not None:
            total += float((t.grad * t.grad).sum())
    return float(np.sqrt(total))
