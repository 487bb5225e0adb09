"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything is 64-bit and CPU-only; the networks in this project are small
enough that precision is cheap and finite-difference gradient checks can be
held to tight tolerances. Graph construction is single-threaded: an operation
records its parents and a closure that routes the incoming gradient to them,
and ``backward`` replays those closures in reverse topological order.

Gradients accumulate: calling ``backward`` twice without ``zero_grad`` doubles
them. This is deliberate (it is what makes shared subexpressions work) and is
relied on by the optimizers, which always zero before a step.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError, NumericError


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A dense array plus an optional position in a differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple = ()
        self._backward_fn = None

    # -- graph construction ------------------------------------------------

    @staticmethod
    def _op(data: np.ndarray, parents, backward_fn) -> "Tensor":
        """Build a graph node; collapses to a constant if no parent needs grad."""
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward_fn = backward_fn
        return out

    def _accum(self, g) -> None:
        if not self.requires_grad:
            return
        g = _unbroadcast(np.asarray(g, dtype=np.float64), self.data.shape)
        g = np.broadcast_to(g, self.data.shape)
        if self.grad is None:
            self.grad = np.array(g)
        else:
            self.grad = self.grad + g

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- basic properties --------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        def bw(g):
            self._accum(g.T)

        return Tensor._op(self.data.T, (self,), bw)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic --------------------------------------------------------

    @staticmethod
    def _wrap(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    def __add__(self, other):
        other = Tensor._wrap(other)

        def bw(g):
            self._accum(g)
            other._accum(g)

        return Tensor._op(self.data + other.data, (self, other), bw)

    __radd__ = __add__

    def __neg__(self):
        def bw(g):
            self._accum(-g)

        return Tensor._op(-self.data, (self,), bw)

    def __sub__(self, other):
        return self + (-Tensor._wrap(other))

    def __rsub__(self, other):
        return Tensor._wrap(other) + (-self)

    def __mul__(self, other):
        other = Tensor._wrap(other)

        def bw(g):
            self._accum(g * other.data)
            other._accum(g * self.data)

        return Tensor._op(self.data * other.data, (self, other), bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._wrap(other)

        def bw(g):
            self._accum(g / other.data)
            other._accum(-g * self.data / (other.data ** 2))

        return Tensor._op(self.data / other.data, (self, other), bw)

    def __rtruediv__(self, other):
        return Tensor._wrap(other) / self

    def __pow__(self, exponent: float):
        if isinstance(exponent, Tensor):
            raise ContractError("only constant exponents are supported")

        def bw(g):
            self._accum(g * exponent * self.data ** (exponent - 1))

        return Tensor._op(self.data ** exponent, (self,), bw)

    def exp(self):
        out_data = np.exp(self.data)

        def bw(g):
            self._accum(g * out_data)

        return Tensor._op(out_data, (self,), bw)

    def log(self):
        def bw(g):
            self._accum(g / self.data)

        return Tensor._op(np.log(self.data), (self,), bw)

    def sqrt(self):
        out_data = np.sqrt(self.data)

        def bw(g):
            self._accum(g * 0.5 / out_data)

        return Tensor._op(out_data, (self,), bw)

    def relu(self):
        # Subgradient is 0 exactly at the kink; gradient checks stay away
        # from it.
        mask = self.data > 0.0

        def bw(g):
            self._accum(g * mask)

        return Tensor._op(np.where(mask, self.data, 0.0), (self,), bw)

    def matmul(self, other: "Tensor") -> "Tensor":
        other = Tensor._wrap(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise DimensionError(
                f"matmul expects 2-D operands, got {self.data.shape} and {other.data.shape}"
            )
        if self.data.shape[1] != other.data.shape[0]:
            raise DimensionError(
                f"matmul inner extents differ: {self.data.shape} vs {other.data.shape}"
            )

        def bw(g):
            self._accum(g @ other.data.T)
            other._accum(self.data.T @ g)

        return Tensor._op(self.data @ other.data, (self, other), bw)

    def __matmul__(self, other):
        return self.matmul(other)

    # -- reductions --------------------------------------------------------

    def sum(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accum(np.broadcast_to(g, self.data.shape))

        return Tensor._op(out_data, (self,), bw)

    def mean(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / float(count)


def concat_cols(tensors: list[Tensor]) -> Tensor:
    """Concatenate 2-D tensors along axis 1."""
    widths = [t.data.shape[1] for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=1)

    def bw(g):
        start = 0
        for t, w in zip(tensors, widths):
            t._accum(g[:, start : start + w])
            start += w

    return Tensor._op(out_data, tuple(tensors), bw)


def softmax(logits: Tensor, axis: int = -1) -> Tensor:
    """Row-wise softmax with max-subtraction for overflow safety."""
    if not np.all(np.isfinite(logits.data)):
        raise NumericError("softmax received non-finite logits")
    shift = logits - Tensor(logits.data.max(axis=axis, keepdims=True))
    e = shift.exp()
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits: Tensor, axis: int = -1) -> Tensor:
    if not np.all(np.isfinite(logits.data)):
        raise NumericError("log_softmax received non-finite logits")
    shift = logits - Tensor(logits.data.max(axis=axis, keepdims=True))
    return shift - shift.exp().sum(axis=axis, keepdims=True).log()


def entropy_rows(p: Tensor) -> Tensor:
    """Shannon entropy of each row in nats, with 0*log(0) taken as 0."""
    pd = p.data
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = np.where(pd > 0.0, np.log(np.where(pd > 0.0, pd, 1.0)), 0.0)
    out_data = -(pd * logp).sum(axis=-1)

    def bw(g):
        # dH/dp = -(log p + 1); zero where p == 0 (boundary of the simplex).
        d = np.where(pd > 0.0, -(logp + 1.0), 0.0)
        p._accum(np.expand_dims(g, -1) * d)

    return Tensor._op(out_data, (p,), bw)


def backward(loss: Tensor) -> None:
    """Populate gradients of every reachable ``requires_grad`` tensor.

    Accumulates into existing gradients; zero first if you want fresh ones.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return

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
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))

    loss._accum(np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)
    # Intermediate grads are not needed once routed; free them so leaves are
    # the only tensors holding state between steps.
    for node in topo:
        if node._backward_fn is not None:
            node.grad = None


def check_gradients(f, params: list[Tensor], step: float = 1e-5) -> float:
    """Compare analytic gradients of ``f()`` against central differences.

    Returns the worst relative error over every element of every parameter,
    with a 1e-8 guard in the denominator. ``f`` must be deterministic.
    """
    for p in params:
        p.zero_grad()
    loss = f()
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(f().data)
            flat[i] = orig - step
            lo = float(f().data)
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * step)
            ref = a.reshape(-1)[i]
            err = abs(ref - numeric) / max(abs(ref), abs(numeric), 1e-8)
            worst = max(worst, err)
    for p in params:
        p.zero_grad()
    return worst


def zero_grads(params) -> None:
    for p in params:
        p.zero_grad()
