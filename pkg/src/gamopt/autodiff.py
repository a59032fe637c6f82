"""Reverse-mode differentiation over dual numbers.

Every node on the tape holds a :class:`Dual` (primal array plus an optional
forward-mode tangent). Backward rules are written in dual arithmetic, so a
reverse sweep started from a leaf carrying tangent ``v`` yields the gradient in
``.val`` and the Hessian-vector product ``H @ v`` in ``.tan``. That is the
forward-over-reverse composition; the Hessian is never formed.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import _accel
from .errors import DimensionError, NonFiniteError

DEFAULT_XI = 1e-12


# ---------------------------------------------------------------------------
# dual numbers
# ---------------------------------------------------------------------------


def _tadd(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


class Dual:
    """Array with an optional first-order tangent. ``tan is None`` means zero."""

    __slots__ = ("val", "tan")
    __array_ufunc__ = None  # make ndarray <op> Dual dispatch to our reflected ops

    def __init__(self, val, tan=None):
        self.val = val
        self.tan = tan

    @staticmethod
    def lift(x):
        return x if isinstance(x, Dual) else Dual(np.asarray(x, dtype=np.float64))

    @property
    def shape(self):
        return np.shape(self.val)

    def __add__(self, other):
        other = Dual.lift(other)
        return Dual(self.val + other.val, _tadd(self.tan, other.tan))

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.val, None if self.tan is None else -self.tan)

    def __sub__(self, other):
        other = Dual.lift(other)
        tan = self.tan
        if other.tan is not None:
            tan = -other.tan if tan is None else tan - other.tan
        return Dual(self.val - other.val, tan)

    def __rsub__(self, other):
        return Dual.lift(other) - self

    def __mul__(self, other):
        other = Dual.lift(other)
        tan = None
        if self.tan is not None:
            tan = self.tan * other.val
        if other.tan is not None:
            tan = _tadd(tan, self.val * other.tan)
        return Dual(self.val * other.val, tan)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Dual.lift(other)
        q = self.val / other.val
        tan = None
        if self.tan is not None:
            tan = self.tan / other.val
        if other.tan is not None:
            tan = _tadd(tan, -q * other.tan / other.val)
        return Dual(q, tan)

    def __matmul__(self, other):
        other = Dual.lift(other)
        tan = None
        if self.tan is not None:
            tan = self.tan @ other.val
        if other.tan is not None:
            tan = _tadd(tan, self.val @ other.tan)
        return Dual(self.val @ other.val, tan)

    def __rmatmul__(self, other):
        return Dual.lift(other) @ self

    @property
    def T(self):
        return Dual(self.val.T, None if self.tan is None else self.tan.T)

    def sum(self, axis=None, keepdims=False):
        tan = None if self.tan is None else np.sum(self.tan, axis=axis, keepdims=keepdims)
        return Dual(np.sum(self.val, axis=axis, keepdims=keepdims), tan)

    def reshape(self, shape):
        tan = None if self.tan is None else np.reshape(self.tan, shape)
        return Dual(np.reshape(self.val, shape), tan)

    def broadcast_to(self, shape):
        tan = None if self.tan is None else np.broadcast_to(self.tan, shape)
        return Dual(np.broadcast_to(self.val, shape), tan)

    def where(self, mask):
        tan = None if self.tan is None else self.tan * mask
        return Dual(self.val * mask, tan)


def dual_sin(x: Dual) -> Dual:
    return Dual(np.sin(x.val), None if x.tan is None else np.cos(x.val) * x.tan)


def dual_cos(x: Dual) -> Dual:
    return Dual(np.cos(x.val), None if x.tan is None else -np.sin(x.val) * x.tan)


def dual_exp(x: Dual) -> Dual:
    e = np.exp(x.val)
    return Dual(e, None if x.tan is None else e * x.tan)


def dual_log(x: Dual) -> Dual:
    return Dual(np.log(x.val), None if x.tan is None else x.tan / x.val)


def _unbroadcast(g: Dual, shape) -> Dual:
    """Sum an adjoint down to ``shape`` after numpy broadcasting."""
    if g.shape == tuple(shape):
        return g
    extra = len(g.shape) - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------


class Var:
    """Node of the reverse-mode tape."""

    __slots__ = ("value", "parents", "requires_grad")
    __array_ufunc__ = None

    def __init__(self, value: Dual, parents=(), requires_grad=False):
        self.value = value
        self.parents = parents
        self.requires_grad = requires_grad or bool(parents)

    @property
    def shape(self):
        return self.value.shape

    @property
    def val(self):
        return self.value.val

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_var(other)))

    def __rsub__(self, other):
        return add(_as_var(other), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(_as_var(other), self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self):
        return total(self)

    def mean(self):
        return total(self) * (1.0 / np.size(self.value.val))


def _as_var(x) -> Var:
    if isinstance(x, Var):
        return x
    return Var(Dual(np.asarray(x, dtype=np.float64)))


def _node(value: Dual, *pairs) -> Var:
    parents = tuple((p, f) for p, f in pairs if p.requires_grad)
    return Var(value, parents)


def add(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    sa, sb = a.shape, b.shape
    return _node(
        a.value + b.value,
        (a, lambda g: _unbroadcast(g, sa)),
        (b, lambda g: _unbroadcast(g, sb)),
    )


def neg(a: Var) -> Var:
    return _node(-a.value, (a, lambda g: -g))


def mul(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    av, bv = a.value, b.value
    sa, sb = a.shape, b.shape
    return _node(
        av * bv,
        (a, lambda g: _unbroadcast(g * bv, sa)),
        (b, lambda g: _unbroadcast(g * av, sb)),
    )


def matmul(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    av, bv = a.value, b.value
    return _node(av @ bv, (a, lambda g: g @ bv.T), (b, lambda g: av.T @ g))


def total(a: Var) -> Var:
    shape = a.shape
    return _node(a.value.sum(), (a, lambda g: g.broadcast_to(shape)))


def getitem(a: Var, idx) -> Var:
    shape = a.shape

    def vjp(g):
        val = np.zeros(shape)
        np.add.at(val, idx, g.val)
        tan = None
        if g.tan is not None:
            tan = np.zeros(shape)
            np.add.at(tan, idx, g.tan)
        return Dual(val, tan)

    x = a.value
    return _node(
        Dual(x.val[idx], None if x.tan is None else x.tan[idx]), (a, vjp)
    )


def reshape(a: Var, shape) -> Var:
    old = a.shape
    return _node(a.value.reshape(shape), (a, lambda g: g.reshape(old)))


def tanh(a: Var) -> Var:
    x = a.value
    y, yt = _accel.tanh_fwd(x.val, x.tan)
    out = Dual(y, yt)

    def vjp(g):
        gx, gxt = _accel.tanh_bwd(y, yt, g.val, g.tan)
        return Dual(gx, gxt)

    return _node(out, (a, vjp))


def relu(a: Var) -> Var:
    # Piecewise linear: the HVP through relu ignores the kink.
    mask = (a.value.val > 0).astype(np.float64)
    return _node(a.value.where(mask), (a, lambda g: g.where(mask)))


def cos(a: Var) -> Var:
    x = a.value
    return _node(dual_cos(x), (a, lambda g: g * -dual_sin(x)))


def sin(a: Var) -> Var:
    x = a.value
    return _node(dual_sin(x), (a, lambda g: g * dual_cos(x)))


def exp(a: Var) -> Var:
    y = dual_exp(a.value)
    return _node(y, (a, lambda g: g * y))


def softmax_cross_entropy(logits: Var, labels) -> Var:
    """Mean cross-entropy of integer ``labels`` under ``softmax(logits)``."""
    labels = np.asarray(labels, dtype=np.int64)
    z = logits.value
    k = z.shape[1]
    if labels.shape != (z.shape[0],):
        raise DimensionError(f"labels shape {labels.shape} does not match logits {z.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise DimensionError(f"label out of range [0, {k})")
    loss, p, loss_t = _accel.xent_fwd(z.val, labels, z.tan)

    def vjp(g):
        gz, gzt = _accel.xent_bwd(p, z.tan, labels, g.val, g.tan)
        return Dual(gz, gzt)

    return _node(Dual(np.float64(loss), loss_t), (logits, vjp))


def mean_squared_error(pred: Var, target) -> Var:
    r = pred - np.asarray(target, dtype=np.float64)
    return (r * r).mean()


def backward(root: Var, leaves: Sequence[Var]) -> list:
    """Adjoints (as :class:`Dual`) of ``root`` w.r.t. each leaf; ``None`` if unused."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    adj = {id(root): Dual(np.float64(1.0))}
    for node in reversed(order):
        g = adj.pop(id(node), None)
        if g is None:
            continue
        if not node.parents:
            adj[id(node)] = g
            continue
        for parent, vjp in node.parents:
            contrib = vjp(g)
            key = id(parent)
            prev = adj.get(key)
            adj[key] = contrib if prev is None else prev + contrib
    return [adj.get(id(leaf)) for leaf in leaves]


# ---------------------------------------------------------------------------
# parameter layout and losses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Segment:
    name: str
    shape: tuple
    kind: str = "weight"  # "weight" or "bias"

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))


class ParamLayout:
    """Named segments of a flat parameter vector, in order."""

    def __init__(self, segments: Sequence[Segment]):
        self.segments = tuple(segments)
        offsets = np.cumsum([0] + [s.size for s in self.segments])
        self.slices = {
            s.name: slice(int(offsets[i]), int(offsets[i + 1]))
            for i, s in enumerate(self.segments)
        }
        if len(self.slices) != len(self.segments):
            raise ValueError("segment names must be unique")
        self.dim = int(offsets[-1])

    @classmethod
    def flat(cls, dim: int, name: str = "theta", kind: str = "weight"):
        return cls([Segment(name, (dim,), kind)])

    def split(self, vec):
        return {s.name: vec[self.slices[s.name]].reshape(s.shape) for s in self.segments}

    def mask(self, kind: str) -> np.ndarray:
        m = np.zeros(self.dim)
        for s in self.segments:
            if s.kind == kind:
                m[self.slices[s.name]] = 1.0
        return m

    def to_json(self):
        return [
            {"name": s.name, "shape": list(s.shape), "kind": s.kind,
             "offset": self.slices[s.name].start}
            for s in self.segments
        ]

    @classmethod
    def from_json(cls, items):
        return cls([Segment(it["name"], tuple(it["shape"]), it.get("kind", "weight")) for it in items])

    def __eq__(self, other):
        return isinstance(other, ParamLayout) and self.segments == other.segments

    def __hash__(self):
        return hash(self.segments)

    def __repr__(self):
        return f"ParamLayout(dim={self.dim}, segments={[s.name for s in self.segments]})"


def check_vector(vec, dim: int, what: str = "point") -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    if vec.ndim != 1 or vec.shape[0] != dim:
        raise DimensionError(f"{what} has shape {vec.shape}, expected ({dim},)")
    if not np.all(np.isfinite(vec)):
        raise NonFiniteError(f"{what} has non-finite entries")
    return vec


class DifferentiableLoss:
    """Scalar objective over a flat parameter vector and a data batch.

    ``build(params, batch)`` receives a dict of segment name -> :class:`Var`
    and returns a scalar :class:`Var`. Subclasses may instead override
    :meth:`_compute` directly (oracle compositions do).
    """

    def __init__(self, layout: ParamLayout, build: Optional[Callable] = None, name: str = "loss"):
        self.layout = layout
        self._build = build
        self.name = name

    @property
    def dim(self) -> int:
        return self.layout.dim

    def _compute(self, theta, batch, direction=None, need_grad=True):
        """Return ``(value, grad or None, hvp or None)``."""
        parts = self.layout.split(theta)
        tparts = self.layout.split(direction) if direction is not None else None
        leaves = {}
        for seg in self.layout.segments:
            tan = tparts[seg.name] if tparts is not None else None
            leaves[seg.name] = Var(Dual(parts[seg.name], tan), requires_grad=True)
        out = self._build(leaves, batch)
        value = float(out.value.val)
        if not need_grad:
            return value, None, None
        adjs = backward(out, [leaves[s.name] for s in self.layout.segments])
        grad = np.zeros(self.dim)
        hv = np.zeros(self.dim) if direction is not None else None
        for seg, a in zip(self.layout.segments, adjs):
            if a is None:
                continue
            sl = self.layout.slices[seg.name]
            grad[sl] = np.ravel(np.broadcast_to(a.val, seg.shape))
            if hv is not None and a.tan is not None:
                hv[sl] = np.ravel(np.broadcast_to(a.tan, seg.shape))
        return value, grad, hv

    def value(self, theta, batch=None) -> float:
        return self._compute(theta, batch, need_grad=False)[0]

    def value_and_grad(self, theta, batch=None):
        v, g, _ = self._compute(theta, batch)
        return v, g

    def grad(self, theta, batch=None) -> np.ndarray:
        return self._compute(theta, batch)[1]

    def grad_and_hvp(self, theta, direction, batch=None):
        _, g, hv = self._compute(theta, batch, direction=direction)
        return g, hv

    def hvp(self, theta, direction, batch=None) -> np.ndarray:
        return self._compute(theta, batch, direction=direction)[2]


# ---------------------------------------------------------------------------
# public query surface
# ---------------------------------------------------------------------------


def _check_batch(batch):
    if batch is not None and hasattr(batch, "__len__") and len(batch) == 0:
        raise DimensionError("batch is empty")


def evaluate(loss: DifferentiableLoss, point, batch=None) -> float:
    point = check_vector(point, loss.dim)
    _check_batch(batch)
    value = loss.value(point, batch)
    if not np.isfinite(value):
        raise NonFiniteError(f"loss evaluated to {value}; numeric overflow in the model")
    return value


def gradient(loss: DifferentiableLoss, point, batch=None) -> np.ndarray:
    point = check_vector(point, loss.dim)
    _check_batch(batch)
    g = loss.grad(point, batch)
    if not np.all(np.isfinite(g)):
        raise NonFiniteError("gradient has non-finite entries")
    return g


def hvp(loss: DifferentiableLoss, point, direction, batch=None) -> np.ndarray:
    point = check_vector(point, loss.dim)
    direction = check_vector(direction, loss.dim, "direction")
    _check_batch(batch)
    hv = loss.hvp(point, direction, batch)
    if not np.all(np.isfinite(hv)):
        raise NonFiniteError("Hessian-vector product has non-finite entries")
    return hv


def hvp_fd(loss: DifferentiableLoss, point, direction, batch=None, eps: float = 1e-5) -> np.ndarray:
    """Central-difference Hessian-vector product, used as an independent check."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    point = check_vector(point, loss.dim)
    direction = check_vector(direction, loss.dim, "direction")
    g_plus = loss.grad(point + eps * direction, batch)
    g_minus = loss.grad(point - eps * direction, batch)
    return (g_plus - g_minus) / (2.0 * eps)


def safe_unit(vec, xi: float) -> np.ndarray:
    """``vec / (||vec|| + xi)``, or zeros when the denominator vanishes."""
    denom = np.linalg.norm(vec) + xi
    if denom == 0.0:
        return np.zeros_like(vec)
    return vec / denom


def grad_norm_ascent_direction(loss: DifferentiableLoss, point, batch=None, xi: float = DEFAULT_XI):
    """Gradient of ``||grad L||`` at ``point``, regularized: ``H g / (||g|| + xi)``.

    At an exact stationary point this is the zero vector; callers must cope
    with a zero ascent direction.
    """
    return ascent_direction_and_grad(loss, point, batch, xi)[0]


def ascent_direction_and_grad(loss, point, batch=None, xi=DEFAULT_XI):
    """Like :func:`grad_norm_ascent_direction` but also returns the gradient."""
    if xi < 0:
        raise ValueError("xi must be non-negative")
    g = gradient(loss, point, batch)
    direction = safe_unit(g, xi)
    if not np.any(direction):
        return np.zeros_like(g), g
    return hvp(loss, point, direction, batch), g
