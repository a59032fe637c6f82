"""Test objectives: analytic quadratics, small MLPs, and oracle-loss composition."""

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DEFAULT_XI, DifferentiableLoss, ParamLayout, Segment, safe_unit
from .errors import DimensionError


@dataclass
class Batch:
    inputs: np.ndarray
    targets: np.ndarray
    indices: Optional[np.ndarray] = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise DimensionError(f"batch inputs must be a non-empty matrix, got {self.inputs.shape}")
        if not np.all(np.isfinite(self.inputs)):
            raise DimensionError("batch inputs contain non-finite values")
        if len(self.targets) != self.inputs.shape[0]:
            raise DimensionError("inputs and targets have different lengths")
        if self.indices is None:
            self.indices = np.arange(self.inputs.shape[0])

    def __len__(self):
        return self.inputs.shape[0]


# ---------------------------------------------------------------------------
# quadratics and other analytic objectives
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadraticSpec:
    """``L(theta) = 1/2 sum_i diag_i (theta_i - center_i)^2`` with ``diag`` sorted descending."""

    diag: tuple
    center: Optional[tuple] = None

    def __post_init__(self):
        diag = tuple(float(a) for a in self.diag)
        if not diag:
            raise ValueError("diag must be non-empty")
        if any(a <= 0 for a in diag):
            raise ValueError("quadratic eigenvalues must be strictly positive")
        if any(diag[i] < diag[i + 1] for i in range(len(diag) - 1)):
            raise ValueError("quadratic eigenvalues must be sorted descending")
        object.__setattr__(self, "diag", diag)
        center = (0.0,) * len(diag) if self.center is None else tuple(float(c) for c in self.center)
        if len(center) != len(diag):
            raise DimensionError("center and diag have different dimensions")
        object.__setattr__(self, "center", center)

    @property
    def dim(self):
        return len(self.diag)

    @property
    def lambda_max(self):
        return self.diag[0]


def quadratic_loss(spec: QuadraticSpec) -> DifferentiableLoss:
    a = np.array(spec.diag)
    c = np.array(spec.center)

    def build(p, batch):
        u = p["theta"] - c
        return (a * u * u).sum() * 0.5

    loss = DifferentiableLoss(ParamLayout.flat(spec.dim), build, name="quadratic")
    loss.spec = spec
    return loss


def dense_quadratic_loss(hessian, center=None) -> DifferentiableLoss:
    """``1/2 (theta - c)^T H (theta - c)`` for a symmetric matrix ``H``."""
    h = np.asarray(hessian, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise DimensionError("hessian must be square")
    if not np.allclose(h, h.T, rtol=0, atol=1e-12 * max(1.0, np.abs(h).max())):
        raise ValueError("hessian must be symmetric")
    d = h.shape[0]
    c = np.zeros(d) if center is None else np.asarray(center, dtype=np.float64)

    def build(p, batch):
        u = p["theta"] - c
        return (u * ad.matmul(h, u)).sum() * 0.5

    return DifferentiableLoss(ParamLayout.flat(d), build, name="dense-quadratic")


def linear_loss(a) -> DifferentiableLoss:
    a = np.asarray(a, dtype=np.float64)

    def build(p, batch):
        return (p["theta"] * a).sum()

    return DifferentiableLoss(ParamLayout.flat(a.size), build, name="linear")


def constant_loss(value: float, dim: int) -> DifferentiableLoss:
    def build(p, batch):
        return (p["theta"] * 0.0).sum() + value

    return DifferentiableLoss(ParamLayout.flat(dim), build, name="constant")


def cosine_loss(frequency: float, dim: int = 1) -> DifferentiableLoss:
    """``-cos(2 pi f theta_0)``; other coordinates are ignored."""

    def build(p, batch):
        return -ad.cos(p["theta"][0:1] * (2.0 * np.pi * frequency)).sum()

    return DifferentiableLoss(ParamLayout.flat(dim), build, name="cosine")


# ---------------------------------------------------------------------------
# MLP
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MlpSpec:
    layer_widths: tuple
    activation: str = "tanh"
    init_seed: int = 0
    init_scale: float = 1.0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 3:
            raise ValueError("an MLP needs at least one hidden layer")
        if any(w <= 0 for w in widths):
            raise ValueError("layer widths must be positive")
        if self.activation not in ("tanh", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if not self.init_scale > 0:
            raise ValueError("init_scale must be positive")

    @property
    def num_params(self):
        w = self.layer_widths
        return sum(w[i] * w[i + 1] + w[i + 1] for i in range(len(w) - 1))


def mlp_layout(spec: MlpSpec) -> ParamLayout:
    w = spec.layer_widths
    segs = []
    for i in range(len(w) - 1):
        segs.append(Segment(f"W{i}", (w[i], w[i + 1]), "weight"))
        segs.append(Segment(f"b{i}", (w[i + 1],), "bias"))
    return ParamLayout(segs)


def init_params(spec: MlpSpec) -> np.ndarray:
    """Seeded uniform(-s, s) weights with ``s = init_scale / sqrt(fan_in)``; zero biases."""
    layout = mlp_layout(spec)
    rng = np.random.default_rng(spec.init_seed)
    theta = np.zeros(layout.dim)
    for seg in layout.segments:
        if seg.kind == "weight":
            s = spec.init_scale / np.sqrt(seg.shape[0])
            theta[layout.slices[seg.name]] = rng.uniform(-s, s, seg.size)
    return theta


def _mlp_forward_tape(spec, p, x):
    act = ad.tanh if spec.activation == "tanh" else ad.relu
    n = len(spec.layer_widths) - 1
    h = x
    for i in range(n):
        h = ad.matmul(h, p[f"W{i}"]) + p[f"b{i}"]
        if i < n - 1:
            h = act(h)
    return h


def mlp_predict(spec: MlpSpec, theta, inputs) -> np.ndarray:
    """Plain numpy forward pass (no tape); returns the output layer."""
    parts = mlp_layout(spec).split(np.asarray(theta, dtype=np.float64))
    n = len(spec.layer_widths) - 1
    h = np.asarray(inputs, dtype=np.float64)
    for i in range(n):
        h = h @ parts[f"W{i}"] + parts[f"b{i}"]
        if i < n - 1:
            h = np.tanh(h) if spec.activation == "tanh" else np.maximum(h, 0.0)
    return h


def mlp_loss(spec: MlpSpec, task: str = "softmax-cross-entropy") -> DifferentiableLoss:
    if task not in ("softmax-cross-entropy", "mse"):
        raise ValueError(f"unknown task {task!r}")
    in_dim, out_dim = spec.layer_widths[0], spec.layer_widths[-1]

    def build(p, batch):
        if batch.inputs.shape[1] != in_dim:
            raise DimensionError(f"batch has {batch.inputs.shape[1]} features, model expects {in_dim}")
        out = _mlp_forward_tape(spec, p, batch.inputs)
        if task == "mse":
            targets = np.asarray(batch.targets, dtype=np.float64).reshape(len(batch), -1)
            if targets.shape[1] != out_dim:
                raise DimensionError("target width does not match model output")
            return ad.mean_squared_error(out, targets)
        return ad.softmax_cross_entropy(out, batch.targets)

    loss = DifferentiableLoss(mlp_layout(spec), build, name=f"mlp-{task}")
    loss.spec = spec
    loss.task = task
    return loss


def accuracy(logits, labels) -> float:
    """Fraction of rows whose argmax matches the label; ties go to the lowest index."""
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))


# ---------------------------------------------------------------------------
# oracle composition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleLossSpec:
    weight_decay: float = 0.0
    sam_rho: Optional[float] = None
    xi: float = DEFAULT_XI

    def __post_init__(self):
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.sam_rho is not None and self.sam_rho < 0:
            raise ValueError("sam_rho must be non-negative when given")


class OracleLoss(DifferentiableLoss):
    """Empirical loss plus optional weight decay and a one-step SAM term.

    The SAM term's gradient is the base gradient at the linearized
    worst-case point ``theta + rho g / (||g|| + xi)``; its Hessian-vector
    product treats that perturbation as constant.
    """

    def __init__(self, base: DifferentiableLoss, spec: OracleLossSpec):
        super().__init__(base.layout, None, name=f"oracle({base.name})")
        self.base = base
        self.spec = spec
        self._decay_mask = base.layout.mask("weight") * spec.weight_decay

    @property
    def is_identity(self):
        return self.spec.weight_decay == 0 and self.spec.sam_rho is None

    def with_rho(self, rho):
        return OracleLoss(self.base, replace(self.spec, sam_rho=rho))

    def _compute(self, theta, batch, direction=None, need_grad=True):
        if self.is_identity:
            return self.base._compute(theta, batch, direction, need_grad)
        at = theta
        if self.spec.sam_rho is not None:
            g0 = self.base.grad(theta, batch)
            at = theta + self.spec.sam_rho * safe_unit(g0, self.spec.xi)
        value, g, hv = self.base._compute(at, batch, direction, need_grad)
        wd = self.spec.weight_decay
        if wd:
            value += 0.5 * float(np.sum(self._decay_mask * theta * theta))
            if g is not None:
                g = g + self._decay_mask * theta
            if hv is not None:
                hv = hv + self._decay_mask * direction
        return value, g, hv


def make_oracle(base: DifferentiableLoss, spec: OracleLossSpec = OracleLossSpec()) -> OracleLoss:
    return OracleLoss(base, spec)
