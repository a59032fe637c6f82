"""Step rules (SGD, SAM, GAM), schedules and the training loop."""

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .autodiff import DEFAULT_XI, DifferentiableLoss, safe_unit
from .errors import DivergenceError
from .models import OracleLoss, OracleLossSpec

SCHEDULES = ("constant", "inv-sqrt", "cosine")


def schedule_value(kind: str, base: float, t: int, T: Optional[int] = None) -> float:
    """Value of a decaying schedule at step ``t`` (1-based)."""
    if t < 1:
        raise ValueError(f"schedules are defined for t >= 1, got {t}")
    if kind == "constant":
        return base
    if kind == "inv-sqrt":
        return base / math.sqrt(t)
    if kind == "cosine":
        if T is None or T < t:
            raise ValueError(f"cosine schedule needs T >= t (t={t}, T={T})")
        return base * 0.5 * (1.0 + math.cos(math.pi * t / T))
    raise ValueError(f"unknown schedule {kind!r}")


@dataclass
class OptimizerState:
    eta0: float = 0.1
    rho0: float = 0.1
    alpha: float = 0.1
    xi: float = DEFAULT_XI
    momentum: float = 0.0
    gam_apply_ratio: float = 1.0
    lr_schedule: str = "constant"
    rho_schedule: str = "constant"
    total_steps: Optional[int] = None
    t: int = 0
    momentum_buffer: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.eta0 > 0:
            raise ValueError("eta0 must be positive")
        if self.rho0 < 0 or self.alpha < 0 or self.xi < 0:
            raise ValueError("rho0, alpha and xi must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if not 0 <= self.gam_apply_ratio <= 1:
            raise ValueError("gam_apply_ratio must lie in [0, 1]")
        if self.lr_schedule not in SCHEDULES or self.rho_schedule not in ("constant", "inv-sqrt"):
            raise ValueError("unknown schedule")

    def lr(self, t=None):
        return schedule_value(self.lr_schedule, self.eta0, self.t if t is None else t, self.total_steps)

    def rho(self, t=None):
        if self.rho0 == 0:
            return 0.0
        return schedule_value(self.rho_schedule, self.rho0, self.t if t is None else t)

    def _apply(self, params, direction):
        """Momentum outermost: ``m <- mu m + d``; ``theta <- theta - eta_t m``."""
        if self.momentum_buffer is None:
            self.momentum_buffer = np.zeros_like(params)
        self.momentum_buffer = self.momentum * self.momentum_buffer + direction
        return params - self.lr() * self.momentum_buffer


@dataclass
class StepReport:
    loss_value: float
    grad_norm: float
    overall_grad_norm_sq: float
    applied_gam: bool
    details: dict = field(default_factory=dict, repr=False)


def _finite(vec, step, line, what):
    if not np.all(np.isfinite(vec)):
        raise DivergenceError(f"non-finite {what} at step {step} (update line {line})", step, line)


def sgd_step(state: OptimizerState, loss: DifferentiableLoss, params, batch=None):
    state.t += 1
    value, g = loss.value_and_grad(params, batch)
    if not np.isfinite(value):
        raise DivergenceError(f"loss is {value} at step {state.t}", state.t)
    _finite(g, state.t, 5, "gradient")
    new = state._apply(params, g)
    gn = float(np.linalg.norm(g))
    return new, StepReport(value, gn, gn * gn, False)


def sam_step(state: OptimizerState, loss: DifferentiableLoss, params, batch=None, weight_decay=0.0):
    """SAM: gradient at the linearized worst-case point ``theta + rho_t g/(||g|| + xi)``."""
    rho_t = state.rho(state.t + 1)
    oracle = OracleLoss(loss, OracleLossSpec(weight_decay=weight_decay, sam_rho=rho_t, xi=state.xi))
    return sgd_step(state, oracle, params, batch)


def gam_step(state: OptimizerState, oracle_loss, empirical_loss, params, batch=None):
    """One iteration of gradient-norm-aware minimization.

    The update is computed in numbered lines, which divergence errors cite:
    5 oracle gradient, 6 ascent direction ``f = H g / (||g|| + xi)``,
    7 adversarial point, 8 ``h_norm = rho_t H(adv) g_adv / (||g_adv|| + xi)``,
    9 parameter update with ``h_loss + alpha h_norm``.
    ``details`` in the returned report holds the intermediate vectors
    (``h_loss``, ``f``, ``theta_adv``, ``h_norm``).
    """
    state.t += 1
    t = state.t
    rho_t = state.rho()
    xi = state.xi

    value, g = empirical_loss.value_and_grad(params, batch)
    if not np.isfinite(value):
        raise DivergenceError(f"loss is {value} at step {t} (update line 5)", t, 5)
    _finite(g, t, 5, "empirical gradient")
    if _same_objective(oracle_loss, empirical_loss):
        h_loss = g
    else:
        value, h_loss = oracle_loss.value_and_grad(params, batch)
        _finite(h_loss, t, 5, "oracle gradient")

    unit_g = safe_unit(g, xi)
    f = empirical_loss.hvp(params, unit_g, batch) if np.any(unit_g) else np.zeros_like(g)
    _finite(f, t, 6, "f")

    theta_adv = params + rho_t * safe_unit(f, xi)
    _finite(theta_adv, t, 7, "theta_adv")

    g_adv = empirical_loss.grad(theta_adv, batch)
    _finite(g_adv, t, 8, "gradient at theta_adv")
    unit_adv = safe_unit(g_adv, xi)
    if np.any(unit_adv):
        h_norm = rho_t * empirical_loss.hvp(theta_adv, unit_adv, batch)
    else:
        h_norm = np.zeros_like(g)
    _finite(h_norm, t, 8, "h_norm")

    direction = h_loss + state.alpha * h_norm
    new = state._apply(params, direction)
    _finite(new, t, 9, "parameters")
    report = StepReport(
        value,
        float(np.linalg.norm(g)),
        float(direction @ direction),
        True,
        {"h_loss": h_loss, "f": f, "theta_adv": theta_adv, "h_norm": h_norm},
    )
    return new, report


def _same_objective(oracle, empirical):
    if oracle is empirical:
        return True
    return isinstance(oracle, OracleLoss) and oracle.is_identity and oracle.base is empirical


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class MetricsRow:
    epoch: int
    step: int
    train_loss: float
    train_acc: Optional[float]
    test_acc: Optional[float]
    mean_overall_grad_norm_sq: float
    wall_ms: float


@dataclass
class TrainResult:
    metrics: list
    params: np.ndarray
    diverged: bool = False
    divergence: Optional[str] = None
    step_reports: Optional[list] = None

    @property
    def best_test_acc(self):
        accs = [r.test_acc for r in self.metrics if r.test_acc is not None]
        return max(accs) if accs else None


def gam_iterations(iters_per_epoch: int, ratio: float) -> int:
    """Number of leading iterations per epoch that take a GAM step."""
    return min(iters_per_epoch, math.ceil(ratio * iters_per_epoch - 1e-12))


def train_run(config, problem=None, on_epoch_end: Optional[Callable] = None, record_steps=False) -> TrainResult:
    """Run ``config.epochs`` epochs of seeded minibatch training.

    ``problem`` is a :class:`gamopt.data.Problem`; when omitted it is built from
    ``config``. ``on_epoch_end(epoch, params)`` is called after every epoch.
    A non-finite loss stops the run; the partial metrics are returned with
    ``diverged`` set.
    """
    from .data import build_problem

    if problem is None:
        problem = build_problem(config)
    opt = config.optimizer
    iters = problem.iters_per_epoch(config.batch_size)
    state = OptimizerState(
        eta0=opt.lr,
        rho0=opt.rho,
        alpha=opt.alpha,
        xi=opt.xi,
        momentum=opt.momentum,
        gam_apply_ratio=opt.gam_apply_ratio,
        lr_schedule=opt.lr_schedule,
        rho_schedule=opt.rho_schedule,
        total_steps=config.epochs * iters,
    )
    use_sam = opt.kind in ("sam", "sam+gam")
    use_gam = opt.kind in ("gam", "sam+gam")
    n_gam = gam_iterations(iters, opt.gam_apply_ratio) if use_gam else 0
    empirical = problem.loss
    base_oracle = OracleLoss(empirical, OracleLossSpec(weight_decay=opt.weight_decay, xi=opt.xi))

    rng = np.random.default_rng(config.seed)
    params = problem.init.copy()
    metrics, steps = [], [] if record_steps else None
    result = TrainResult(metrics, params, step_reports=steps)
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        overall = []
        batches = problem.epoch_batches(rng, config.batch_size)
        try:
            for i, batch in enumerate(batches):
                oracle = base_oracle.with_rho(state.rho(state.t + 1)) if use_sam else base_oracle
                if i < n_gam:
                    params, rep = gam_step(state, oracle, empirical, params, batch)
                else:
                    params, rep = sgd_step(state, oracle, params, batch)
                overall.append(rep.overall_grad_norm_sq)
                if steps is not None:
                    steps.append(rep)
        except DivergenceError as exc:
            result.diverged = True
            result.divergence = str(exc)
            result.params = params
            return result
        train_loss, train_acc, test_acc = problem.evaluate(params)
        if not np.isfinite(train_loss):
            result.diverged = True
            result.divergence = f"train loss is {train_loss} after epoch {epoch}"
            result.params = params
            return result
        metrics.append(
            MetricsRow(
                epoch=epoch,
                step=state.t,
                train_loss=train_loss,
                train_acc=train_acc,
                test_acc=test_acc,
                mean_overall_grad_norm_sq=float(np.mean(overall)),
                wall_ms=(time.perf_counter() - start) * 1000.0,
            )
        )
        result.params = params
        if on_epoch_end is not None:
            on_epoch_end(epoch, params)
    return result
