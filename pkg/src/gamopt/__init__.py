"""Gradient-norm flatness regularization: autodiff core, optimizers and diagnostics."""

__version__ = "0.1.0"

from .autodiff import (  # noqa: E402
    DifferentiableLoss,
    ParamLayout,
    Segment,
    evaluate,
    grad_norm_ascent_direction,
    gradient,
    hvp,
    hvp_fd,
)
from .config import RunConfig, load_config  # noqa: E402
from .diagnostics import (  # noqa: E402
    BoundInputs,
    FlatnessReport,
    estimate_r0,
    estimate_r1,
    flatness_pair,
    generalization_bound,
    hutchinson_trace,
    landscape_slice,
    minima_census,
    power_iteration_topk,
)
from .models import (  # noqa: E402
    Batch,
    MlpSpec,
    OracleLoss,
    OracleLossSpec,
    QuadraticSpec,
    make_oracle,
    mlp_loss,
    quadratic_loss,
)
from .optimizers import OptimizerState, gam_step, sam_step, sgd_step, train_run  # noqa: E402
