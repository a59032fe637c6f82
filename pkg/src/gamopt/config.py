"""Declarative run configuration (JSON) with validation and canonical form."""

import json
import os
from pathlib import Path
from typing import Annotated, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError

# Grid used by the hyperparameter sweep when none is given.
RHO_GRID = (0.05, 0.1, 0.2, 0.5, 1.0, 2.0)
ALPHA_GRID = (0.1, 0.2, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0)


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


class CsvData(_Strict):
    kind: Literal["csv"]
    path: str
    label_col: Union[int, str] = -1
    header: Optional[bool] = None  # None: detect from the first row
    test_fraction: float = Field(0.2, ge=0.0, lt=1.0)


class IdxData(_Strict):
    kind: Literal["idx"]
    images_path: str
    labels_path: str
    subset_n: Optional[int] = Field(None, ge=1)
    test_fraction: float = Field(0.2, ge=0.0, lt=1.0)


class TwoMoonsData(_Strict):
    kind: Literal["two_moons"]
    n: int = Field(1000, ge=2)
    noise: float = Field(0.1, ge=0.0)
    test_n: int = Field(500, ge=0)


class BlobsData(_Strict):
    kind: Literal["gaussian_blobs"]
    n: int = Field(1000, ge=2)
    k: int = Field(3, ge=2)
    dim: int = Field(2, ge=1)
    spread: float = Field(1.0, gt=0.0)
    test_n: int = Field(500, ge=0)


class QuadraticData(_Strict):
    kind: Literal["quadratic"]
    diag: Optional[List[float]] = None
    dim: Optional[int] = Field(None, ge=1)
    center: Optional[List[float]] = None
    init: Optional[List[float]] = None
    steps_per_epoch: int = Field(100, ge=1)

    @model_validator(mode="after")
    def _resolve(self):
        if self.diag is None and self.dim is None:
            raise ValueError("quadratic needs diag or dim")
        if self.diag is None:
            # evenly spaced spectrum from 10 down to 1
            d = self.dim
            self.diag = [10.0 - 9.0 * i / max(d - 1, 1) for i in range(d)]
        if self.dim is None:
            self.dim = len(self.diag)
        if len(self.diag) != self.dim:
            raise ValueError(f"diag has {len(self.diag)} entries but dim is {self.dim}")
        if any(a <= 0 for a in self.diag):
            raise ValueError("diag entries must be strictly positive")
        if any(self.diag[i] < self.diag[i + 1] for i in range(self.dim - 1)):
            raise ValueError("diag must be sorted descending")
        if self.center is None:
            self.center = [0.0] * self.dim
        if self.init is None:
            self.init = [1.0] * self.dim
        for name in ("center", "init"):
            if len(getattr(self, name)) != self.dim:
                raise ValueError(f"{name} must have {self.dim} entries")
        return self


DatasetConfig = Annotated[
    Union[CsvData, IdxData, TwoMoonsData, BlobsData, QuadraticData], Field(discriminator="kind")
]


# ---------------------------------------------------------------------------
# model / optimizer / diagnostics
# ---------------------------------------------------------------------------


class ModelConfig(_Strict):
    kind: Literal["mlp", "quadratic"] = "mlp"
    hidden: List[Annotated[int, Field(ge=1)]] = [32, 32]
    activation: Literal["tanh", "relu"] = "tanh"
    init_scale: float = Field(1.0, gt=0.0)
    init_seed: Optional[int] = None  # None: use the run seed
    task: Literal["softmax-cross-entropy", "mse"] = "softmax-cross-entropy"

    @field_validator("hidden")
    @classmethod
    def _non_empty(cls, v):
        if not v:
            raise ValueError("at least one hidden layer is required")
        return v


class OptimizerConfig(_Strict):
    kind: Literal["sgd", "sam", "gam", "sam+gam"] = "gam"
    lr: float = Field(0.1, gt=0.0)
    rho: float = Field(0.1, ge=0.0)
    alpha: float = Field(0.1, ge=0.0)
    xi: float = Field(1e-12, ge=0.0)
    momentum: float = Field(0.9, ge=0.0, lt=1.0)
    weight_decay: float = Field(1e-4, ge=0.0)
    gam_apply_ratio: float = Field(1.0, ge=0.0, le=1.0)
    lr_schedule: Literal["constant", "inv-sqrt", "cosine"] = "cosine"
    rho_schedule: Literal["constant", "inv-sqrt"] = "constant"


class ProbeConfig(_Strict):
    """Random-direction probing: census rays and flatness maximization."""

    num_directions: int = Field(100, ge=1)
    step_norm: float = Field(0.01, gt=0.0)
    num_steps: int = Field(10, ge=1)
    seed: int = 0
    ascent_steps: int = Field(50, ge=0)
    ascent_lr: float = Field(0.1, gt=0.0)  # fraction of rho per ascent step
    ball_samples: int = Field(64, ge=0)

    @property
    def radius(self) -> float:
        return self.step_norm * self.num_steps


class SliceConfig(_Strict):
    dim: Literal[1, 2] = 1
    half_width: float = Field(1.0, gt=0.0)
    points: int = Field(21, ge=1)
    seed: int = 0

    @field_validator("points")
    @classmethod
    def _odd(cls, v):
        if v % 2 == 0:
            raise ValueError("points must be odd so the center is sampled")
        return v


class DiagnosticsConfig(_Strict):
    spectrum_epochs: List[Annotated[int, Field(ge=1)]] = []
    top_k: int = Field(5, ge=1)
    power_iters: int = Field(500, ge=1)
    power_tol: float = Field(1e-8, gt=0.0)
    trace_probes: int = Field(32, ge=2)
    flatness_rho: Optional[float] = Field(None, gt=0.0)  # None: the optimizer's rho
    probe: ProbeConfig = Field(default_factory=ProbeConfig)
    slices: List[SliceConfig] = []


class RunConfig(_Strict):
    dataset: DatasetConfig
    model: ModelConfig = Field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    epochs: int = Field(10, ge=1)
    batch_size: int = Field(32, ge=1)
    seed: int = 0
    data_seed: Optional[int] = None  # None: use the run seed
    diagnostics: DiagnosticsConfig = Field(default_factory=DiagnosticsConfig)
    output_dir: str = "runs/out"

    @model_validator(mode="after")
    def _consistent(self):
        problems = []
        is_quad = self.dataset.kind == "quadratic"
        if is_quad != (self.model.kind == "quadratic"):
            problems.append("model.kind: quadratic models go with quadratic datasets and only with them")
        bad = [e for e in self.diagnostics.spectrum_epochs if e > self.epochs]
        if bad:
            problems.append(f"diagnostics.spectrum_epochs: {bad} exceed epochs={self.epochs}")
        if problems:
            raise ValueError("; ".join(problems))
        return self

    @property
    def resolved_data_seed(self) -> int:
        return self.seed if self.data_seed is None else self.data_seed

    @property
    def resolved_init_seed(self) -> int:
        return self.seed if self.model.init_seed is None else self.model.init_seed

    @property
    def flatness_rho(self) -> float:
        rho = self.diagnostics.flatness_rho
        if rho is None:
            rho = self.optimizer.rho if self.optimizer.rho > 0 else 0.1
        return rho


def canonical_json(config: RunConfig) -> str:
    """Canonical serialization: every field explicit, keys sorted."""
    return json.dumps(config.model_dump(mode="json"), sort_keys=True, indent=2) + "\n"


def _format_validation(exc: ValidationError):
    out = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        out.append(f"{loc}: {err['msg']}")
    return out


def parse_config(obj, base_dir=None, check_data=True) -> RunConfig:
    """Validate a config mapping; relative dataset paths resolve against ``base_dir``."""
    try:
        config = RunConfig.model_validate(obj)
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc)) from None
    if base_dir is not None:
        _resolve_paths(config, Path(base_dir))
    if check_data:
        problems = _check_data(config)
        if problems:
            raise ConfigError(problems)
    return config


def load_config(path, check_data=True) -> RunConfig:
    path = Path(path)
    text = path.read_text()  # OSError propagates: an I/O failure, not a bad config
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return parse_config(obj, base_dir=path.parent, check_data=check_data)


def _resolve_paths(config, base: Path):
    ds = config.dataset
    for name in ("path", "images_path", "labels_path"):
        value = getattr(ds, name, None)
        if value is not None and not os.path.isabs(value):
            setattr(ds, name, str((base / value).resolve()))


def _check_data(config):
    from .data import dataset_size

    ds = config.dataset
    problems = []
    for name in ("path", "images_path", "labels_path"):
        value = getattr(ds, name, None)
        if value is not None and not os.path.exists(value):
            problems.append(f"dataset.{name}: {value} does not exist")
    if problems or ds.kind == "quadratic":
        return problems
    try:
        n_train = dataset_size(ds)
    except Exception as exc:  # unreadable data is a config problem at load time
        return [f"dataset: {exc}"]
    if config.batch_size > n_train:
        problems.append(f"batch_size: {config.batch_size} exceeds training set size {n_train}")
    return problems
