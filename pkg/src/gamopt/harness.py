"""Experiment orchestration: seeded runs, report files, sweeps, checkpoints."""

import csv
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, _accel
from .autodiff import ParamLayout
from .config import ALPHA_GRID, RHO_GRID, RunConfig, canonical_json
from .data import build_problem
from .diagnostics import flatness_report, landscape_slice, minima_census, power_iteration_topk
from .errors import DataError
from .optimizers import MetricsRow, train_run

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_IO = 4

METRIC_COLUMNS = [f for f in MetricsRow.__dataclass_fields__]
TIMING_COLUMNS = ("wall_ms",)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    Path(path).write_text(buf.getvalue())


def write_metrics(path, rows):
    _write_csv(path, METRIC_COLUMNS, [[getattr(r, c) for c in METRIC_COLUMNS] for r in rows])


def read_metrics(path, drop_timing=True):
    """Rows as dicts of strings; timing columns are dropped in comparison mode."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if drop_timing:
        for r in rows:
            for c in TIMING_COLUMNS:
                r.pop(c, None)
    return rows


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def save_checkpoint(path, params, layout: ParamLayout):
    """Flat little-endian float64 array plus a ``.json`` sidecar listing segments."""
    params = np.asarray(params, dtype=np.float64)
    if params.size != layout.dim:
        raise DataError(f"checkpoint has {params.size} values, layout expects {layout.dim}")
    Path(path).write_bytes(params.astype("<f8").tobytes())
    _write_json(str(path) + ".json", {"dtype": "<f8", "dim": layout.dim, "segments": layout.to_json()})


def load_checkpoint(path, layout: Optional[ParamLayout] = None):
    sidecar = str(path) + ".json"
    meta = json.loads(Path(sidecar).read_text())
    if meta.get("dtype") != "<f8":
        raise DataError(f"{sidecar}: unsupported dtype {meta.get('dtype')!r}")
    stored = ParamLayout.from_json(meta["segments"])
    params = np.frombuffer(Path(path).read_bytes(), dtype="<f8").astype(np.float64)
    if params.size != stored.dim or params.size != meta["dim"]:
        raise DataError(f"{path}: {params.size} values but sidecar describes {stored.dim}")
    if layout is not None and layout != stored:
        raise DataError(f"{path}: segments {stored!r} do not match the model {layout!r}")
    return params


def write_slice(path, sl):
    if sl.ys is None:
        _write_csv(path, ["x", "loss"], zip(sl.xs.tolist(), sl.values.tolist()))
    else:
        rows = [
            (float(x), float(y), float(sl.values[i, j]))
            for i, x in enumerate(sl.xs)
            for j, y in enumerate(sl.ys)
        ]
        _write_csv(path, ["x", "y", "loss"], rows)


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


@dataclass
class RunOutcome:
    exit_code: int
    output_dir: Path
    result: object = None
    files: list = field(default_factory=list)


def _report(config, problem, params):
    d = config.diagnostics
    return flatness_report(
        problem.loss,
        params,
        config.flatness_rho,
        batch=problem.full_batch(),
        probe=d.probe,
        top_k=min(d.top_k, problem.loss.dim),
        power_iters=d.power_iters,
        power_tol=d.power_tol,
        trace_probes=d.trace_probes,
        seed=config.seed,
    )


def _manifest(config, **extra):
    out = {
        "config": json.loads(canonical_json(config)),
        "version": __version__,
        "backend": _accel.backend(),
    }
    out.update(extra)
    return out


def run(config: RunConfig, output_dir=None) -> RunOutcome:
    """Train, emit metrics/flatness/slice files and a manifest.

    Returns exit code 0, or 3 when training diverged (the manifest and partial
    metrics are still written).
    """
    out = Path(output_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    problem = build_problem(config)
    files = []
    wanted = set(config.diagnostics.spectrum_epochs)

    def on_epoch_end(epoch, params):
        if epoch in wanted:
            name = f"flatness_{epoch}.json"
            _write_json(out / name, _report(config, problem, params).to_json())
            files.append(name)

    result = train_run(config, problem, on_epoch_end=on_epoch_end)
    write_metrics(out / "metrics.csv", result.metrics)
    files.insert(0, "metrics.csv")
    if not result.diverged:
        for i, sc in enumerate(config.diagnostics.slices):
            sl = landscape_slice(
                problem.loss,
                result.params,
                grid_half_width=sc.half_width,
                grid_points=sc.points,
                batch=problem.full_batch(),
                seed=sc.seed,
                two_d=sc.dim == 2,
            )
            name = f"slice_{i}_{sc.dim}d.csv"
            write_slice(out / name, sl)
            files.append(name)
        save_checkpoint(out / "params.bin", result.params, problem.loss.layout)
        files.append("params.bin")
    _write_json(
        out / "manifest.json",
        _manifest(config, diverged=result.diverged, divergence=result.divergence, files=files),
    )
    code = EXIT_DIVERGED if result.diverged else EXIT_OK
    return RunOutcome(code, out, result, files)


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def cell_seed(base_seed: int, index: int) -> int:
    """Independent per-cell seed from a counter-based split of the base seed."""
    return int(np.random.SeedSequence(base_seed, spawn_key=(index,)).generate_state(1)[0])


SUMMARY_COLUMNS = [
    "cell", "rho", "alpha", "seed", "status",
    "final_train_acc", "final_test_acc", "best_test_acc", "lambda_max", "error",
]


def _sweep_cell(args):
    config, index, out = args
    row = {"cell": index, "rho": config.optimizer.rho, "alpha": config.optimizer.alpha, "seed": config.seed}
    try:
        outcome = run(config, out)
        res = outcome.result
        if res.diverged:
            row.update(status="diverged", error=res.divergence)
            return row
        last = res.metrics[-1]
        problem = build_problem(config)
        spec = power_iteration_topk(
            problem.loss, res.params, problem.full_batch(), k=1,
            iters=config.diagnostics.power_iters, tol=config.diagnostics.power_tol, seed=config.seed,
        )
        row.update(
            status="ok",
            final_train_acc=last.train_acc,
            final_test_acc=last.test_acc,
            best_test_acc=res.best_test_acc,
            lambda_max=spec.values[0],
        )
    except Exception as exc:  # recorded per cell; the sweep continues
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    return row


def sweep_configs(config: RunConfig, rhos=None, alphas=None, output_dir=None):
    rhos = list(RHO_GRID if rhos is None else rhos)
    alphas = list(ALPHA_GRID if alphas is None else alphas)
    out = Path(output_dir or config.output_dir)
    cells = []
    for i, (rho, alpha) in enumerate((r, a) for r in rhos for a in alphas):
        opt = config.optimizer.model_copy(update={"rho": rho, "alpha": alpha})
        cfg = config.model_copy(
            update={
                "optimizer": opt,
                "seed": cell_seed(config.seed, i),
                "data_seed": config.resolved_data_seed,
                "output_dir": str(out / f"cell_{i:03d}"),
            }
        )
        cells.append((cfg, i, cfg.output_dir))
    return cells


def sweep(config: RunConfig, rhos=None, alphas=None, output_dir=None, workers=1):
    """One run per (rho, alpha) cell; writes ``summary.csv`` in cell order."""
    out = Path(output_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = sweep_configs(config, rhos, alphas, out)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_cell, cells))
    else:
        rows = [_sweep_cell(c) for c in cells]
    rows.sort(key=lambda r: r["cell"])
    _write_csv(out / "summary.csv", SUMMARY_COLUMNS, [[r.get(c) for c in SUMMARY_COLUMNS] for r in rows])
    _write_json(out / "manifest.json", _manifest(config, cells=len(rows)))
    return rows


# ---------------------------------------------------------------------------
# single-point diagnostics
# ---------------------------------------------------------------------------


def _point(config, problem, checkpoint):
    if checkpoint is None:
        return problem.init.copy()
    return load_checkpoint(checkpoint, problem.loss.layout)


def diagnose(config: RunConfig, checkpoint=None, output_dir=None):
    problem = build_problem(config)
    params = _point(config, problem, checkpoint)
    report = _report(config, problem, params)
    out = Path(output_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "flatness.json", report.to_json())
    return report


def census(config: RunConfig, checkpoint=None, output_dir=None):
    problem = build_problem(config)
    params = _point(config, problem, checkpoint)
    c = minima_census(problem.loss, params, config.diagnostics.probe, problem.full_batch())
    out = Path(output_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "census.json", c.to_json())
    return c


def slice_run(config: RunConfig, dim=1, checkpoint=None, output_dir=None):
    problem = build_problem(config)
    params = _point(config, problem, checkpoint)
    sc = config.diagnostics.slices[0] if config.diagnostics.slices else None
    sl = landscape_slice(
        problem.loss,
        params,
        grid_half_width=sc.half_width if sc else 1.0,
        grid_points=sc.points if sc else 21,
        batch=problem.full_batch(),
        seed=sc.seed if sc else 0,
        two_d=dim == 2,
    )
    out = Path(output_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_slice(out / f"slice_{dim}d.csv", sl)
    return sl
