import numpy as np
import pytest

from gamopt.config import parse_config
from gamopt.errors import DivergenceError
from gamopt.models import OracleLossSpec, QuadraticSpec, make_oracle, quadratic_loss
from gamopt.optimizers import (
    OptimizerState,
    gam_iterations,
    gam_step,
    sam_step,
    schedule_value,
    sgd_step,
    train_run,
)


def quad(*diag):
    return quadratic_loss(QuadraticSpec(tuple(float(a) for a in diag)))


def test_schedules():
    assert schedule_value("inv-sqrt", 0.1, 4) == 0.05
    assert abs(schedule_value("cosine", 0.1, 50, 100) - 0.05) < 1e-15
    assert schedule_value("constant", 0.1, 12345) == 0.1
    with pytest.raises(ValueError):
        schedule_value("cosine", 0.1, 5)
    with pytest.raises(ValueError):
        schedule_value("inv-sqrt", 0.1, 0)


@pytest.mark.parametrize("kind", ["inv-sqrt", "cosine"])
def test_schedules_non_increasing(kind):
    vals = [schedule_value(kind, 0.3, t, 200) for t in range(1, 201)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_sgd_examples():
    q = quad(2, 1)
    st = OptimizerState(eta0=0.1)
    new, _ = sgd_step(st, q, np.array([1.0, 0.0]))
    assert np.allclose(new, [0.8, 0.0], atol=1e-15)
    st = OptimizerState(eta0=0.1)
    new, _ = sgd_step(st, q, np.zeros(2))
    assert np.array_equal(new, np.zeros(2))


def test_momentum_recursion():
    from gamopt.models import linear_loss

    lin = linear_loss([1.0, -2.0])
    st = OptimizerState(eta0=0.1, momentum=0.9)
    p0 = np.zeros(2)
    p1, _ = sgd_step(st, lin, p0)
    p2, _ = sgd_step(st, lin, p1)
    assert np.allclose(p2 - p1, -0.1 * 1.9 * np.array([1.0, -2.0]), atol=1e-15)


def test_sam_examples():
    q = quad(2, 1)
    st = OptimizerState(eta0=0.1, rho0=0.1)
    new, _ = sam_step(st, q, np.array([1.0, 0.0]))
    assert np.allclose(new, [0.78, 0.0], atol=1e-15)
    st = OptimizerState(eta0=0.1, rho0=0.1, xi=1e-12)
    new, _ = sam_step(st, q, np.zeros(2))
    assert np.array_equal(new, np.zeros(2))


def test_sam_rho_zero_is_sgd_bitwise():
    q = quad(5, 2, 1)
    x = np.array([0.3, -1.2, 2.0])
    a, _ = sam_step(OptimizerState(eta0=0.1, rho0=0.0, momentum=0.9), q, x)
    b, _ = sgd_step(OptimizerState(eta0=0.1, rho0=0.0, momentum=0.9), q, x)
    assert np.array_equal(a, b)


def test_gam_trace():
    q = quad(2, 1)
    st = OptimizerState(eta0=0.1, rho0=0.1, alpha=1.0, xi=0.0)
    new, rep = gam_step(st, q, q, np.array([1.0, 0.0]))
    d = rep.details
    assert np.allclose(d["h_loss"], [2, 0], atol=1e-12)
    assert np.allclose(d["f"], [2, 0], atol=1e-12)
    assert np.allclose(d["theta_adv"], [1.1, 0], atol=1e-12)
    assert np.allclose(d["h_norm"], [0.2, 0], atol=1e-12)
    assert np.allclose(new, [0.78, 0], atol=1e-12)
    assert rep.applied_gam


def test_gam_alpha_zero_is_base_bitwise():
    q = quad(4, 2, 1)
    oracle = make_oracle(q, OracleLossSpec(weight_decay=0.01))
    x = np.array([0.3, -1.2, 2.0])
    sa = OptimizerState(eta0=0.1, rho0=0.1, alpha=0.0, momentum=0.9)
    sb = OptimizerState(eta0=0.1, rho0=0.1, alpha=0.0, momentum=0.9)
    a, b = x, x
    for _ in range(5):
        a, _ = gam_step(sa, oracle, q, a)
        b, _ = sgd_step(sb, oracle, b)
    assert np.array_equal(a, b)


def test_gam_stationary_point():
    q = quad(2, 1)
    st = OptimizerState(eta0=0.1, rho0=0.1, alpha=1.0, xi=1e-12)
    new, rep = gam_step(st, q, q, np.zeros(2))
    assert np.array_equal(new, np.zeros(2))
    assert np.array_equal(rep.details["f"], np.zeros(2))
    assert np.array_equal(rep.details["theta_adv"], np.zeros(2))
    assert np.array_equal(rep.details["h_norm"], np.zeros(2))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_names_line():
    q = quad(1e300, 1)
    st = OptimizerState(eta0=1.0, rho0=0.1, alpha=1.0)
    with pytest.raises(DivergenceError) as exc:
        x = np.array([1e10, 0.0])
        for _ in range(10):
            x, _ = gam_step(st, q, q, x)
    assert exc.value.line is not None and "line" in str(exc.value)


def test_descent_on_quadratic():
    q = quad(4, 2, 1)
    st = OptimizerState(eta0=0.2, rho0=0.01, alpha=0.1)
    x = np.ones(3)
    vals = [q.value(x)]
    for _ in range(50):
        x, _ = gam_step(st, q, q, x)
        vals.append(q.value(x))
    # the regularizer term rho*H*g_hat does not vanish at the minimum, so
    # monotone descent only holds outside an O(alpha*rho) neighbourhood
    outside = [v for v in vals if v > 1e-4]
    assert len(outside) > 10
    assert all(b <= a for a, b in zip(outside, outside[1:]))


def test_gam_iterations():
    assert gam_iterations(10, 0.0) == 0
    assert gam_iterations(10, 1.0) == 10
    assert gam_iterations(10, 0.25) == 3


def _cfg(**opt):
    return parse_config({
        "dataset": {"kind": "two_moons", "n": 120, "test_n": 40},
        "model": {"hidden": [6, 6]},
        "optimizer": opt,
        "epochs": 2,
        "batch_size": 32,
        "seed": 4,
    })


def test_ratio_zero_matches_base_run():
    a = train_run(_cfg(kind="gam", gam_apply_ratio=0.0))
    b = train_run(_cfg(kind="sgd"))
    assert np.array_equal(a.params, b.params)


def test_ratio_one_applies_gam_everywhere():
    r = train_run(_cfg(kind="gam"), record_steps=True)
    assert r.step_reports and all(s.applied_gam for s in r.step_reports)


def test_partial_ratio_selects_first_iterations():
    r = train_run(_cfg(kind="gam", gam_apply_ratio=0.5), record_steps=True)
    flags = [s.applied_gam for s in r.step_reports]
    assert flags == ([True] * 2 + [False] * 2) * 2


def test_train_run_deterministic():
    a = train_run(_cfg(kind="sam+gam"))
    b = train_run(_cfg(kind="sam+gam"))
    assert np.array_equal(a.params, b.params)
    strip = lambda r: [(m.epoch, m.step, m.train_loss, m.train_acc, m.test_acc, m.mean_overall_grad_norm_sq) for m in r.metrics]
    assert strip(a) == strip(b)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_run_reports_divergence():
    cfg = parse_config({
        "dataset": {"kind": "quadratic", "diag": [10.0, 1.0]},
        "model": {"kind": "quadratic"},
        "optimizer": {"kind": "sgd", "lr": 5.0, "momentum": 0.0, "lr_schedule": "constant"},
        "epochs": 20,
    })
    r = train_run(cfg)
    assert r.diverged and r.divergence
