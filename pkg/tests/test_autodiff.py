import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gamopt import autodiff as ad
from gamopt.autodiff import (
    DifferentiableLoss,
    ParamLayout,
    evaluate,
    grad_norm_ascent_direction,
    gradient,
    hvp,
    hvp_fd,
)
from gamopt.errors import DimensionError, NonFiniteError
from gamopt.models import Batch, MlpSpec, constant_loss, dense_quadratic_loss, init_params, linear_loss, mlp_loss, quadratic_loss, QuadraticSpec


def poly(build):
    return DifferentiableLoss(ParamLayout.flat(2), lambda p, b: build(p["theta"]))


def sq_plus_linear():
    # theta_1^2 + 3 theta_2
    return poly(lambda t: (t[0:1] * t[0:1]).sum() + (t[1:2] * 3.0).sum())


def cubic():
    # theta_1^2 theta_2
    return poly(lambda t: (t[0:1] * t[0:1] * t[1:2]).sum())


def central_fd(loss, x, batch=None, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (loss.value(x + e, batch) - loss.value(x - e, batch)) / (2 * h)
    return g


def small_mlp(seed=0, widths=(3, 5, 4, 3), activation="tanh"):
    spec = MlpSpec(widths, activation, init_seed=seed)
    rng = np.random.default_rng(seed + 100)
    x = rng.standard_normal((7, widths[0]))
    y = rng.integers(0, widths[-1], 7)
    return mlp_loss(spec), init_params(spec) + 0.1 * rng.standard_normal(spec.num_params), Batch(x, y)


def test_evaluate_examples():
    q = quadratic_loss(QuadraticSpec((2.0, 1.0)))
    assert evaluate(q, [1.0, 0.0]) == 1.0
    assert evaluate(q, [0.0, 0.0]) == 0.0


def test_mse_zero_residual():
    loss = DifferentiableLoss(ParamLayout.flat(3), lambda p, b: ad.mean_squared_error(p["theta"] * 1.0, np.ones(3)))
    assert loss.value(np.ones(3)) == 0.0


def test_gradient_examples():
    assert np.array_equal(gradient(sq_plus_linear(), [2.0, 1.0]), [4.0, 3.0])
    assert np.array_equal(gradient(constant_loss(5.0, 3), np.ones(3)), np.zeros(3))
    q = quadratic_loss(QuadraticSpec((2.0, 1.0)))
    assert np.array_equal(gradient(q, [1.0, 0.0]), [2.0, 0.0])


def test_hvp_examples():
    assert np.allclose(hvp(cubic(), [1.0, 2.0], [1.0, 0.0]), [4.0, 2.0], atol=1e-14)
    assert np.array_equal(hvp(cubic(), [1.0, 2.0], [0.0, 0.0]), [0.0, 0.0])
    lin = linear_loss([1.0, -2.0, 0.5])
    assert np.array_equal(hvp(lin, [0.3, 0.1, 9.0], [1.0, 2.0, 3.0]), np.zeros(3))


def test_hvp_fd_examples():
    assert np.allclose(hvp_fd(cubic(), [1.0, 2.0], [1.0, 0.0], eps=1e-5), [4.0, 2.0], atol=1e-6)
    q = quadratic_loss(QuadraticSpec((2.0, 1.0)))
    for eps in (1e-2, 1e-4, 1e-6):
        assert np.allclose(hvp_fd(q, [0.4, -1.0], [0.0, 1.0], eps=eps), [0.0, 1.0], atol=1e-8)
    assert np.array_equal(hvp_fd(cubic(), [1.0, 2.0], [0.0, 0.0]), [0.0, 0.0])


def test_ascent_direction_examples():
    q = quadratic_loss(QuadraticSpec((2.0, 1.0)))
    assert np.allclose(grad_norm_ascent_direction(q, [1.0, 0.0], xi=0.0), [2.0, 0.0], atol=1e-15)
    assert np.array_equal(grad_norm_ascent_direction(q, [0.0, 0.0], xi=1e-12), [0.0, 0.0])
    q3 = quadratic_loss(QuadraticSpec((3.0, 1.0)))
    assert np.allclose(grad_norm_ascent_direction(q3, [0.0, 1.0], xi=0.0), [0.0, 1.0], atol=1e-15)


def test_dimension_checks():
    q = quadratic_loss(QuadraticSpec((2.0, 1.0)))
    with pytest.raises(DimensionError):
        evaluate(q, [1.0, 2.0, 3.0])
    with pytest.raises(DimensionError):
        hvp(q, [1.0, 2.0], [1.0])
    with pytest.raises(NonFiniteError):
        evaluate(q, [np.nan, 0.0])


def test_label_range_rejected():
    loss, p, b = small_mlp()
    bad = Batch(b.inputs, np.full(len(b), 9))
    with pytest.raises(DimensionError):
        loss.value(p, bad)


@pytest.mark.parametrize("seed", range(5))
def test_mlp_gradient_matches_central_differences(seed):
    loss, p, b = small_mlp(seed)
    g = loss.grad(p, b)
    fd = central_fd(loss, p, b)
    assert np.max(np.abs(g - fd) / np.maximum(1.0, np.abs(fd))) < 1e-5


def test_dense_quadratic_hvp_exact():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((6, 6))
    h = a + a.T
    loss = dense_quadratic_loss(h, rng.standard_normal(6))
    for _ in range(5):
        x, v = rng.standard_normal(6), rng.standard_normal(6)
        assert np.max(np.abs(loss.hvp(x, v) - h @ v)) < 1e-10


@pytest.mark.parametrize("seed", range(5))
def test_hvp_agrees_with_fd_and_is_symmetric(seed):
    loss, p, b = small_mlp(seed)
    rng = np.random.default_rng(seed)
    u, v = rng.standard_normal(p.size), rng.standard_normal(p.size)
    hv = loss.hvp(p, v, b)
    fd = hvp_fd(loss, p, v, b, eps=1e-5)
    assert np.linalg.norm(hv - fd) / np.linalg.norm(fd) < 1e-4
    hu = loss.hvp(p, u, b)
    assert abs(u @ hv - v @ hu) <= 1e-8 * max(abs(u @ hv), 1e-300)


def test_hvp_linearity():
    loss, p, b = small_mlp(1)
    rng = np.random.default_rng(1)
    u, v = rng.standard_normal(p.size), rng.standard_normal(p.size)
    lhs = loss.hvp(p, 2.5 * u - 0.5 * v, b)
    rhs = 2.5 * loss.hvp(p, u, b) - 0.5 * loss.hvp(p, v, b)
    assert np.linalg.norm(lhs - rhs) <= 1e-10 * np.linalg.norm(rhs)


def test_determinism_bitwise():
    loss, p, b = small_mlp(2)
    v = np.linspace(-1, 1, p.size)
    a = loss.grad_and_hvp(p, v, b)
    c = loss.grad_and_hvp(p, v, b)
    assert np.array_equal(a[0], c[0]) and np.array_equal(a[1], c[1])


def test_relu_mlp_gradient():
    loss, p, b = small_mlp(0, activation="relu")
    assert np.allclose(loss.grad(p, b), central_fd(loss, p, b), atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=2), st.lists(st.floats(-3, 3), min_size=2, max_size=2))
def test_cubic_hvp_matches_symbolic(x, v):
    x1, x2 = x
    h = np.array([[2 * x2, 2 * x1], [2 * x1, 0.0]])
    assert np.allclose(hvp(cubic(), x, v), h @ np.array(v), atol=1e-12)


def test_elementwise_ops_against_fd():
    def build(p, b):
        t = p["theta"]
        return (ad.sin(t) * ad.exp(t * 0.3) + ad.cos(t * t)).sum()

    loss = DifferentiableLoss(ParamLayout.flat(4), build)
    x = np.array([0.3, -0.7, 1.1, 0.05])
    assert np.allclose(loss.grad(x), central_fd(loss, x), atol=1e-8)
    v = np.array([1.0, 0.5, -0.2, 2.0])
    assert np.allclose(loss.hvp(x, v), hvp_fd(loss, x, v), atol=1e-7)


def test_layout_json_round_trip():
    loss, _, _ = small_mlp()
    lay = loss.layout
    assert ParamLayout.from_json(lay.to_json()) == lay
    assert lay.dim == MlpSpec((3, 5, 4, 3)).num_params
