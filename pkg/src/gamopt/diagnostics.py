"""Flatness measurements around a parameter point.

The flatness estimators search the ball ``B(theta, rho)`` with seeded random
samples plus two ascent trajectories, so they return lower bounds on the true
maxima. When the zeroth- and first-order estimates are taken together
(:func:`flatness_pair`), the first-order search also visits Gauss-Legendre
nodes on the segment to the zeroth-order maximizer, which makes
``r1 >= r0`` hold on the shared probe set up to quadrature error.
"""

import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import _accel
from .autodiff import DEFAULT_XI, DifferentiableLoss, check_vector, safe_unit
from .config import ProbeConfig

_GL_NODES = 16


# ---------------------------------------------------------------------------
# ball search
# ---------------------------------------------------------------------------


def _ball_samples(rng, center, rho, count):
    d = center.size
    z = rng.standard_normal((count, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    r = rho * rng.uniform(0.0, 1.0, count) ** (1.0 / d)
    return center + z * r[:, None]


def _project(center, point, rho):
    off = point - center
    n = np.linalg.norm(off)
    if n > rho:
        off *= rho / n
    return center + off


def _r0_search(loss, point, rho, probe, batch):
    base = loss.value(point, batch)
    rng = np.random.default_rng(probe.seed)
    best_val, best_pt = 0.0, point.copy()

    def consider(pt, val):
        nonlocal best_val, best_pt
        if val - base > best_val:
            best_val, best_pt = val - base, pt

    start = point
    if probe.ball_samples:
        samples = _ball_samples(rng, point, rho, probe.ball_samples)
        vals = [loss.value(s, batch) for s in samples]
        i = int(np.argmax(vals))
        consider(samples[i], vals[i])
        start = samples[i]

    # projected normalized-gradient ascent
    step = probe.ascent_lr * rho
    cur = start.copy()
    for _ in range(probe.ascent_steps):
        g = loss.grad(cur, batch)
        gn = np.linalg.norm(g)
        if gn == 0:
            break
        cur = _project(point, cur + step * g / gn, rho)
        consider(cur, loss.value(cur, batch))

    # iterated linearized maximizer: theta + rho * grad(u) / ||grad(u)||
    g0 = loss.grad(point, batch)
    cur = point + rho * g0 / np.linalg.norm(g0) if np.any(g0) else start.copy()
    for _ in range(probe.ascent_steps):
        v, g = loss.value_and_grad(cur, batch)
        consider(cur, v)
        gn = np.linalg.norm(g)
        if gn == 0:
            break
        cur = point + rho * g / gn
    return best_val, best_pt


def _grad_norm_ascent(loss, at, batch, xi):
    """``(||g||, H g / (||g|| + xi))`` at ``at``."""
    g = loss.grad(at, batch)
    unit = safe_unit(g, xi)
    if not np.any(unit):
        return 0.0, np.zeros_like(g)
    return float(np.linalg.norm(g)), loss.hvp(at, unit, batch)


def _r1_search(loss, point, rho, probe, batch, witness=None, xi=DEFAULT_XI):
    rng = np.random.default_rng(probe.seed)
    best = 0.0

    def consider(pt):
        nonlocal best
        best = max(best, float(np.linalg.norm(loss.grad(pt, batch))))

    gn0, f0 = _grad_norm_ascent(loss, point, batch, xi)
    best = gn0
    # one-step maximizer seeded by the ascent direction at the center
    adv = point + rho * safe_unit(f0, xi)
    consider(adv)

    start, start_norm = point, gn0
    if probe.ball_samples:
        samples = _ball_samples(rng, point, rho, probe.ball_samples)
        norms = [float(np.linalg.norm(loss.grad(s, batch))) for s in samples]
        i = int(np.argmax(norms))
        best = max(best, norms[i])
        if norms[i] > start_norm:
            start, start_norm = samples[i], norms[i]

    if witness is not None:
        # Gauss-Legendre nodes on the segment to the zeroth-order maximizer
        nodes, _ = np.polynomial.legendre.leggauss(_GL_NODES)
        off = witness - point
        for s in 0.5 * (nodes + 1.0):
            consider(point + s * off)

    step = probe.ascent_lr * rho
    cur = start.copy()
    for _ in range(probe.ascent_steps):
        gn, f = _grad_norm_ascent(loss, cur, batch, xi)
        best = max(best, gn)
        fn = np.linalg.norm(f)
        if fn == 0:
            break
        cur = _project(point, cur + step * f / fn, rho)
    consider(cur)

    cur = adv if np.any(f0) else start.copy()
    for _ in range(probe.ascent_steps):
        gn, f = _grad_norm_ascent(loss, cur, batch, xi)
        best = max(best, gn)
        fn = np.linalg.norm(f)
        if fn == 0:
            break
        cur = point + rho * f / fn
    consider(cur)
    return rho * best


def estimate_r0(loss: DifferentiableLoss, point, rho, probe: ProbeConfig = None, batch=None) -> float:
    """Lower bound on ``max_{theta' in B(theta, rho)} L(theta') - L(theta)``."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    point = check_vector(point, loss.dim)
    return _r0_search(loss, point, rho, probe or ProbeConfig(), batch)[0]


def estimate_r1(loss: DifferentiableLoss, point, rho, probe: ProbeConfig = None, batch=None,
                witness=None, xi=DEFAULT_XI) -> float:
    """Lower bound on ``rho * max_{theta' in B(theta, rho)} ||grad L(theta')||``.

    ``witness`` is an optional point in the ball whose connecting segment is
    also probed (see :func:`flatness_pair`).
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    point = check_vector(point, loss.dim)
    return _r1_search(loss, point, rho, probe or ProbeConfig(), batch, witness, xi)


def flatness_pair(loss, point, rho, probe: ProbeConfig = None, batch=None):
    """``(r0_hat, r1_hat)`` estimated on a shared probe set."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    probe = probe or ProbeConfig()
    point = check_vector(point, loss.dim)
    r0, witness = _r0_search(loss, point, rho, probe, batch)
    r1 = _r1_search(loss, point, rho, probe, batch, witness=witness)
    return r0, r1


# ---------------------------------------------------------------------------
# Hessian spectrum
# ---------------------------------------------------------------------------


@dataclass
class Spectrum:
    values: list
    vectors: np.ndarray
    converged: list
    iterations: list


def _orth(v, basis):
    for q in basis:
        v = v - (q @ v) * q
    return v


def power_iteration_topk(loss, point, batch=None, k=1, iters=1000, tol=1e-10, seed=0) -> Spectrum:
    """Top-``k`` Hessian eigenvalues (largest magnitude) by deflated power iteration.

    Converged eigenvectors are projected out (twice per iteration). An
    eigenpair is accepted when successive Rayleigh quotients differ by less
    than ``tol * max(1, |lambda|)`` or the eigen-residual is that small.
    Non-converged estimates are returned with ``converged`` False.
    """
    if k < 1 or iters < 1:
        raise ValueError("k and iters must be at least 1")
    point = check_vector(point, loss.dim)
    d = loss.dim
    k = min(k, d)
    rng = np.random.default_rng(seed)
    basis, values, flags, counts = [], [], [], []
    for _ in range(k):
        v = _orth(_orth(rng.standard_normal(d), basis), basis)
        v /= np.linalg.norm(v)
        lam_prev = None
        lam, done, it = 0.0, False, 0
        for it in range(1, iters + 1):
            w = _orth(loss.hvp(point, v, batch), basis)
            lam = float(v @ w)
            thresh = tol * max(1.0, abs(lam))
            resid = np.linalg.norm(w - lam * v)
            if resid <= thresh or (lam_prev is not None and abs(lam - lam_prev) < thresh):
                done = True
                break
            lam_prev = lam
            w = _orth(w, basis)
            wn = np.linalg.norm(w)
            if wn == 0:
                done = True
                break
            v = w / wn
        basis.append(v)
        values.append(lam)
        flags.append(done)
        counts.append(it)
    order = np.argsort(values)[::-1]
    return Spectrum(
        [values[i] for i in order],
        np.array([basis[i] for i in order]),
        [flags[i] for i in order],
        [counts[i] for i in order],
    )


def hutchinson_trace(loss, point, batch=None, num_probes=32, seed=0):
    """Rademacher estimate of the Hessian trace; returns ``(trace_hat, stderr)``."""
    if num_probes < 2:
        raise ValueError("num_probes must be at least 2")
    point = check_vector(point, loss.dim)
    rng = np.random.default_rng(seed)
    samples = np.empty(num_probes)
    for i in range(num_probes):
        z = rng.integers(0, 2, loss.dim) * 2.0 - 1.0
        samples[i] = z @ loss.hvp(point, z, batch)
    return float(samples.mean()), float(samples.std(ddof=1) / math.sqrt(num_probes))


# ---------------------------------------------------------------------------
# census and slices
# ---------------------------------------------------------------------------


@dataclass
class Census:
    minima: np.ndarray
    maxima: np.ndarray

    @property
    def histogram(self):
        return dict(sorted(Counter(zip(self.minima.tolist(), self.maxima.tolist())).items()))

    def to_json(self):
        return [{"minima": a, "maxima": b, "count": c} for (a, b), c in self.histogram.items()]


def random_directions(dim, count, seed):
    z = np.random.default_rng(seed).standard_normal((count, dim))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def minima_census(loss, point, probe: ProbeConfig = None, batch=None, directions=None) -> Census:
    """Count interior local minima/maxima along rays ``theta + s * step * u``."""
    probe = probe or ProbeConfig()
    point = check_vector(point, loss.dim)
    if directions is None:
        directions = random_directions(loss.dim, probe.num_directions, probe.seed)
    directions = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    directions = directions / np.linalg.norm(directions, axis=1, keepdims=True)
    values = np.empty((directions.shape[0], probe.num_steps + 1))
    for j, u in enumerate(directions):
        for s in range(probe.num_steps + 1):
            values[j, s] = loss.value(point + (s * probe.step_norm) * u, batch)
    minima, maxima = _accel.count_extrema(values)
    return Census(minima, maxima)


def filter_normalize(direction, point, layout):
    """Rescale each parameter segment of ``direction`` to that segment's norm in ``point``."""
    out = np.array(direction, dtype=np.float64)
    for seg in layout.segments:
        sl = layout.slices[seg.name]
        dn = np.linalg.norm(out[sl])
        pn = np.linalg.norm(point[sl])
        out[sl] = out[sl] * (pn / dn) if dn > 0 else 0.0
    return out


@dataclass
class LandscapeSlice:
    xs: np.ndarray
    ys: Optional[np.ndarray]
    values: np.ndarray


def landscape_slice(loss, point, dir1=None, dir2=None, grid_half_width=1.0, grid_points=21,
                    batch=None, normalize=True, seed=0, two_d=None) -> LandscapeSlice:
    """Loss on a 1-D line or 2-D plane through ``point``.

    Random directions are drawn from ``seed`` when not given. With
    ``normalize`` the directions are filter-normalized per parameter segment.
    """
    if grid_points % 2 == 0:
        raise ValueError("grid_points must be odd so the center is sampled")
    point = check_vector(point, loss.dim)
    if two_d is None:
        two_d = dir2 is not None
    rng = np.random.default_rng(seed)
    if dir1 is None:
        dir1 = rng.standard_normal(loss.dim)
    if two_d and dir2 is None:
        dir2 = rng.standard_normal(loss.dim)
    d1 = np.asarray(dir1, dtype=np.float64)
    d2 = None if not two_d else np.asarray(dir2, dtype=np.float64)
    if normalize:
        d1 = filter_normalize(d1, point, loss.layout)
        if d2 is not None:
            d2 = filter_normalize(d2, point, loss.layout)
    xs = np.linspace(-grid_half_width, grid_half_width, grid_points)
    xs[grid_points // 2] = 0.0
    if d2 is None:
        values = np.array([loss.value(point + x * d1, batch) for x in xs])
        return LandscapeSlice(xs, None, values)
    values = np.array([[loss.value(point + x * d1 + y * d2, batch) for y in xs] for x in xs])
    return LandscapeSlice(xs, xs.copy(), values)


# ---------------------------------------------------------------------------
# generalization bound
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundInputs:
    n: int
    d: int
    rho: float
    M: float
    delta: float
    theta_norm: float
    emp_loss: float
    r1: float

    def __post_init__(self):
        problems = []
        if not self.n > 1:
            problems.append("n must exceed 1")
        if not self.d >= 1:
            problems.append("d must be at least 1")
        if not 0 < self.delta < 1:
            problems.append("delta must lie in (0, 1)")
        if not self.rho > 0:
            problems.append("rho must be positive")
        if not self.M >= self.emp_loss >= 0:
            problems.append("need M >= emp_loss >= 0")
        if self.theta_norm < 0 or self.r1 < 0:
            problems.append("theta_norm and r1 must be non-negative")
        if problems:
            raise ValueError("; ".join(problems))


def bound_complexity(n, d, rho, delta, theta_norm) -> float:
    """The square-root complexity term of the first-order flatness bound."""
    spread = (math.sqrt(d) + math.sqrt(math.log(n))) ** 2
    inner = (
        0.25 * d * math.log1p(theta_norm**2 * spread / (d * rho**2))
        + 0.25
        + math.log(n / delta)
        + 2.0 * math.log(6 * n + 3 * d)
    )
    return math.sqrt(inner / (n - 1))


def generalization_bound(b: BoundInputs) -> float:
    """``L_hat + R1 + M / sqrt(n) + complexity`` (population loss under Gaussian
    weight noise of scale ``rho / (sqrt(d) + sqrt(ln n))``)."""
    return b.emp_loss + b.r1 + b.M / math.sqrt(b.n) + bound_complexity(b.n, b.d, b.rho, b.delta, b.theta_norm)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class FlatnessReport:
    rho: float
    r0_hat: float
    r1_hat: float
    lambda_topk: list
    lambda_converged: list
    trace_hat: float
    trace_stderr: float
    census: list = field(default_factory=list)

    def to_json(self):
        return asdict(self)


def flatness_report(loss, point, rho, batch=None, probe: ProbeConfig = None, top_k=5,
                    power_iters=500, power_tol=1e-8, trace_probes=32, seed=0) -> FlatnessReport:
    probe = probe or ProbeConfig()
    r0, r1 = flatness_pair(loss, point, rho, probe, batch)
    spec = power_iteration_topk(loss, point, batch, k=top_k, iters=power_iters, tol=power_tol, seed=seed)
    tr, se = hutchinson_trace(loss, point, batch, trace_probes, seed=seed)
    census = minima_census(loss, point, probe, batch)
    return FlatnessReport(
        rho=rho,
        r0_hat=r0,
        r1_hat=r1,
        lambda_topk=[float(v) for v in spec.values],
        lambda_converged=list(spec.converged),
        trace_hat=tr,
        trace_stderr=se,
        census=census.to_json(),
    )
