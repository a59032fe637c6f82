"""Hot elementwise kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import time. Set ``GAMOPT_NUMBA=0`` to force the
numpy path (useful for debugging and for the kernel benchmark). Both backends
are always importable under ``_np_*`` / ``_nb_*`` names so tests can compare
them directly.

Tangent arguments are optional everywhere: ``None`` means "no forward-mode
direction attached" and the corresponding tangent output is ``None``.
"""

import os

import numpy as np

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and os.environ.get("GAMOPT_NUMBA", "1").strip().lower() not in (
    "0",
    "false",
    "no",
    "off",
)

_EMPTY2 = np.zeros((0, 0))


# ---------------------------------------------------------------------------
# numpy reference path
# ---------------------------------------------------------------------------


def _np_tanh_fwd(x, xt):
    y = np.tanh(x)
    if xt is None:
        return y, None
    return y, (1.0 - y * y) * xt


def _np_tanh_bwd(y, yt, a, at):
    s = 1.0 - y * y
    gx = a * s
    gxt = None
    if at is not None:
        gxt = at * s
    if yt is not None:
        extra = -2.0 * a * y * yt
        gxt = extra if gxt is None else gxt + extra
    return gx, gxt


def _np_xent_fwd(z, labels, zt):
    b = z.shape[0]
    zmax = z.max(axis=1, keepdims=True)
    e = np.exp(z - zmax)
    s = e.sum(axis=1, keepdims=True)
    p = e / s
    rows = np.arange(b)
    lse = np.log(s[:, 0]) + zmax[:, 0]
    loss = np.mean(lse - z[rows, labels])
    if zt is None:
        return loss, p, None
    loss_t = np.mean((p * zt).sum(axis=1) - zt[rows, labels])
    return loss, p, loss_t


def _np_xent_bwd(p, zt, labels, a, at):
    b = p.shape[0]
    resid = p.copy()
    resid[np.arange(b), labels] -= 1.0
    resid /= b
    g = a * resid
    gt = None
    if at is not None:
        gt = at * resid
    if zt is not None:
        pdot = p * (zt - (p * zt).sum(axis=1, keepdims=True)) / b
        gt = a * pdot if gt is None else gt + a * pdot
    return g, gt


def _np_count_extrema(values, rtol=1e-12):
    """Interior strict extrema per row; runs of tied values count once.

    Neighbours closer than ``rtol * max(1, max|row|)`` are ties, so analytically
    equal samples do not turn into spurious extrema through rounding.
    """
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    minima = np.zeros(n, dtype=np.int64)
    maxima = np.zeros(n, dtype=np.int64)
    scale = rtol * np.maximum(1.0, np.abs(values).max(axis=1, initial=0.0))
    diff = np.diff(values, axis=1)
    signs = np.where(diff > scale[:, None], 1, np.where(diff < -scale[:, None], -1, 0))
    for i in range(n):
        s = signs[i][signs[i] != 0]
        minima[i] = np.count_nonzero((s[:-1] < 0) & (s[1:] > 0))
        maxima[i] = np.count_nonzero((s[:-1] > 0) & (s[1:] < 0))
    return minima, maxima


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if HAS_NUMBA:

    @numba.njit(cache=True)
    def _nb_tanh_fwd_kernel(x, xt, has_t):
        y = np.empty_like(x)
        yt = np.empty_like(x) if has_t else np.empty_like(x[:0])
        fx = x.ravel()
        fy = y.ravel()
        fxt = xt.ravel()
        fyt = yt.ravel()
        for i in range(fx.size):
            v = np.tanh(fx[i])
            fy[i] = v
            if has_t:
                fyt[i] = (1.0 - v * v) * fxt[i]
        return y, yt

    @numba.njit(cache=True)
    def _nb_tanh_bwd_kernel(y, yt, a, at, has_yt, has_at):
        fy = y.ravel()
        fa = a.ravel()
        gx = np.empty_like(y)
        fgx = gx.ravel()
        want_t = has_yt or has_at
        gxt = np.empty_like(y) if want_t else np.empty_like(y[:0])
        fgxt = gxt.ravel()
        fyt = yt.ravel()
        fat = at.ravel()
        for i in range(fy.size):
            v = fy[i]
            s = 1.0 - v * v
            fgx[i] = fa[i] * s
            if want_t:
                acc = 0.0
                if has_at:
                    acc += fat[i] * s
                if has_yt:
                    acc += -2.0 * fa[i] * v * fyt[i]
                fgxt[i] = acc
        return gx, gxt

    @numba.njit(cache=True)
    def _nb_xent_fwd_kernel(z, labels, zt, has_t):
        b, k = z.shape
        p = np.empty_like(z)
        total = 0.0
        total_t = 0.0
        for i in range(b):
            m = z[i, 0]
            for j in range(1, k):
                if z[i, j] > m:
                    m = z[i, j]
            s = 0.0
            for j in range(k):
                e = np.exp(z[i, j] - m)
                p[i, j] = e
                s += e
            for j in range(k):
                p[i, j] /= s
            total += np.log(s) + m - z[i, labels[i]]
            if has_t:
                acc = 0.0
                for j in range(k):
                    acc += p[i, j] * zt[i, j]
                total_t += acc - zt[i, labels[i]]
        return total / b, p, total_t / b

    @numba.njit(cache=True)
    def _nb_xent_bwd_kernel(p, zt, labels, a, at, has_zt, has_at):
        b, k = p.shape
        g = np.empty_like(p)
        want_t = has_zt or has_at
        gt = np.empty_like(p) if want_t else np.empty_like(p[:0])
        for i in range(b):
            pz = 0.0
            if has_zt:
                for j in range(k):
                    pz += p[i, j] * zt[i, j]
            for j in range(k):
                r = p[i, j]
                if j == labels[i]:
                    r -= 1.0
                r /= b
                g[i, j] = a * r
                if want_t:
                    acc = 0.0
                    if has_at:
                        acc += at * r
                    if has_zt:
                        acc += a * (p[i, j] * (zt[i, j] - pz) / b)
                    gt[i, j] = acc
        return g, gt

    @numba.njit(cache=True)
    def _nb_count_extrema_kernel(values, rtol):
        n, m = values.shape
        minima = np.zeros(n, dtype=np.int64)
        maxima = np.zeros(n, dtype=np.int64)
        for i in range(n):
            big = 1.0
            for j in range(m):
                if abs(values[i, j]) > big:
                    big = abs(values[i, j])
            tol = rtol * big
            prev = 0
            for j in range(m - 1):
                d = values[i, j + 1] - values[i, j]
                s = 1 if d > tol else (-1 if d < -tol else 0)
                if s == 0:
                    continue
                if prev < 0 and s > 0:
                    minima[i] += 1
                elif prev > 0 and s < 0:
                    maxima[i] += 1
                prev = s
        return minima, maxima

    def _nb_count_extrema(values, rtol=1e-12):
        values = np.ascontiguousarray(values, dtype=np.float64)
        return _nb_count_extrema_kernel(values, rtol)

    def _nb_tanh_fwd(x, xt):
        x = np.ascontiguousarray(x, dtype=np.float64)
        has_t = xt is not None
        xt_arr = np.ascontiguousarray(xt, dtype=np.float64) if has_t else x
        y, yt = _nb_tanh_fwd_kernel(x, xt_arr, has_t)
        return y, (yt if has_t else None)

    def _nb_tanh_bwd(y, yt, a, at):
        y = np.ascontiguousarray(y, dtype=np.float64)
        a = np.ascontiguousarray(np.broadcast_to(a, y.shape), dtype=np.float64)
        has_yt = yt is not None
        has_at = at is not None
        yt_arr = np.ascontiguousarray(yt, dtype=np.float64) if has_yt else y
        at_arr = (
            np.ascontiguousarray(np.broadcast_to(at, y.shape), dtype=np.float64)
            if has_at
            else y
        )
        gx, gxt = _nb_tanh_bwd_kernel(y, yt_arr, a, at_arr, has_yt, has_at)
        return gx, (gxt if (has_yt or has_at) else None)

    def _nb_xent_fwd(z, labels, zt):
        z = np.ascontiguousarray(z, dtype=np.float64)
        labels = np.ascontiguousarray(labels, dtype=np.int64)
        has_t = zt is not None
        zt_arr = np.ascontiguousarray(zt, dtype=np.float64) if has_t else _EMPTY2
        loss, p, loss_t = _nb_xent_fwd_kernel(z, labels, zt_arr, has_t)
        return loss, p, (loss_t if has_t else None)

    def _nb_xent_bwd(p, zt, labels, a, at):
        labels = np.ascontiguousarray(labels, dtype=np.int64)
        has_zt = zt is not None
        has_at = at is not None
        zt_arr = np.ascontiguousarray(zt, dtype=np.float64) if has_zt else _EMPTY2
        g, gt = _nb_xent_bwd_kernel(
            p, zt_arr, labels, float(a), float(at) if has_at else 0.0, has_zt, has_at
        )
        return g, (gt if (has_zt or has_at) else None)


if USE_NUMBA:
    tanh_fwd = _nb_tanh_fwd
    tanh_bwd = _nb_tanh_bwd
    xent_fwd = _nb_xent_fwd
    xent_bwd = _nb_xent_bwd
    count_extrema = _nb_count_extrema
else:
    tanh_fwd = _np_tanh_fwd
    tanh_bwd = _np_tanh_bwd
    xent_fwd = _np_xent_fwd
    xent_bwd = _np_xent_bwd
    count_extrema = _np_count_extrema


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
