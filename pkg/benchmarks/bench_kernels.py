"""Compare the numba kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]

Both backends are imported side by side from ``gamopt._accel``, so the
``GAMOPT_NUMBA`` flag does not matter here. The last section times a full
Hessian-vector product on an MLP with each backend active (subprocess per
backend, since the flag is read at import).
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from gamopt import _accel

HVP_SNIPPET = """
import timeit, numpy as np
from gamopt.models import MlpSpec, mlp_loss, init_params, Batch
from gamopt.data import two_moons
spec = MlpSpec((2, 64, 64, 2))
loss = mlp_loss(spec)
x, y = two_moons(1000, 0.1, 0)
b = Batch(x, y)
p = init_params(spec)
v = np.random.default_rng(0).standard_normal(p.size)
loss.hvp(p, v, b)
n = {repeat}
print(min(timeit.repeat(lambda: loss.hvp(p, v, b), number=n, repeat=3)) / n * 1e3)
"""


def bench(fn, repeat):
    fn()  # compile / warm up
    return min(timeit.repeat(fn, number=repeat, repeat=5)) / repeat * 1e3


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args()
    if not _accel.HAS_NUMBA:
        sys.exit("numba is not installed")

    rng = np.random.default_rng(0)
    x = rng.standard_normal((1000, 64))
    xt = rng.standard_normal((1000, 64))
    a = rng.standard_normal((1000, 64))
    z = rng.standard_normal((1000, 10))
    zt = rng.standard_normal((1000, 10))
    labels = rng.integers(0, 10, 1000)
    rows = rng.standard_normal((100, 11))
    y, yt = _accel._np_tanh_fwd(x, xt)
    _, p, _ = _accel._np_xent_fwd(z, labels, zt)

    def k(prefix, name):
        return getattr(_accel, f"_{prefix}_{name}")

    cases = [
        ("tanh_fwd", lambda pre: k(pre, "tanh_fwd")(x, xt)),
        ("tanh_bwd", lambda pre: k(pre, "tanh_bwd")(y, yt, a, None)),
        ("xent_fwd", lambda pre: k(pre, "xent_fwd")(z, labels, zt)),
        ("xent_bwd", lambda pre: k(pre, "xent_bwd")(p, zt, labels, 1.0, None)),
        ("count_extrema", lambda pre: k(pre, "count_extrema")(rows)),
    ]
    print(f"{'kernel':<16}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, call in cases:
        t_np = bench(lambda: call("np"), args.repeat)
        t_nb = bench(lambda: call("nb"), args.repeat)
        print(f"{name:<16}{t_np:>12.4f}{t_nb:>12.4f}{t_np / t_nb:>9.2f}x")

    print("\nfull MLP hvp (2-64-64-2, batch 1000)")
    for flag in ("0", "1"):
        env = dict(os.environ, GAMOPT_NUMBA=flag)
        out = subprocess.run(
            [sys.executable, "-c", HVP_SNIPPET.format(repeat=max(args.repeat // 5, 1))],
            env=env, capture_output=True, text=True, check=True,
        )
        label = "numba" if flag == "1" else "numpy"
        print(f"  {label:<8}{float(out.stdout):.3f} ms")


if __name__ == "__main__":
    main()
