"""Command-line entry point: ``gamopt {run,sweep,diagnose,census,slice}``."""

import argparse
import sys

from . import harness
from .config import load_config
from .errors import ConfigError, DataError


def _parser():
    p = argparse.ArgumentParser(prog="gamopt", description="Flatness-regularized training experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(name, help):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("config", help="JSON run configuration")
        sp.add_argument("--out", help="output directory (default: config output_dir)")
        return sp

    common("run", "train and write metrics, reports and a manifest")
    sp = common("sweep", "grid over rho x alpha")
    sp.add_argument("--rho", type=float, nargs="+", help="rho values (default: built-in grid)")
    sp.add_argument("--alpha", type=float, nargs="+", help="alpha values (default: built-in grid)")
    sp.add_argument("--workers", type=int, default=1)
    sp = common("diagnose", "flatness report at a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp = common("census", "minima/maxima census along random rays")
    sp.add_argument("--checkpoint")
    sp = common("slice", "1-D or 2-D loss slice")
    sp.add_argument("--dim", type=int, choices=(1, 2), default=1)
    sp.add_argument("--checkpoint")
    return p


def _dispatch(args):
    config = load_config(args.config)
    if args.command == "run":
        outcome = harness.run(config, args.out)
        if outcome.result.diverged:
            print(f"diverged: {outcome.result.divergence}", file=sys.stderr)
        else:
            last = outcome.result.metrics[-1]
            print(f"epoch {last.epoch}: train_loss={last.train_loss:.6g} test_acc={last.test_acc}")
        return outcome.exit_code
    if args.command == "sweep":
        rows = harness.sweep(config, args.rho, args.alpha, args.out, args.workers)
        for r in rows:
            print(f"cell {r['cell']:3d} rho={r['rho']:g} alpha={r['alpha']:g} {r['status']}")
        return harness.EXIT_OK
    if args.command == "diagnose":
        rep = harness.diagnose(config, args.checkpoint, args.out)
        print(f"r0={rep.r0_hat:.6g} r1={rep.r1_hat:.6g} lambda_max={rep.lambda_topk[0]:.6g}")
        return harness.EXIT_OK
    if args.command == "census":
        c = harness.census(config, args.checkpoint, args.out)
        for (mn, mx), n in c.histogram.items():
            print(f"minima={mn} maxima={mx} count={n}")
        return harness.EXIT_OK
    harness.slice_run(config, args.dim, args.checkpoint, args.out)
    return harness.EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return harness.EXIT_CONFIG
    except (OSError, DataError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return harness.EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
