"""Command-line entry point (``ecsgd``)."""

import argparse
import sys

from . import harness
from .errors import ConfigError


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser():
    p = argparse.ArgumentParser(prog="ecsgd", description="Simulate compressed parameter-server SGD.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config or preset")
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("config", nargs="?", help="path to a YAML config")
    src.add_argument("--preset", help="name of a shipped preset (see 'ecsgd presets')")
    run.add_argument("--algorithm", choices=["doublesqueeze", "memsgd", "qsgd", "topk_sgd", "vanilla"])
    run.add_argument("--workers", type=int)
    run.add_argument("--iterations", type=int)
    run.add_argument("--lr", type=float, help="constant step size")
    run.add_argument("--seed", type=int)
    run.add_argument("--parallel-workers", type=int, help="threads for per-worker gradients")
    run.add_argument("--out-dir")
    checks = run.add_mutually_exclusive_group()
    checks.add_argument("--checks", dest="checks", action="store_true", default=None)
    checks.add_argument("--no-checks", dest="checks", action="store_false")
    run.add_argument("--bandwidth-sweep", type=_float_list, help="comma-separated server bandwidths (bits/s)")

    pre = sub.add_parser("presets", help="list presets, or print one")
    pre.add_argument("name", nargs="?")
    return p


def _overrides(args):
    out = {}
    for flag, key in (
        ("algorithm", "algorithm"),
        ("workers", "workers"),
        ("iterations", "iterations"),
        ("seed", "seed"),
        ("parallel_workers", "parallel_workers"),
    ):
        v = getattr(args, flag)
        if v is not None:
            out[key] = v
    if args.lr is not None:
        out["gamma"] = args.lr
    return out


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "presets":
        try:
            if args.name:
                sys.stdout.write(harness.preset_text(args.name))
            else:
                print("\n".join(harness.preset_names()))
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return harness.EXIT_CONFIG
        return harness.EXIT_OK

    try:
        text = harness.preset_text(args.preset) if args.preset else open(args.config).read()
        batch = harness.parse_config(text, _overrides(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return harness.EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return harness.EXIT_CONFIG
    if args.bandwidth_sweep:
        if any(b <= 0 for b in args.bandwidth_sweep):
            print("config error: bandwidths must be > 0", file=sys.stderr)
            return harness.EXIT_CONFIG
        batch.bandwidth_sweep = tuple(args.bandwidth_sweep)
    status = harness.run_batch(
        batch,
        out_dir=args.out_dir,
        checks=args.checks,
        log=lambda msg: print(msg, file=sys.stderr),
    )
    if status == harness.EXIT_OK:
        print(f"wrote results to {args.out_dir or batch.output_dir}")
    return status


if __name__ == "__main__":
    sys.exit(main())
