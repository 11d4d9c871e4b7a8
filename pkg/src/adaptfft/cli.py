"""Command line entry point: ``adaptfft verify|volume|bench|tune``."""
from __future__ import annotations

import argparse
import logging
import sys

from . import harness
from .errors import CommError, RankFailure, UnsupportedScaleError
from .grid import GridDims


def _np_list(text):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("rank counts must be positive")
    return vals


def _dims(text):
    try:
        return GridDims.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--dims", type=_dims, default=GridDims(8, 8, 8), help="grid as N1xN2xN3 (default 8x8x8)")
    common.add_argument("--np", dest="nprocs", type=_np_list, default=None,
                        help="rank count, or a comma-separated sweep")
    common.add_argument("--method", default=None,
                        help="all | auto | default | waitall | alltoallv | waitall-block | waitsome | "
                             "waitsome-block | sendrecv | user-select:NAME (comma-separated list allowed)")
    common.add_argument("--user-select", default=None, metavar="NAME",
                        help="shorthand for --method user-select:NAME")
    common.add_argument("--transport", choices=("threads", "sockets"), default="threads")
    common.add_argument("--ranks-file", default=None, help="'rank host:port' lines for the socket transport")
    common.add_argument("--rank", type=int, default=None,
                        help="with sockets: run only this rank in this process")
    common.add_argument("--repeats", type=int, default=10)
    common.add_argument("--tune-reps", type=int, default=2)
    common.add_argument("--b-size", type=int, default=32, help="peers per block for the block methods")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--format", dest="fmt", choices=("csv", "json"), default="csv")
    common.add_argument("--out", default=None, help="write the table here instead of stdout")
    common.add_argument("--tolerance", type=float, default=harness.DEFAULT_TOLERANCE)
    common.add_argument("--oracle-cap", type=int, default=harness.DEFAULT_CAP)
    common.add_argument("--completion-order", choices=("reverse", "shuffle"), default=None,
                        help="force wait_some completion order (testing)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="adaptfft", description="Distributed 3-D FFT driver")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("verify", parents=[common], help="compare against the brute-force 3-D DFT")
    sub.add_parser("volume", parents=[common], help="plan-derived vs measured communication volume")
    sub.add_parser("bench", parents=[common], help="timing breakdown per method")
    sub.add_parser("tune", parents=[common], help="run auto-tuning and report per-method medians")
    return parser


_DEFAULT_NP = {"verify": [4], "volume": [1, 2, 4, 8, 16, 32], "bench": [4], "tune": [4]}


def config_from_args(args) -> harness.BenchConfig:
    method = args.method
    if args.user_select:
        method = f"user-select:{args.user_select}"
    if method is None:
        method = "all"
    nprocs = args.nprocs or _DEFAULT_NP[args.command]
    return harness.BenchConfig(
        dims=args.dims, nprocs=nprocs, method=method, transport=args.transport,
        ranks_file=args.ranks_file, rank=args.rank, repeats=args.repeats, tune_reps=args.tune_reps,
        seed=args.seed, fmt=args.fmt, out=args.out, b_size=args.b_size, tolerance=args.tolerance,
        oracle_cap=args.oracle_cap, completion_order=args.completion_order,
    )


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        if args.command == "volume" and args.nprocs is None:
            from .decomposition import is_supported

            cfg.nprocs = [n for n in cfg.nprocs if is_supported(cfg.dims, n)]
        ok = True
        if args.command == "verify":
            rows, ok = harness.cmd_verify(cfg)
        elif args.command == "volume":
            rows, ok = harness.cmd_volume(cfg)
        elif args.command == "bench":
            rows = harness.cmd_bench(cfg)
        else:
            rows = harness.cmd_tune(cfg)
    except (ValueError, UnsupportedScaleError) as exc:
        print(f"adaptfft: error: {exc}", file=sys.stderr)
        return 2
    except (CommError, RankFailure) as exc:
        print(f"adaptfft: communication failure: {exc}", file=sys.stderr)
        return 3

    text = harness.render(rows, args.command, cfg)
    if cfg.out:
        with open(cfg.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if args.command in ("verify", "volume"):
        print("PASS" if ok else "FAIL", file=sys.stderr)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
