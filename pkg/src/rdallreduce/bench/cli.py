"""``rdallreduce`` command line: model, simulate, sweep, estimate.

Exit codes: 0 success, 1 internal error, 2 invalid arguments, 3 deadlock or
protocol fault.
"""

from __future__ import annotations

import argparse
import sys

from ..errors import DeadlockError, InvalidArgument, ProtocolFault
from .config import build_spec
from .sweep import (ESTIMATE_COLUMNS, MODEL_COLUMNS, SWEEP_COLUMNS, Cell, estimate_rows,
                    model_rows, result_row, run_cell, run_sweep, to_csv)

EXIT_OK, EXIT_INTERNAL, EXIT_SPEC, EXIT_FAULT = 0, 1, 2, 3


def _add_common(p):
    p.add_argument("--config", help="INI-style config file; flags override it")
    p.add_argument("--out", help="write CSV here as well as to stdout")
    p.add_argument("--nodes", help="node count(s), comma separated")
    p.add_argument("--gpus-per-node", dest="gpus_per_node")
    p.add_argument("--msg-bytes", dest="msg_bytes", help="size(s), e.g. 64KiB,1MiB")
    p.add_argument("--algorithms", help="subset of ring,tree,nvrar")
    p.add_argument("--alpha-intra-us", dest="alpha_intra_us")
    p.add_argument("--alpha-inter-us", dest="alpha_inter_us")
    p.add_argument("--beta-intra", dest="beta_intra", help="bytes/s or inf")
    p.add_argument("--beta-inter", dest="beta_inter", help="bytes/s or inf")
    p.add_argument("--eta")


def _add_run(p):
    p.add_argument("--trace", help="per-delivery event log (simulate only)")
    p.add_argument("--transport", choices=["virtual", "concurrent"])
    p.add_argument("--seed")
    p.add_argument("--iters")
    p.add_argument("--warmup")
    p.add_argument("--blocks", help="NVRAR block count(s)")
    p.add_argument("--chunk-bytes", dest="chunk_bytes", help="NVRAR chunk size(s) or auto")
    p.add_argument("--bc-pairs", dest="bc_pairs", help="explicit B:C cells")
    p.add_argument("--max-delay-us", dest="max_delay_us",
                   help="concurrent transport: uniform random delay bound")
    p.add_argument("--dtype", choices=["int32", "float32"])
    p.add_argument("--baseline", choices=["ring", "tree", "nvrar"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rdallreduce", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("model", help="closed-form predictions per algorithm")
    _add_common(p)

    p = sub.add_parser("simulate", help="run one benchmark cell")
    _add_common(p)
    _add_run(p)

    p = sub.add_parser("sweep", help="run a grid of cells")
    _add_common(p)
    _add_run(p)
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    p = sub.add_parser("estimate", help="TP decode step time per algorithm")
    _add_common(p)
    p.add_argument("--batch-size", dest="batch_size")
    p.add_argument("--hidden-dim", dest="hidden_dim")
    p.add_argument("--elem", help="bf16, fp16 or fp32")
    p.add_argument("--layers", dest="num_layers")
    p.add_argument("--gemm-k", dest="gemm_k")
    p.add_argument("--tile-m", dest="tile_m")
    p.add_argument("--tile-n", dest="tile_n")
    p.add_argument("--tile-cost-ns", dest="tile_cost_ns")
    return parser


_NOT_SPEC = {"command", "config", "out", "trace", "jobs"}


def _emit(text, out):
    sys.stdout.write(text)
    if out:
        with open(out, "w", newline="\n") as fh:
            fh.write(text)


def _dispatch(args) -> int:
    flags = {k: v for k, v in vars(args).items() if k not in _NOT_SPEC}
    spec = build_spec(args.config, flags)
    if args.command == "model":
        _emit(to_csv(MODEL_COLUMNS, model_rows(spec)), args.out)
    elif args.command == "estimate":
        _emit(to_csv(ESTIMATE_COLUMNS, estimate_rows(spec)), args.out)
    elif args.command == "simulate":
        alg = spec.algorithms[0]
        blocks, chunk = spec.bc_grid()[0] if alg == "nvrar" else (None, None)
        cell = Cell(alg, spec.nodes[0], spec.msg_bytes[0], blocks, chunk)
        res = run_cell(spec, cell, trace_path=args.trace)
        _emit(to_csv(SWEEP_COLUMNS, [result_row(spec, res)]), args.out)
        if not res.correct:
            print("error: output mismatch against the serial-sum oracle", file=sys.stderr)
            return EXIT_FAULT
    else:
        _emit(to_csv(SWEEP_COLUMNS, run_sweep(spec, jobs=args.jobs)), args.out)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except InvalidArgument as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except (DeadlockError, ProtocolFault) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAULT
    except Exception as exc:  # noqa: BLE001 - mapped to the internal-error exit code
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
