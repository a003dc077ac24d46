"""Command line front end.

Exit codes: 0 success, 1 usage or input errors, 2 infeasible memory
(planning or an enforced budget breach at run time), 3 verification
failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .bench import build_report, merge_timing, write_csv, write_json
from .costmodel import MachineParams, ProblemShape, sweep_plan
from .errors import (
    BadParams,
    InsufficientAggregateMemory,
    InsufficientMemory,
    MemoryBudgetExceeded,
    RankPanic,
    SpgemmError,
)
from .grid import distribute_a, distribute_b, make_grid
from .mmio import read_mm, write_mm
from .sparse import transpose
from .summa import TopKCollector, multiply, plan_from_symbolic, run_symbolic
from .synth import gen_er, gen_rmat
from .verify import oracle_sweep, report_json


class _Parser(argparse.ArgumentParser):
    """argparse, but usage errors exit 1 instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _batches_arg(text: str):
    if text == "auto":
        return "auto"
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected 'auto' or an integer, got {text!r}") from None


def _layers_list(text: str):
    try:
        return [int(t) for t in text.split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected comma-separated integers, got {text!r}") from None


def _add_matrix_inputs(cmd, required: bool = True):
    group = cmd.add_mutually_exclusive_group(required=required)
    group.add_argument("--a", metavar="FILE",
                       help="left operand (Matrix Market)")
    group.add_argument("--square", metavar="FILE",
                       help="use one matrix for both operands")
    group.add_argument("--aat", metavar="FILE",
                       help="multiply the matrix by its own transpose")
    cmd.add_argument("--b", metavar="FILE",
                     help="right operand (requires --a)")


def _add_grid_args(cmd):
    cmd.add_argument("--procs", type=int, required=True,
                     help="simulated rank count")
    cmd.add_argument("--layers", type=int, default=1,
                     help="grid layers (default 1)")


def _add_run_args(cmd):
    cmd.add_argument("--batches", type=_batches_arg, default="auto",
                     help="batch count or 'auto' (default)")
    cmd.add_argument("--memory", type=int, default=None,
                     help="aggregate memory budget in bytes")
    cmd.add_argument("--record-bytes", type=int, default=24,
                     help="bytes per nonzero record (default 24)")
    cmd.add_argument("--kernel", choices=("hash", "heap"), default="hash",
                     help="local multiply/merge kernel (default hash)")
    cmd.add_argument("--headroom", type=float, default=1.0,
                     help="safety factor on the planned pile size")
    cmd.add_argument("--threads", type=int, default=None,
                     help="kernel threads per rank (sets SPGEMM_THREADS)")


def _load_inputs(args):
    if args.b and not args.a:
        raise BadParams("--b only makes sense together with --a")
    if args.square:
        a, sr = read_mm(args.square)
        return a, a, sr
    if args.aat:
        a, sr = read_mm(args.aat)
        return a, transpose(a, sr), sr
    if not args.b:
        raise BadParams("--a needs a right operand via --b")
    a, sr_a = read_mm(args.a)
    b, sr_b = read_mm(args.b)
    if sr_a is not sr_b:
        raise BadParams(f"operand fields differ: {sr_a.name} vs {sr_b.name}")
    return a, b, sr_a


def _print_run_summary(res, c_nnz: int | None):
    grid = res.grid
    plan = res.plan
    print(f"grid: p={grid.p} layers={grid.l} stage-width q={grid.q}")
    budget = (f", budget {plan.per_rank_budget_words} words/rank"
              if plan.per_rank_budget_words is not None else "")
    print(f"plan: {plan.b} batch(es) ({plan.source}){budget}")
    d = res.stats.as_dict(res.record_bytes)
    for phase, row in d["phases"].items():
        print(f"  {phase}: {row['words']} words in {row['messages']} messages "
              f"({row['bytes']} bytes)")
    total = d["total"]
    print(f"  total: {total['words']} words, {total['bytes']} bytes")
    print(f"compute: {res.total_flops} multiplies, "
          f"{res.total_nnz_d} merged partial records")
    print(f"memory: peak {max(res.hwm_words)} words/rank")
    if c_nnz is not None:
        print(f"result: {res.nrows} x {res.ncols}, {c_nnz} nonzeros")


def cmd_multiply(args) -> int:
    a, b, sr = _load_inputs(args)
    collector = None
    if args.prune_topk:
        ncols = a.nrows if args.batch_rows else b.ncols
        nrows = b.ncols if args.batch_rows else a.nrows
        collector = TopKCollector(args.prune_topk, nrows, ncols, sr)
    c, res = multiply(a, b, args.procs, args.layers, sr,
                      batches=args.batches, memory=args.memory,
                      record_bytes=args.record_bytes, kernel=args.kernel,
                      consumer=collector, keep=collector is None,
                      batch_rows=args.batch_rows, headroom=args.headroom)
    if collector is not None:
        out_mat = collector.matrix()
        if args.batch_rows:
            out_mat = transpose(out_mat, sr)
    else:
        out_mat = c
    _print_run_summary(res, out_mat.nnz)
    if args.out:
        write_mm(args.out, out_mat, sr)
        print(f"wrote {args.out}")
    if args.report:
        write_json(build_report(res, a.nnz, b.nnz, out_mat.nnz), args.report)
        print(f"wrote {args.report}")
    return 0


def cmd_symbolic(args) -> int:
    a, b, sr = _load_inputs(args)
    grid = make_grid(args.procs, args.layers)
    sym = run_symbolic(distribute_a(a, grid), distribute_b(b, grid))
    print(f"grid: p={grid.p} layers={grid.l} stage-width q={grid.q}")
    print(f"largest per-rank pile: {sym.max_nnz_c} records")
    print(f"largest operand blocks: A {sym.max_nnz_a}, B {sym.max_nnz_b}")
    plan = plan_from_symbolic(sym, memory=args.memory,
                              record_bytes=args.record_bytes,
                              headroom=args.headroom)
    if args.memory is not None:
        print(f"plan: {plan.b} batch(es) for a budget of "
              f"{plan.per_rank_budget_words} words/rank")
    if args.report:
        write_json({
            "schema": "spgemm3d-symbolic-v1",
            "grid": {"p": grid.p, "layers": grid.l, "q": grid.q},
            "max_nnz_c": sym.max_nnz_c,
            "max_nnz_a": sym.max_nnz_a,
            "max_nnz_b": sym.max_nnz_b,
            "plan_batches": plan.b,
            "per_rank_budget_words": plan.per_rank_budget_words,
            "counters": sym.stats.as_dict(args.record_bytes),
        }, args.report)
        print(f"wrote {args.report}")
    return 0


def cmd_plan(args) -> int:
    machine = MachineParams(alpha=args.alpha, beta=args.beta, p=args.procs,
                            memory_bytes=args.memory,
                            record_bytes=args.record_bytes)
    shape = ProblemShape(nnz_a=args.nnz_a, nnz_b=args.nnz_b, flops=args.flops)
    rows = sweep_plan(shape, machine, args.layers)
    print(f"{'layers':>7} {'batches':>8} {'comm_s':>12} {'A-words':>12} "
          f"{'B-words':>12} {'fiber-words':>12}")
    for row in rows:
        ph = row.estimate.phases
        print(f"{row.layers:>7} {row.batches:>8} "
              f"{row.estimate.comm_seconds():>12.6g} "
              f"{ph['A-Bcast'].words:>12.6g} {ph['B-Bcast'].words:>12.6g} "
              f"{ph['AllToAll-Fiber'].words:>12.6g}")
    if args.report:
        write_json({
            "schema": "spgemm3d-plan-v1",
            "rows": [{
                "layers": row.layers,
                "batches": row.batches,
                "comm_seconds": row.estimate.comm_seconds(),
                "phases": {name: {"messages": c.messages, "words": c.words,
                                  "ops": c.ops}
                           for name, c in row.estimate.phases.items()},
            } for row in rows],
        }, args.report)
        print(f"wrote {args.report}")
    return 0


def cmd_bench(args) -> int:
    report = {"schema": "spgemm3d-bench-v1"}
    have_input = args.a or args.square or args.aat or args.er or args.rmat is not None
    if not have_input and not args.merge_timing:
        raise BadParams("bench needs an input (--a/--square/--aat/--er/--rmat) "
                        "or --merge-timing")
    if have_input:
        if args.er:
            n, density = int(args.er[0]), float(args.er[1])
            a = gen_er(n, n, density, seed=args.seed)
            b = gen_er(n, n, density, seed=args.seed + 1)
        elif args.rmat is not None:
            a = gen_rmat(args.rmat, edge_factor=args.edge_factor,
                         seed=args.seed)
            b = gen_rmat(args.rmat, edge_factor=args.edge_factor,
                         seed=args.seed + 1)
        else:
            a, b, _ = _load_inputs(args)
        c, res = multiply(a, b, args.procs, args.layers,
                          batches=args.batches, memory=args.memory,
                          record_bytes=args.record_bytes, kernel=args.kernel,
                          headroom=args.headroom)
        report.update(build_report(res, a.nnz, b.nnz, c.nnz))
        report["schema"] = "spgemm3d-bench-v1"
        _print_run_summary(res, c.nnz)
    if args.merge_timing:
        timing = merge_timing(scale=args.merge_scale, parts=args.merge_parts,
                              seed=args.seed)
        report["merge_timing"] = timing
        print(f"merge shootout ({timing['parts']} parts, "
              f"{timing['pile_nnz']} pile records): "
              f"hash {timing['hash_seconds']:.3f}s, "
              f"heap {timing['heap_seconds']:.3f}s, "
              f"agree={timing['agree']}")
    if args.report:
        write_json(report, args.report)
        print(f"wrote {args.report}")
    if args.csv:
        if "counters" not in report:
            raise BadParams("--csv needs a multiply run to tabulate")
        write_csv(report, args.csv)
        print(f"wrote {args.csv}")
    return 0


def cmd_verify(args) -> int:
    report = oracle_sweep(seed=args.seed, max_n=args.max_n)
    text = report_json(report)
    if args.out:
        Path(args.out).write_text(text, encoding="ascii")
        print(f"{report['checks']} checks, {len(report['failures'])} failures; "
              f"wrote {args.out}")
    else:
        sys.stdout.write(text)
        print(f"{report['checks']} checks, {len(report['failures'])} failures",
              file=sys.stderr)
    if report["failures"]:
        for failure in report["failures"][:20]:
            print(f"FAIL {failure}", file=sys.stderr)
        return 3
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="spgemm3d",
                     description="Batched 3D sparse matrix multiply on a "
                                 "simulated process grid.")
    sub = parser.add_subparsers(dest="command", required=True)

    m = sub.add_parser("multiply", help="multiply two matrices")
    _add_matrix_inputs(m)
    _add_grid_args(m)
    _add_run_args(m)
    m.add_argument("--batch-rows", action="store_true",
                   help="batch rows of A instead of columns of B")
    m.add_argument("--prune-topk", type=int, default=None, metavar="K",
                   help="stream the result through a top-K-per-column prune "
                        "(per row with --batch-rows)")
    m.add_argument("--out", metavar="FILE", help="write the product here")
    m.add_argument("--report", metavar="FILE", help="write a JSON report")
    m.set_defaults(func=cmd_multiply)

    s = sub.add_parser("symbolic", help="size the problem without values")
    _add_matrix_inputs(s)
    _add_grid_args(s)
    s.add_argument("--memory", type=int, default=None)
    s.add_argument("--record-bytes", type=int, default=24)
    s.add_argument("--headroom", type=float, default=1.0)
    s.add_argument("--report", metavar="FILE")
    s.set_defaults(func=cmd_symbolic)

    pl = sub.add_parser("plan", help="rank layer counts from closed forms")
    pl.add_argument("--nnz-a", type=int, required=True)
    pl.add_argument("--nnz-b", type=int, required=True)
    pl.add_argument("--flops", type=int, required=True)
    pl.add_argument("--procs", type=int, required=True)
    pl.add_argument("--memory", type=int, required=True)
    pl.add_argument("--record-bytes", type=int, default=24)
    pl.add_argument("--alpha", type=float, default=1e-6,
                    help="seconds per message (default 1e-6)")
    pl.add_argument("--beta", type=float, default=1e-9,
                    help="seconds per word (default 1e-9)")
    pl.add_argument("--layers", type=_layers_list, default=[1, 4, 16],
                    help="candidate layer counts, comma separated")
    pl.add_argument("--report", metavar="FILE")
    pl.set_defaults(func=cmd_plan)

    bn = sub.add_parser("bench", help="run and report one configuration")
    _add_matrix_inputs(bn, required=False)
    bn.add_argument("--er", nargs=2, metavar=("N", "DENSITY"),
                    help="synthetic uniform input")
    bn.add_argument("--rmat", type=int, default=None, metavar="SCALE",
                    help="synthetic power-law input")
    bn.add_argument("--edge-factor", type=int, default=16)
    bn.add_argument("--seed", type=int, default=1)
    _add_grid_args(bn)
    _add_run_args(bn)
    bn.add_argument("--merge-timing", action="store_true",
                    help="also time the two merge kernels on a pile")
    bn.add_argument("--merge-scale", type=int, default=12)
    bn.add_argument("--merge-parts", type=int, default=16)
    bn.add_argument("--report", metavar="FILE")
    bn.add_argument("--csv", metavar="FILE")
    bn.set_defaults(func=cmd_bench)

    v = sub.add_parser("verify", help="sweep against the dense oracle")
    v.add_argument("--seed", type=int, default=7)
    v.add_argument("--max-n", type=int, default=64)
    v.add_argument("--out", metavar="FILE",
                   help="write the JSON report here instead of stdout")
    v.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", None):
        os.environ["SPGEMM_THREADS"] = str(args.threads)
    try:
        return args.func(args)
    except (InsufficientMemory, InsufficientAggregateMemory) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RankPanic as exc:
        if isinstance(exc.cause, MemoryBudgetExceeded):
            print(f"error: {exc.cause}", file=sys.stderr)
            return 2
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SpgemmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
