"""Batched 3D sparse matrix multiply on the simulated rank world.

The multiply runs as nested movements. Inside each layer, a q-stage
schedule broadcasts row pieces of A and column pieces of B, multiplies
them locally, and stacks the stage products into a pile that is merged
once per layer. Layers then exchange column shares of their merged
partials along the fiber and merge again, completing the reduction over
the inner dimension. Batching cuts each rank's local B into
block-cyclic column pieces and runs the whole schedule once per piece,
which shrinks the live result pile at the price of re-broadcasting A.

A structure-only symbolic pass runs the same stage schedule without
values to measure, per rank, how large the unbatched pile would get.
Its maxima feed the batch planner, which picks the smallest batch count
whose per-rank working set fits a memory budget. A run given a budget
also enforces it: every rank checks its live words at fixed checkpoints
and raises if the budget is ever exceeded, so a plan is backed by an
actual guarantee rather than an estimate.

Accounting conventions worth knowing before reading the code:

* Broadcast words are counted at the root, so per batch the A traffic
  sums to exactly nnz(A) * (q - 1) and the B traffic, being split into
  disjoint pieces, sums to nnz(B) * (q - 1) across all batches no
  matter the batch count.
* The memory checkpoints charge a rank for its own operands plus the
  live intermediate (stage pile, merged layer partial, fiber exchange,
  merged batch). Transient broadcast buffers and the concatenation of
  already finished batches are not charged; the former models streamed
  stage operands, the latter is the consumer's property.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .errors import (
    BadParams,
    DimMismatch,
    InsufficientMemory,
    MemoryBudgetExceeded,
    ZeroBatches,
)
from .grid import (
    DistMatrix,
    batch_piece_blocks,
    batch_split_b,
    distribute_a,
    distribute_b,
    make_grid,
)
from .kernels import (
    finalize_sort,
    hash_merge_unsorted,
    hash_spgemm_unsorted,
    heap_merge_sorted,
    heap_spgemm_sorted,
    local_symbolic,
)
from .runtime import (
    DEFAULT_RECORD_BYTES,
    PHASE_A_BCAST,
    PHASE_B_BCAST,
    PHASE_FIBER,
    PHASE_SYM_A,
    PHASE_SYM_B,
    CommStats,
    RankContext,
    spawn_ranks,
)
from .semiring import Semiring, infer_semiring
from .sparse import SparseMat, col_concat, col_split_at, from_coo, transpose

KERNELS = ("hash", "heap")


# ---------------------------------------------------------------------------
# batch planning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BatchPlan:
    """How many batches to run and what the planner knew when it chose.

    ``max_nnz_c`` is the largest per-rank unbatched result pile (sum of
    unmerged stage products over all stages), ``max_nnz_a`` and
    ``max_nnz_b`` the largest per-rank operand blocks; all three are
    None when the plan was fixed by hand. ``per_rank_budget_words`` is
    the enforced working-set bound in nonzero records, None when the
    run is unconstrained.
    """

    b: int
    max_nnz_c: int | None = None
    max_nnz_a: int | None = None
    max_nnz_b: int | None = None
    per_rank_budget_words: int | None = None
    source: str = "fixed"


def plan_batches(max_nnz_c: int, max_nnz_a: int, max_nnz_b: int,
                 budget_words: int, headroom: float = 1.0) -> int:
    """Smallest batch count whose working set fits ``budget_words``.

    The budget must hold both operand blocks with room to spare; the
    leftover takes one batch worth of result pile, so the pile is cut
    into ceil(max_nnz_c / leftover) pieces. ``headroom`` inflates the
    pile estimate to absorb imbalance between batches.
    """
    room = budget_words - (max_nnz_a + max_nnz_b)
    if room <= 0:
        raise InsufficientMemory(
            f"operands need {max_nnz_a + max_nnz_b} words per rank but the "
            f"budget is {budget_words}; no batch count can help")
    need = math.ceil(max_nnz_c * headroom)
    return max(1, -(-need // room))


# ---------------------------------------------------------------------------
# symbolic pass
# ---------------------------------------------------------------------------

@dataclass
class SymbolicReport:
    """World maxima from the structure-only pass, plus its traffic."""

    grid: Any
    max_nnz_c: int
    max_nnz_a: int
    max_nnz_b: int
    rank_symbolic: tuple[int, ...]     # per-rank unbatched pile size
    stats: CommStats
    rank_stats: tuple[CommStats, ...]


def run_symbolic(da: DistMatrix, db: DistMatrix,
                 jitter_seed: int | None = None) -> SymbolicReport:
    """Run the stage schedule on structure only and reduce the maxima.

    Each rank adds up the distinct output positions its stage products
    would hold (exactly the unbatched pile size, since the numeric
    kernels keep zero-valued accumulations), then three max-reductions
    spread the worst pile, operand A block, and operand B block to
    everyone.
    """
    _check_pair(da, db)

    def program(ctx: RankContext):
        a_loc = da.local(ctx.rank)
        b_loc = db.local(ctx.rank)
        row, col = ctx.row_comm(), ctx.col_comm()
        total = 0
        for s in range(ctx.grid.q):
            a_s = ctx.bcast(row, row.members[s],
                            a_loc if ctx.coord.j == s else None, PHASE_SYM_A)
            b_s = ctx.bcast(col, col.members[s],
                            b_loc if ctx.coord.i == s else None, PHASE_SYM_B)
            total += local_symbolic(a_s, b_s)
        world = ctx.world_comm()
        max_c = ctx.allreduce_max(world, total)
        max_a = ctx.allreduce_max(world, a_loc.nnz)
        max_b = ctx.allreduce_max(world, b_loc.nnz)
        return total, max_c, max_a, max_b

    run = spawn_ranks(da.grid, program, jitter_seed=jitter_seed)
    totals = tuple(r[0] for r in run.results)
    max_c, max_a, max_b = run.results[0][1:]
    return SymbolicReport(grid=da.grid, max_nnz_c=max_c, max_nnz_a=max_a,
                          max_nnz_b=max_b, rank_symbolic=totals,
                          stats=run.stats, rank_stats=run.rank_stats)


def plan_from_symbolic(sym: SymbolicReport, memory: int | None = None,
                       record_bytes: int = DEFAULT_RECORD_BYTES,
                       headroom: float = 1.0) -> BatchPlan:
    """Turn symbolic maxima and a total memory budget into a plan.

    ``memory`` is the aggregate budget in bytes across all ranks; each
    rank gets an equal share, measured in nonzero records. With no
    budget the plan is a single batch.
    """
    if memory is None:
        return BatchPlan(b=1, max_nnz_c=sym.max_nnz_c, max_nnz_a=sym.max_nnz_a,
                         max_nnz_b=sym.max_nnz_b, source="auto")
    budget = (memory // sym.grid.p) // record_bytes
    b = plan_batches(sym.max_nnz_c, sym.max_nnz_a, sym.max_nnz_b,
                     budget, headroom)
    return BatchPlan(b=b, max_nnz_c=sym.max_nnz_c, max_nnz_a=sym.max_nnz_a,
                     max_nnz_b=sym.max_nnz_b, per_rank_budget_words=budget,
                     source="auto")


# ---------------------------------------------------------------------------
# numeric pass
# ---------------------------------------------------------------------------

class _MemTracker:
    """Live-words checkpoints against a per-rank budget, tracking the peak."""

    __slots__ = ("rank", "base", "budget", "hwm")

    def __init__(self, rank: int, base_words: int, budget_words: int | None):
        self.rank = rank
        self.base = base_words
        self.budget = budget_words
        self.hwm = base_words

    def check(self, live_words: int, where: str) -> None:
        total = self.base + live_words
        if total > self.hwm:
            self.hwm = total
        if self.budget is not None and total > self.budget:
            raise MemoryBudgetExceeded(
                f"rank {self.rank}: {total} words live at {where}, "
                f"budget {self.budget}")


@dataclass(frozen=True)
class BatchPiece:
    """One rank's finished share of one batch, in global coordinates."""

    rank: int
    row_start: int
    col_ids: np.ndarray
    mat: SparseMat


@dataclass(frozen=True)
class BatchView:
    """Everything the world produced for one batch, handed to a consumer."""

    batch: int
    pieces: tuple[BatchPiece, ...]


def _rendezvous(ctx: RankContext, batch: int, mat: SparseMat,
                col_ids: np.ndarray, row_start: int,
                consumer: Callable[[BatchView], None]) -> None:
    with ctx.world.scratch_lock:
        ctx.world.scratch[ctx.rank] = BatchPiece(ctx.rank, row_start,
                                                 col_ids, mat)
    ctx.barrier()
    if ctx.rank == 0:
        pieces = tuple(ctx.world.scratch[r] for r in range(ctx.grid.p))
        consumer(BatchView(batch=batch, pieces=pieces))
        ctx.world.scratch.clear()
    ctx.barrier()


def _check_pair(da: DistMatrix, db: DistMatrix) -> None:
    if da.role != "A" or db.role != "B":
        raise BadParams(f"need an A-side and a B-side operand, "
                        f"got roles {da.role!r} and {db.role!r}")
    if da.grid != db.grid:
        raise BadParams("operands live on different grids")
    if da.ncols != db.nrows:
        raise DimMismatch(f"inner dimensions {da.ncols} and {db.nrows}")


def _numeric_program(da: DistMatrix, db: DistMatrix,
                     pieces: list[list[SparseMat]], sr: Semiring,
                     nbatches: int, budget_words: int | None, kernel: str,
                     consumer, keep: bool):
    if kernel == "hash":
        mul, mrg = hash_spgemm_unsorted, hash_merge_unsorted
    else:
        mul, mrg = heap_spgemm_sorted, heap_merge_sorted

    def program(ctx: RankContext):
        rank, g, me = ctx.rank, ctx.grid, ctx.coord
        a_loc = da.local(rank)
        b_loc = db.local(rank)
        row, col, fib = ctx.row_comm(), ctx.col_comm(), ctx.fiber_comm()
        tracker = _MemTracker(rank, a_loc.nnz + b_loc.nnz, budget_words)
        tracker.check(0, "inputs")
        row_start = da.row_range(rank).start
        col_start = db.col_range(rank).start
        kept_mats: list[SparseMat] = []
        kept_ids: list[np.ndarray] = []
        flops = 0
        sum_nnz_d = 0
        per_batch_pile: list[int] = []

        for t in range(nbatches):
            my_piece = pieces[rank][t]
            pile: list[SparseMat] = []
            pile_words = 0
            for s in range(g.q):
                with ctx.timed(PHASE_A_BCAST):
                    a_s = ctx.bcast(row, row.members[s],
                                    a_loc if me.j == s else None, PHASE_A_BCAST)
                with ctx.timed(PHASE_B_BCAST):
                    b_s = ctx.bcast(col, col.members[s],
                                    my_piece if me.i == s else None,
                                    PHASE_B_BCAST)
                with ctx.timed("Local-Multiply"):
                    prod = mul(a_s, b_s, sr)
                flops += int(a_s.column_counts()[b_s.row_idx].sum())
                pile.append(prod)
                pile_words += prod.nnz
                tracker.check(pile_words, f"stage {s} pile, batch {t}")
            per_batch_pile.append(pile_words)

            with ctx.timed("Merge-Layer"):
                d = mrg(pile, sr)
            del pile
            sum_nnz_d += d.nnz
            tracker.check(d.nnz, f"merged layer partial, batch {t}")

            shares_cols = batch_piece_blocks(b_loc.ncols, g.l, nbatches, t)
            shares = []
            off = 0
            for k in range(g.l):
                w = len(shares_cols[k])
                shares.append(col_split_at(d, np.arange(off, off + w)))
                off += w
            del d
            with ctx.timed(PHASE_FIBER):
                got = ctx.all_to_all(fib, shares, PHASE_FIBER)
            del shares
            tracker.check(sum(m.nnz for m in got), f"fiber exchange, batch {t}")

            with ctx.timed("Merge-Fiber"):
                c_batch = mrg(got, sr)
                if not c_batch.sorted:
                    c_batch = finalize_sort(c_batch, sr)
            del got
            tracker.check(c_batch.nnz, f"merged batch {t}")

            ids = col_start + shares_cols[me.k]
            if consumer is not None:
                _rendezvous(ctx, t, c_batch, ids, row_start, consumer)
            if keep:
                kept_mats.append(c_batch)
                kept_ids.append(ids)

        if keep:
            final = col_concat(kept_mats)
            final_ids = (np.concatenate(kept_ids) if kept_ids
                         else np.empty(0, dtype=np.int64))
        else:
            final, final_ids = None, None
        instr = {
            "flops": flops,
            "sum_nnz_d": sum_nnz_d,
            "pile_words_max_batch": max(per_batch_pile, default=0),
            "per_batch_pile": per_batch_pile,
            "hwm_words": tracker.hwm,
            "base_words": tracker.base,
        }
        return final, final_ids, instr

    return program


@dataclass
class MultiplyResult:
    """Distributed product plus everything measured while making it."""

    grid: Any
    sr: Semiring
    nrows: int
    ncols: int
    kernel: str
    record_bytes: int
    plan: BatchPlan
    stats: CommStats                       # symbolic + numeric, world totals
    rank_stats: tuple[CommStats, ...]      # numeric pass only
    phase_seconds: dict[str, float]
    symbolic: SymbolicReport | None
    row_starts: tuple[int, ...]
    col_ids: tuple[np.ndarray, ...] | None
    locals_: tuple[SparseMat, ...] | None
    instr: tuple[dict, ...]

    @property
    def b(self) -> int:
        return self.plan.b

    @property
    def total_flops(self) -> int:
        return sum(d["flops"] for d in self.instr)

    @property
    def total_nnz_d(self) -> int:
        return sum(d["sum_nnz_d"] for d in self.instr)

    @property
    def max_pile_words(self) -> int:
        return max(d["pile_words_max_batch"] for d in self.instr)

    @property
    def hwm_words(self) -> tuple[int, ...]:
        return tuple(d["hwm_words"] for d in self.instr)

    def gather(self) -> SparseMat:
        """Assemble the global product; ownership must be disjoint."""
        if self.locals_ is None:
            raise BadParams("result pieces were not kept (keep=False)")
        rows, cols, vals = [], [], []
        for rank, m in enumerate(self.locals_):
            rows.append(m.row_idx + self.row_starts[rank])
            cols.append(self.col_ids[rank][m.entry_cols()])
            vals.append(m.values)
        return from_coo(self.nrows, self.ncols,
                        np.concatenate(rows), np.concatenate(cols),
                        np.concatenate(vals), self.sr, on_duplicate="error")


def batched_summa3d(da: DistMatrix, db: DistMatrix,
                    sr: Semiring | None = None, *,
                    plan: int | str | BatchPlan = "auto",
                    memory: int | None = None,
                    record_bytes: int = DEFAULT_RECORD_BYTES,
                    kernel: str = "hash",
                    consumer: Callable[[BatchView], None] | None = None,
                    keep: bool = True,
                    headroom: float = 1.0,
                    jitter_seed: int | None = None) -> MultiplyResult:
    """Multiply two distributed operands batch by batch.

    ``plan`` is "auto" (run the symbolic pass, then fit the batch count
    to ``memory``), a positive int (fixed batch count, no symbolic
    pass), or a ready-made BatchPlan. ``memory`` is the aggregate
    byte budget across ranks; when given, every rank enforces its share
    at runtime no matter where the plan came from. A ``consumer`` is
    called once per batch, in batch order, with the whole world's
    finished pieces; with ``keep=False`` those calls are the only
    output and nothing is retained.

    Failures inside rank programs surface as RankPanic with the
    original exception as the cause, MemoryBudgetExceeded included.
    """
    _check_pair(da, db)
    if kernel not in KERNELS:
        raise BadParams(f"unknown kernel {kernel!r}, pick from {KERNELS}")
    if sr is None:
        sr = infer_semiring(da.local(0).values)
    if not keep and consumer is None:
        raise BadParams("keep=False without a consumer would discard "
                        "the product entirely")

    symbolic = None
    if isinstance(plan, BatchPlan):
        if plan.b < 1:
            raise ZeroBatches(f"batch count must be positive, got {plan.b}")
        bplan = plan
    elif plan == "auto":
        symbolic = run_symbolic(da, db, jitter_seed=jitter_seed)
        bplan = plan_from_symbolic(symbolic, memory=memory,
                                   record_bytes=record_bytes,
                                   headroom=headroom)
    elif isinstance(plan, int):
        if plan < 1:
            raise ZeroBatches(f"batch count must be positive, got {plan}")
        bplan = BatchPlan(b=plan, source="fixed")
    else:
        raise BadParams(f"plan must be 'auto', an int, or a BatchPlan, "
                        f"got {plan!r}")

    budget_words = None
    if memory is not None:
        budget_words = (memory // da.grid.p) // record_bytes

    pieces = batch_split_b(db, bplan.b)
    program = _numeric_program(da, db, pieces, sr, bplan.b, budget_words,
                               kernel, consumer, keep)
    run = spawn_ranks(da.grid, program, jitter_seed=jitter_seed)

    stats = CommStats()
    if symbolic is not None:
        stats.merge(symbolic.stats)
    stats.merge(run.stats)
    keep_out = run.results[0][0] is not None
    return MultiplyResult(
        grid=da.grid, sr=sr, nrows=da.nrows, ncols=db.ncols, kernel=kernel,
        record_bytes=record_bytes, plan=bplan, stats=stats,
        rank_stats=run.rank_stats, phase_seconds=run.phase_seconds,
        symbolic=symbolic,
        row_starts=tuple(da.row_range(r).start for r in range(da.grid.p)),
        col_ids=tuple(r[1] for r in run.results) if keep_out else None,
        locals_=tuple(r[0] for r in run.results) if keep_out else None,
        instr=tuple(r[2] for r in run.results))


def summa2d(da: DistMatrix, db: DistMatrix, sr: Semiring | None = None,
            kernel: str = "hash",
            jitter_seed: int | None = None) -> MultiplyResult:
    """Single-layer multiply: the one-batch special case on an l=1 grid."""
    if da.grid.l != 1:
        raise BadParams(f"summa2d needs a single-layer grid, got l={da.grid.l}")
    return batched_summa3d(da, db, sr, plan=1, kernel=kernel,
                           jitter_seed=jitter_seed)


# ---------------------------------------------------------------------------
# whole-matrix convenience and a streaming consumer
# ---------------------------------------------------------------------------

def multiply(a: SparseMat, b: SparseMat, procs: int, layers: int,
             sr: Semiring | None = None, *,
             batches: int | str | BatchPlan = "auto",
             memory: int | None = None,
             record_bytes: int = DEFAULT_RECORD_BYTES,
             kernel: str = "hash",
             consumer: Callable[[BatchView], None] | None = None,
             keep: bool = True,
             batch_rows: bool = False,
             headroom: float = 1.0,
             jitter_seed: int | None = None):
    """Distribute, multiply, and gather; returns (product, MultiplyResult).

    With ``batch_rows=True`` the batching dimension switches from
    columns of B to rows of A by running the transposed problem, so a
    consumer then streams pieces of the transposed product. The
    gathered product is transposed back before returning.
    """
    if batch_rows:
        ct, res = multiply(transpose(b, sr), transpose(a, sr), procs, layers,
                           sr, batches=batches, memory=memory,
                           record_bytes=record_bytes, kernel=kernel,
                           consumer=consumer, keep=keep, batch_rows=False,
                           headroom=headroom, jitter_seed=jitter_seed)
        return (transpose(ct, sr) if ct is not None else None), res
    grid = make_grid(procs, layers)
    if sr is None:
        sr = infer_semiring(a.values)
    da = distribute_a(a, grid)
    db = distribute_b(b, grid)
    res = batched_summa3d(da, db, sr, plan=batches, memory=memory,
                          record_bytes=record_bytes, kernel=kernel,
                          consumer=consumer, keep=keep, headroom=headroom,
                          jitter_seed=jitter_seed)
    c = res.gather() if keep else None
    return c, res


class TopKCollector:
    """Streaming consumer that keeps the k largest entries per column.

    A batch carries every surviving entry of the columns it covers (one
    piece per row block), so each column can be pruned exactly within
    its batch and never revisited. Magnitude decides what stays; ties
    go to the smaller row index so a rerun keeps the same entries.
    """

    def __init__(self, k: int, nrows: int, ncols: int, sr: Semiring):
        if k < 1:
            raise BadParams(f"k must be positive, got {k}")
        self.k = k
        self.nrows = nrows
        self.ncols = ncols
        self.sr = sr
        self._rows: list[np.ndarray] = []
        self._cols: list[np.ndarray] = []
        self._vals: list[np.ndarray] = []

    def __call__(self, view: BatchView) -> None:
        # pool each global column across the row-block pieces first
        pools: dict[int, tuple[list, list]] = {}
        for piece in view.pieces:
            m = piece.mat
            for j in range(m.ncols):
                lo, hi = int(m.col_ptr[j]), int(m.col_ptr[j + 1])
                if lo == hi:
                    continue
                rows_l, vals_l = pools.setdefault(int(piece.col_ids[j]),
                                                  ([], []))
                rows_l.append(m.row_idx[lo:hi] + piece.row_start)
                vals_l.append(m.values[lo:hi])
        for col in sorted(pools):
            rows_l, vals_l = pools[col]
            rows = np.concatenate(rows_l)
            vals = np.concatenate(vals_l)
            if len(rows) > self.k:
                ranked = sorted(range(len(rows)),
                                key=lambda i: (-abs(vals[i]), rows[i]))
                order = np.asarray(ranked[:self.k], dtype=np.int64)
                rows, vals = rows[order], vals[order]
            self._rows.append(rows)
            self._cols.append(np.full(len(rows), col, dtype=np.int64))
            self._vals.append(vals)

    def matrix(self) -> SparseMat:
        if not self._rows:
            return from_coo(self.nrows, self.ncols, [], [],
                            self.sr.empty_values(), self.sr)
        return from_coo(self.nrows, self.ncols,
                        np.concatenate(self._rows), np.concatenate(self._cols),
                        np.concatenate(self._vals), self.sr,
                        on_duplicate="error")
