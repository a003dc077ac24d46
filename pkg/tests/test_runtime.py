"""Simulated rank world: delivery, counting, panics, schedule fuzzing."""

from __future__ import annotations

import time

import numpy as np
import pytest

from spgemm3d.errors import InvalidRoot, PieceCountMismatch, RankPanic
from spgemm3d.grid import make_grid
from spgemm3d.runtime import (
    CommStats,
    RunResult,
    payload_words,
    spawn_ranks,
)
from spgemm3d.sparse import bit_identical, from_triples

from util import INT_SR, rand_mat


def test_results_keep_rank_order():
    g = make_grid(8, 2)
    out = spawn_ranks(g, lambda ctx: (ctx.rank, ctx.coord))
    assert isinstance(out, RunResult)
    for r, (rank, coord) in enumerate(out.results):
        assert rank == r
        assert coord == g.coord_of(r)


def test_communicator_membership_and_order():
    g = make_grid(16, 4)

    def probe(ctx):
        row = ctx.row_comm()
        col = ctx.col_comm()
        fib = ctx.fiber_comm()
        assert ctx.rank in row.members
        assert ctx.rank in col.members
        assert ctx.rank in fib.members
        assert [g.coord_of(r).j for r in row.members] == list(range(g.q))
        assert [g.coord_of(r).i for r in col.members] == list(range(g.q))
        assert [g.coord_of(r).k for r in fib.members] == list(range(g.l))
        assert ctx.world_comm().members == tuple(range(g.p))
        return row.key, col.key, fib.key

    out = spawn_ranks(g, probe)
    assert len(set(out.results)) == g.p   # each rank sees its own key triple


def test_payload_words():
    m = from_triples(4, 4, [(0, 0, 1), (2, 1, 5)], INT_SR)
    assert payload_words(m) == 2
    assert payload_words(7) == 1
    assert payload_words("tag") == 1


def test_row_bcast_delivery_and_root_side_counting():
    g = make_grid(4, 1)
    rng = np.random.default_rng(3)
    payload = rand_mat(rng, 5, 5, 0.3)
    assert payload.nnz > 0

    def program(ctx):
        comm = ctx.row_comm()
        root = comm.members[0]               # the j == 0 member of the row
        got = ctx.bcast(comm, root, payload if ctx.rank == root else None, "ping")
        assert bit_identical(got, payload)
        return ctx.rank

    out = spawn_ranks(g, program)
    roots = {0, 2}                           # coords (0,0) and (1,0)
    for rank, st in enumerate(out.rank_stats):
        if rank in roots:
            assert st.messages("ping") == 1
            assert st.words("ping") == payload.nnz
        else:
            assert st.total_messages == 0
    assert out.stats.messages("ping") == 2
    assert out.stats.words("ping") == 2 * payload.nnz


def test_world_bcast_scalar_words():
    g = make_grid(9, 1)

    def program(ctx):
        return ctx.bcast(ctx.world_comm(), 0, "go" if ctx.rank == 0 else None, "w")

    out = spawn_ranks(g, program)
    assert all(r == "go" for r in out.results)
    assert out.stats.messages("w") == 8
    assert out.stats.words("w") == 8


def test_bcast_rejects_foreign_root():
    g = make_grid(4, 1)

    def program(ctx):
        if ctx.rank == 0:
            ctx.bcast(ctx.row_comm(), 99, "x", "bad")
        return None

    with pytest.raises(RankPanic) as info:
        spawn_ranks(g, program)
    assert info.value.rank == 0
    assert isinstance(info.value.cause, InvalidRoot)


def test_all_to_all_routing_and_self_piece_free():
    g = make_grid(4, 4)                      # one fiber holding all ranks

    def program(ctx):
        comm = ctx.fiber_comm()
        pieces = [f"{ctx.rank}->{dst}" for dst in comm.members]
        got = ctx.all_to_all(comm, pieces, "x")
        assert got == [f"{src}->{ctx.rank}" for src in comm.members]
        return None

    out = spawn_ranks(g, program)
    for st in out.rank_stats:
        assert st.messages("x") == 3         # self piece moved no data
        assert st.words("x") == 3
    assert out.stats.words("x") == 12


def test_all_to_all_counts_matrix_words():
    g = make_grid(4, 4)
    rng = np.random.default_rng(11)
    mats = [rand_mat(rng, 6, 6, 0.4) for _ in range(4)]

    def program(ctx):
        comm = ctx.fiber_comm()
        got = ctx.all_to_all(comm, mats, "move")
        for src, m in zip(comm.members, got):
            assert bit_identical(m, mats[src]) or src != ctx.rank or m is mats[src]
        return None

    out = spawn_ranks(g, program)
    expected_per_rank = [sum(m.nnz for t, m in enumerate(mats) if t != me)
                         for me in range(4)]
    for me, st in enumerate(out.rank_stats):
        assert st.words("move") == expected_per_rank[me]


def test_all_to_all_piece_count_checked():
    g = make_grid(4, 4)

    def program(ctx):
        if ctx.rank == 2:
            ctx.all_to_all(ctx.fiber_comm(), ["a", "b"], "x")
        else:
            ctx.barrier()
        return None

    with pytest.raises(RankPanic) as info:
        spawn_ranks(g, program)
    assert info.value.rank == 2
    assert isinstance(info.value.cause, PieceCountMismatch)


def test_allreduce_max_value_and_charge():
    g = make_grid(9, 1)
    values = [(7 * r) % 5 for r in range(9)]

    def program(ctx):
        return ctx.allreduce_max(ctx.world_comm(), values[ctx.rank])

    out = spawn_ranks(g, program)
    assert set(out.results) == {max(values)}
    assert out.rank_stats[0].messages("AllReduce") == 16
    assert out.rank_stats[0].words("AllReduce") == 16
    for st in out.rank_stats[1:]:
        assert st.total_messages == 0


def test_allreduce_single_member_is_free():
    g = make_grid(1, 1)
    out = spawn_ranks(g, lambda ctx: ctx.allreduce_max(ctx.world_comm(), 41))
    assert out.results == (41,)
    assert out.stats.total_messages == 0


def test_panic_unblocks_waiting_ranks():
    g = make_grid(4, 1)

    def program(ctx):
        if ctx.rank == 1:
            raise ValueError("boom")
        # everyone else waits for a broadcast rank 1 will never send
        return ctx.bcast(ctx.world_comm(), 1, None, "never")

    start = time.perf_counter()
    with pytest.raises(RankPanic) as info:
        spawn_ranks(g, program)
    assert time.perf_counter() - start < 5.0
    assert info.value.rank == 1
    assert isinstance(info.value.cause, ValueError)


def test_panic_breaks_barrier():
    g = make_grid(4, 1)

    def program(ctx):
        if ctx.rank == 3:
            raise RuntimeError("late")
        ctx.barrier()
        return None

    with pytest.raises(RankPanic) as info:
        spawn_ranks(g, program)
    assert info.value.rank == 3


def test_same_channel_is_fifo():
    g = make_grid(4, 1)

    def program(ctx):
        comm = ctx.world_comm()
        first = ctx.bcast(comm, 0, "first" if ctx.rank == 0 else None, "f")
        second = ctx.bcast(comm, 0, "second" if ctx.rank == 0 else None, "f")
        return first, second

    out = spawn_ranks(g, program)
    assert all(r == ("first", "second") for r in out.results)


def test_stats_merge_and_byte_math():
    st = CommStats()
    st.add("x", 2, 5)
    st.add("y", 1, 1)
    other = CommStats()
    other.add("x", 1, 2)
    st.merge(other)
    d = st.as_dict(record_bytes=24, header_bytes=16)
    assert d["phases"]["x"] == {"messages": 3, "words": 7,
                                "bytes": 24 * 7 + 16 * 3}
    assert d["total"]["messages"] == 4
    assert d["total"]["bytes"] == 24 * 8 + 16 * 4
    assert st.to_json() == st.to_json()


def _fuzz_program(ctx):
    comm_row = ctx.row_comm()
    comm_col = ctx.col_comm()
    root_r = comm_row.members[0]
    root_c = comm_col.members[0]
    a = ctx.bcast(comm_row, root_r, ("A", root_r), "A-Broadcast")
    b = ctx.bcast(comm_col, root_c, ("B", root_c), "B-Broadcast")
    fib = ctx.fiber_comm()
    swapped = ctx.all_to_all(fib, [(ctx.rank, dst) for dst in fib.members],
                             "AllToAll-Fiber")
    top = ctx.allreduce_max(ctx.world_comm(), ctx.rank * 3 % 7)
    ctx.barrier()
    return a, b, tuple(swapped), top


def test_schedule_fuzz_is_invisible():
    g = make_grid(8, 2)
    base = spawn_ranks(g, _fuzz_program)
    base_json = base.stats.to_json()
    for seed in range(100):
        run = spawn_ranks(g, _fuzz_program, jitter_seed=seed)
        assert run.results == base.results
        assert run.stats.to_json() == base_json


def test_timed_records_phase_seconds():
    g = make_grid(4, 1)

    def program(ctx):
        with ctx.timed("spin"):
            time.sleep(0.002)
        return None

    out = spawn_ranks(g, program)
    assert out.phase_seconds["spin"] >= 0.002
