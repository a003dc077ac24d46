"""Closed-form cost model for the staged, batched, layered multiply.

Predictions cover one full multiply on p ranks arranged as l layers of
a sqrt(p/l) x sqrt(p/l) mesh, run in b batches. Communication phases
carry a latency term (multiplied by the per-message cost alpha) and a
bandwidth term (multiplied by the per-word cost beta); local compute
phases carry raw operation counts that are reported but never ranked,
since machines are described here by alpha and beta alone.

Per-rank phase terms, with q = sqrt(p/l):

* A broadcasts: b * q * lg(p/l) messages, b * nnz(A) / sqrt(p*l) words.
  Re-broadcasting A is the price of batching, so both scale with b.
* B broadcasts: same message term, nnz(B) / sqrt(p*l) words. B moves in
  disjoint pieces, so its word term ignores b.
* Fiber exchange: b * l messages, flops / p words. The flop count is a
  safe stand-in for the merged partials a rank actually ships; when the
  true sum of partial sizes is known the tighter word term is reported
  alongside.
* Local multiply does flops / p operations; the layer merge costs a
  lg(p/l) factor on top, and the fiber merge a lg(l) factor.

The batch lower bound is the aggregate-memory form of the planner's
rule: the result working set, in bytes, divided by what is left of
total memory after both operands, rounded up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import BadParams, InsufficientAggregateMemory

COMM_PHASES = ("A-Bcast", "B-Bcast", "AllToAll-Fiber")
COMPUTE_PHASES = ("Local-Multiply", "Merge-Layer", "Merge-Fiber")

# which runtime counter backs each predicted communication phase
MEASURED_PHASE_FOR = {
    "A-Bcast": "A-Broadcast",
    "B-Bcast": "B-Broadcast",
    "AllToAll-Fiber": "AllToAll-Fiber",
}


@dataclass(frozen=True)
class MachineParams:
    """A machine is a latency, an inverse bandwidth, and a rank count.

    ``alpha`` is seconds per message, ``beta`` seconds per word, where
    a word is one nonzero record of ``record_bytes`` bytes.
    ``memory_bytes`` is the aggregate memory across all ranks; it is
    only needed for batch lower bounds and plan sweeps.
    """

    alpha: float
    beta: float
    p: int
    memory_bytes: int | None = None
    record_bytes: int = 24


@dataclass(frozen=True)
class ProblemShape:
    """Global quantities of one multiply, independent of the grid."""

    nnz_a: int
    nnz_b: int
    flops: int
    nnz_c: int | None = None
    sum_nnz_d: int | None = None     # merged layer partials, when measured


@dataclass(frozen=True)
class PhaseCost:
    """One phase's per-rank terms: alpha and beta multipliers plus ops."""

    messages: float = 0.0
    words: float = 0.0
    ops: float = 0.0

    def seconds(self, machine: MachineParams) -> float:
        return machine.alpha * self.messages + machine.beta * self.words


@dataclass(frozen=True)
class CostEstimate:
    """Per-phase predictions for one (layers, batches) configuration."""

    machine: MachineParams
    layers: int
    batches: int
    phases: dict
    tight_alltoall: PhaseCost | None = None

    def comm_seconds(self) -> float:
        return sum(self.phases[name].seconds(self.machine)
                   for name in COMM_PHASES)

    def total_ops(self) -> float:
        return sum(cost.ops for cost in self.phases.values())


def predict(shape: ProblemShape, machine: MachineParams, layers: int,
            batches: int = 1) -> CostEstimate:
    """Predict per-rank phase costs for one grid and batch count."""
    p, l, b = machine.p, layers, batches
    if l < 1 or p < 1 or p % l:
        raise BadParams(f"layer count {l} does not divide {p} ranks")
    if b < 1:
        raise BadParams(f"batch count must be positive, got {b}")
    q = math.sqrt(p / l)
    lg_layer = math.log2(p / l)
    lg_l = math.log2(l)
    sqrt_pl = math.sqrt(p * l)
    per_rank_flops = shape.flops / p

    phases = {
        "A-Bcast": PhaseCost(messages=b * q * lg_layer,
                             words=b * shape.nnz_a / sqrt_pl),
        "B-Bcast": PhaseCost(messages=b * q * lg_layer,
                             words=shape.nnz_b / sqrt_pl),
        "AllToAll-Fiber": PhaseCost(messages=b * l,
                                    words=shape.flops / p),
        "Local-Multiply": PhaseCost(ops=per_rank_flops),
        "Merge-Layer": PhaseCost(ops=per_rank_flops * lg_layer),
        "Merge-Fiber": PhaseCost(ops=per_rank_flops * lg_l),
    }
    tight = None
    if shape.sum_nnz_d is not None:
        tight = PhaseCost(messages=b * l, words=shape.sum_nnz_d / p)
    return CostEstimate(machine=machine, layers=l, batches=b,
                        phases=phases, tight_alltoall=tight)


def mem_estimate(layer_nnz_d, record_bytes: int = 24, *,
                 flops: int | None = None, nnz_c: int | None = None) -> int:
    """Bytes needed to hold every merged per-layer partial product.

    ``layer_nnz_d`` is the per-layer record count from a symbolic or
    instrumented run (a bare integer total is accepted too). The total
    must sit between nnz(C) and the flop count whenever those are
    supplied; a count outside that sandwich means the accounting is
    wrong, so it is rejected rather than priced.
    """
    if isinstance(layer_nnz_d, int):
        total = layer_nnz_d
    else:
        total = sum(int(v) for v in layer_nnz_d)
    if record_bytes < 1:
        raise BadParams(f"record_bytes must be positive, got {record_bytes}")
    if total < 0:
        raise BadParams(f"negative record count {total}")
    if flops is not None and total > flops:
        raise BadParams(f"{total} partial records exceed the flop count {flops}")
    if nnz_c is not None and total < nnz_c:
        raise BadParams(f"{total} partial records cannot cover nnz(C)={nnz_c}")
    return record_bytes * total


def lower_bound_batches(mem_c_bytes: int, memory_bytes: int,
                        nnz_a: int, nnz_b: int,
                        record_bytes: int = 24) -> int:
    """Fewest batches that fit the result working set in aggregate memory.

    ``mem_c_bytes`` is the bytes the un-batched result working set
    would occupy across all ranks (records of the merged partials, or
    the flop count as a safe overestimate). Integer arithmetic
    throughout, so published machine figures reproduce exactly.
    """
    room = memory_bytes - record_bytes * (nnz_a + nnz_b)
    if room <= 0:
        raise InsufficientAggregateMemory(
            f"operands occupy {record_bytes * (nnz_a + nnz_b)} of "
            f"{memory_bytes} bytes; nothing is left for the result")
    return max(1, -(-mem_c_bytes // room))


@dataclass(frozen=True)
class SweepRow:
    """One sweep candidate: a layer count, its batch bound, its costs."""

    layers: int
    batches: int
    mem_c_bytes: int
    estimate: CostEstimate


def sweep_plan(shape: ProblemShape, machine: MachineParams,
               l_candidates, sum_nnz_d_by_l: dict | None = None) -> list[SweepRow]:
    """Rank layer counts by predicted communication time.

    For each candidate the batch count is the aggregate-memory lower
    bound, using measured merged-partial sizes per layer count when
    provided and the flop count otherwise. Rows come back cheapest
    first; exact ties keep the candidate order, so an all-zero machine
    ranks candidates as given.
    """
    if machine.memory_bytes is None:
        raise BadParams("sweep needs machine.memory_bytes to bound batches")
    rows = []
    for l in l_candidates:
        if sum_nnz_d_by_l is not None and l in sum_nnz_d_by_l:
            mem_c = machine.record_bytes * sum_nnz_d_by_l[l]
        else:
            mem_c = machine.record_bytes * shape.flops
        b = lower_bound_batches(mem_c, machine.memory_bytes,
                                shape.nnz_a, shape.nnz_b,
                                machine.record_bytes)
        rows.append(SweepRow(layers=l, batches=b, mem_c_bytes=mem_c,
                             estimate=predict(shape, machine, l, b)))
    rows.sort(key=lambda row: row.estimate.comm_seconds())
    return rows
