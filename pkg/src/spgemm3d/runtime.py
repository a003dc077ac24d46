"""Simulated multi-rank runtime with exact communication accounting.

Every simulated rank runs the same program on its own thread. Ranks
talk through in-memory mailboxes instead of a network, and each
transfer is tallied in the sender-side CommStats ledger under a named
phase. Payloads are immutable, so handing a reference across threads
is cheap and safe; the accounting size of a transfer is the number of
nonzero records in the payload, with scalars counting as one word.

Counting model (flat tree): a broadcast over a group of size s charges
the root s-1 messages and nnz*(s-1) words. An all-to-all charges the
sender one message plus the piece's words for every remote piece, and
the piece a rank keeps for itself is free. A max-allreduce is charged
entirely to the group's first member as 2*(s-1) messages and 2*(s-1)
words, covering the scalar gather and the scalar fan-out.

Counts are schedule-independent, so repeated runs of a deterministic
program produce identical ledgers even under injected timing jitter.
Wall-clock phase timers are kept separately and never feed into any
counter.
"""

from __future__ import annotations

import json
import random
import threading
import time
from collections import deque
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any, Callable, Sequence

from .errors import InvalidRoot, PieceCountMismatch, RankPanic
from .grid import GridShape3D
from .sparse import SparseMat

# Phase names used by the multiply and symbolic drivers. Counters are
# keyed by these strings so reports stay stable across code movement.
PHASE_A_BCAST = "A-Broadcast"
PHASE_B_BCAST = "B-Broadcast"
PHASE_FIBER = "AllToAll-Fiber"
PHASE_SYM_A = "Symbolic-A-Bcast"
PHASE_SYM_B = "Symbolic-B-Bcast"
PHASE_ALLREDUCE = "AllReduce"

DEFAULT_RECORD_BYTES = 24


def payload_words(payload: Any) -> int:
    """Accounting size of a payload in words (one word per nonzero record)."""
    if isinstance(payload, SparseMat):
        return payload.nnz
    return 1


class CommStats:
    """Per-phase message and word tallies for one rank or a whole run."""

    __slots__ = ("_counts",)

    def __init__(self) -> None:
        self._counts: dict[str, list[int]] = {}

    def add(self, phase: str, messages: int, words: int) -> None:
        cell = self._counts.setdefault(phase, [0, 0])
        cell[0] += messages
        cell[1] += words

    def merge(self, other: "CommStats") -> None:
        for phase, (m, w) in other._counts.items():
            self.add(phase, m, w)

    def messages(self, phase: str) -> int:
        return self._counts.get(phase, (0, 0))[0]

    def words(self, phase: str) -> int:
        return self._counts.get(phase, (0, 0))[1]

    @property
    def total_messages(self) -> int:
        return sum(c[0] for c in self._counts.values())

    @property
    def total_words(self) -> int:
        return sum(c[1] for c in self._counts.values())

    def phases(self) -> list[str]:
        return sorted(self._counts)

    def as_dict(self, record_bytes: int = DEFAULT_RECORD_BYTES,
                header_bytes: int = 0) -> dict:
        """Nested dict with derived byte totals.

        A word is one nonzero record, so bytes = record_bytes * words
        plus a fixed per-message header (zero by default).
        """
        phases = {}
        for name in sorted(self._counts):
            m, w = self._counts[name]
            phases[name] = {
                "messages": m,
                "words": w,
                "bytes": record_bytes * w + header_bytes * m,
            }
        return {
            "phases": phases,
            "total": {
                "messages": self.total_messages,
                "words": self.total_words,
                "bytes": (record_bytes * self.total_words
                          + header_bytes * self.total_messages),
            },
        }

    def to_json(self, record_bytes: int = DEFAULT_RECORD_BYTES,
                header_bytes: int = 0) -> str:
        return json.dumps(self.as_dict(record_bytes, header_bytes),
                          sort_keys=True, separators=(",", ":"))

    def __repr__(self) -> str:
        parts = ", ".join(f"{k}={tuple(v)}" for k, v in sorted(self._counts.items()))
        return f"CommStats({parts})"


@dataclass(frozen=True)
class Communicator:
    """An ordered group of ranks sharing a channel namespace.

    ``kind`` is one of row, col, fiber, world. ``key`` makes channels
    from different groups (and different row indices, etc.) disjoint.
    """

    kind: str
    key: tuple
    members: tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.members)

    def index_of(self, rank: int) -> int:
        return self.members.index(rank)


class _Aborted(Exception):
    """Internal unwind signal used when another rank already failed."""


class _Inbox:
    __slots__ = ("cond", "channels")

    def __init__(self) -> None:
        self.cond = threading.Condition()
        # (communicator key, source rank) -> FIFO of payloads
        self.channels: dict[tuple, deque] = {}


class CommWorld:
    """Shared fabric for one simulated run: mailboxes, barrier, abort flag."""

    def __init__(self, grid: GridShape3D, jitter_seed: int | None = None):
        self.grid = grid
        self.inboxes = [_Inbox() for _ in range(grid.p)]
        self.abort = threading.Event()
        self.barrier = threading.Barrier(grid.p)
        self.jitter_seed = jitter_seed
        self._panic_lock = threading.Lock()
        self.panic: RankPanic | None = None
        # open area for rank programs that need a rendezvous (guarded by
        # scratch_lock and the world barrier)
        self.scratch: dict = {}
        self.scratch_lock = threading.Lock()

    def fail(self, rank: int, cause: BaseException) -> None:
        with self._panic_lock:
            if self.panic is None:
                self.panic = RankPanic(rank, cause)
        self.abort.set()
        self.barrier.abort()


class RankContext:
    """One rank's view of the world: identity, channels, counters, timers."""

    def __init__(self, world: CommWorld, rank: int):
        self.world = world
        self.rank = rank
        self.grid = world.grid
        self.coord = world.grid.coord_of(rank)
        self.stats = CommStats()
        self.seconds: dict[str, float] = {}
        if world.jitter_seed is None:
            self._jitter = None
        else:
            self._jitter = random.Random((world.jitter_seed << 20) ^ rank)
        self._comms: dict[str, Communicator] = {}

    # -- communicators ----------------------------------------------------

    def row_comm(self) -> Communicator:
        """Ranks sharing this rank's (i, k): the broadcast path for A."""
        if "row" not in self._comms:
            c = self.coord
            members = tuple(self.grid.rank_of(c.i, j, c.k) for j in range(self.grid.q))
            self._comms["row"] = Communicator("row", ("row", c.i, c.k), members)
        return self._comms["row"]

    def col_comm(self) -> Communicator:
        """Ranks sharing this rank's (j, k): the broadcast path for B."""
        if "col" not in self._comms:
            c = self.coord
            members = tuple(self.grid.rank_of(i, c.j, c.k) for i in range(self.grid.q))
            self._comms["col"] = Communicator("col", ("col", c.j, c.k), members)
        return self._comms["col"]

    def fiber_comm(self) -> Communicator:
        """Ranks sharing this rank's (i, j) across all layers."""
        if "fiber" not in self._comms:
            c = self.coord
            members = tuple(self.grid.rank_of(c.i, c.j, k) for k in range(self.grid.l))
            self._comms["fiber"] = Communicator("fiber", ("fiber", c.i, c.j), members)
        return self._comms["fiber"]

    def world_comm(self) -> Communicator:
        if "world" not in self._comms:
            self._comms["world"] = Communicator(
                "world", ("world",), tuple(range(self.grid.p)))
        return self._comms["world"]

    # -- plumbing ----------------------------------------------------------

    def _nap(self) -> None:
        if self._jitter is not None:
            time.sleep(self._jitter.random() * 1e-4)

    def _send(self, comm: Communicator, dst: int, payload: Any) -> None:
        self._nap()
        inbox = self.world.inboxes[dst]
        with inbox.cond:
            inbox.channels.setdefault((comm.key, self.rank), deque()).append(payload)
            inbox.cond.notify_all()

    def _recv(self, comm: Communicator, src: int) -> Any:
        self._nap()
        inbox = self.world.inboxes[self.rank]
        key = (comm.key, src)
        with inbox.cond:
            while True:
                chan = inbox.channels.get(key)
                if chan:
                    return chan.popleft()
                if self.world.abort.is_set():
                    raise _Aborted()
                inbox.cond.wait(timeout=0.05)

    # -- collectives ---------------------------------------------------------

    def bcast(self, comm: Communicator, root: int, payload: Any, phase: str) -> Any:
        """Root hands its payload to every other member; returns the payload.

        The root is charged size-1 messages and words*(size-1) words.
        """
        if root not in comm.members:
            raise InvalidRoot(
                f"root {root} is not in {comm.kind} group {comm.key}")
        if self.rank not in comm.members:
            raise InvalidRoot(
                f"rank {self.rank} is not in {comm.kind} group {comm.key}")
        if comm.size == 1:
            return payload
        if self.rank == root:
            fanout = comm.size - 1
            for member in comm.members:
                if member != root:
                    self._send(comm, member, payload)
            self.stats.add(phase, fanout, payload_words(payload) * fanout)
            return payload
        return self._recv(comm, root)

    def all_to_all(self, comm: Communicator, pieces: Sequence[Any],
                   phase: str) -> list[Any]:
        """Exchange pieces[t] with member t; returns pieces in member order.

        Each remote piece costs the sender one message and the piece's
        words. The piece kept locally moves no data and costs nothing.
        """
        if len(pieces) != comm.size:
            raise PieceCountMismatch(
                f"{len(pieces)} pieces for a group of {comm.size}")
        mine = comm.index_of(self.rank)
        out: list[Any] = [None] * comm.size
        out[mine] = pieces[mine]
        for t, member in enumerate(comm.members):
            if t == mine:
                continue
            self._send(comm, member, pieces[t])
            self.stats.add(phase, 1, payload_words(pieces[t]))
        for t, member in enumerate(comm.members):
            if t != mine:
                out[t] = self._recv(comm, member)
        return out

    def allreduce_max(self, comm: Communicator, value, phase: str = PHASE_ALLREDUCE):
        """Max over all members, known to all members afterwards.

        Scalars flow to members[0] and the winner flows back out, so the
        first member is charged 2*(size-1) messages and as many words.
        """
        if comm.size == 1:
            return value
        root = comm.members[0]
        if self.rank == root:
            best = value
            for member in comm.members[1:]:
                best = max(best, self._recv(comm, member))
            for member in comm.members[1:]:
                self._send(comm, member, best)
            n = comm.size - 1
            self.stats.add(phase, 2 * n, 2 * n)
            return best
        self._send(comm, root, value)
        return self._recv(comm, root)

    def barrier(self) -> None:
        self._nap()
        try:
            self.world.barrier.wait()
        except threading.BrokenBarrierError:
            raise _Aborted() from None

    @contextmanager
    def timed(self, phase: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.seconds[phase] = (self.seconds.get(phase, 0.0)
                                   + time.perf_counter() - start)


@dataclass
class RunResult:
    """Outputs of one simulated run."""

    results: tuple                       # program return value per rank
    stats: CommStats                     # world totals, summed over ranks
    rank_stats: tuple[CommStats, ...]
    phase_seconds: dict[str, float]      # per phase, max over ranks


def spawn_ranks(grid: GridShape3D, program: Callable[[RankContext], Any],
                jitter_seed: int | None = None) -> RunResult:
    """Run ``program`` once per rank on its own thread and join the world.

    The first rank whose program raises wins the panic slot; everyone
    else is unwound through the abort flag and the broken barrier, and
    the failure surfaces here as a RankPanic carrying the original
    exception. ``jitter_seed`` adds tiny seeded sleeps around channel
    operations to shake out schedule-dependent behavior.
    """
    world = CommWorld(grid, jitter_seed=jitter_seed)
    ctxs = [RankContext(world, r) for r in range(grid.p)]
    results: list[Any] = [None] * grid.p

    def run(rank: int) -> None:
        try:
            results[rank] = program(ctxs[rank])
        except _Aborted:
            pass
        except BaseException as exc:
            world.fail(rank, exc)

    threads = [threading.Thread(target=run, args=(r,), name=f"rank-{r}")
               for r in range(grid.p)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if world.panic is not None:
        raise world.panic

    total = CommStats()
    for ctx in ctxs:
        total.merge(ctx.stats)
    phase_seconds: dict[str, float] = {}
    for ctx in ctxs:
        for phase, sec in ctx.seconds.items():
            phase_seconds[phase] = max(phase_seconds.get(phase, 0.0), sec)
    return RunResult(results=tuple(results), stats=total,
                     rank_stats=tuple(ctx.stats for ctx in ctxs),
                     phase_seconds=phase_seconds)
