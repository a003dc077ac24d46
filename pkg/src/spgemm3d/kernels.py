"""Per-rank multiply and merge kernels.

Two families with identical semantics and different intermediate
ordering:

* sort-free: ``hash_spgemm_unsorted`` and ``hash_merge_unsorted`` keep
  columns unordered and accumulate through open-addressing hash tables.
  Nothing is sorted until ``finalize_sort`` runs once on the final
  result.
* sorted baselines: ``heap_spgemm_sorted`` and ``heap_merge_sorted``
  maintain sorted columns throughout with k-way heap merges.

Ordering conventions that make runs reproducible:

* hash tables use multiplicative hashing with one fixed odd 64-bit
  constant, linear probing, power-of-two capacity, and a load factor
  kept at or below one half by doubling; no per-run seeding anywhere.
* insertion order is the consuming matrix's storage order (for a
  multiply: b's column entries outer, a's column entries inner), and
  unsorted columns are emitted in table slot order, so reruns are
  bit-identical.

Multiply kernels keep entries whose accumulated value equals the
semiring zero; that makes their output size match the symbolic count
exactly. Merge kernels drop such entries, which is where cancellation
zeros leave the pipeline.

Kernels may fan out over column chunks with a thread pool; the chunk
results are concatenated in column order, so the output is independent
of the worker count. The ``SPGEMM_THREADS`` environment variable caps
the pool size (default 1).
"""

from __future__ import annotations

import heapq
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy as np

from .errors import DimMismatch, DuplicateRows, EmptyPile, UnsortedInput
from .semiring import Semiring
from .sparse import SparseMat, split_range

# Fixed multiplier for the hash tables (odd, 64 bits, golden-ratio based).
HASH_MULT = 0x9E3779B97F4A7C15
_WORD = (1 << 64) - 1


def _next_pow2(x: int) -> int:
    return 1 << max(1, x - 1).bit_length() if x > 1 else 2


def kernel_threads(threads: int | None = None) -> int:
    """Worker cap for column-parallel kernels (SPGEMM_THREADS, default 1)."""
    if threads is not None:
        return max(1, int(threads))
    raw = os.environ.get("SPGEMM_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


class HashAccumulator:
    """Open-addressing accumulator keyed by row index.

    Capacity is a power of two sized to twice the expected key count, so
    the load factor stays at or below one half; inserting past that
    doubles the table and rehashes. Slot order (and therefore ``items``
    order) is deterministic for a fixed insertion sequence.
    """

    __slots__ = ("capacity", "keys", "vals", "occupancy", "_add")

    EMPTY = -1

    def __init__(self, expected: int, add: Callable | None = None):
        self.capacity = _next_pow2(2 * max(1, expected))
        self.keys = [-1] * self.capacity
        self.vals = [None] * self.capacity
        self.occupancy = 0
        self._add = add

    def insert(self, key: int, val) -> None:
        keys = self.keys
        mask = self.capacity - 1
        h = (key * HASH_MULT & _WORD) & mask
        while True:
            k = keys[h]
            if k == key:
                self.vals[h] = self._add(self.vals[h], val)
                return
            if k == -1:
                keys[h] = key
                self.vals[h] = val
                self.occupancy += 1
                if self.occupancy * 2 > self.capacity:
                    self._grow()
                return
            h = (h + 1) & mask

    def lookup(self, key: int):
        keys = self.keys
        mask = self.capacity - 1
        h = (key * HASH_MULT & _WORD) & mask
        while True:
            k = keys[h]
            if k == key:
                return self.vals[h]
            if k == -1:
                return None
            h = (h + 1) & mask

    def items(self) -> list[tuple[int, object]]:
        """(key, value) pairs in slot-scan order."""
        return [(k, v) for k, v in zip(self.keys, self.vals) if k != -1]

    def _grow(self) -> None:
        pairs = self.items()
        self.capacity *= 2
        self.keys = [-1] * self.capacity
        self.vals = [None] * self.capacity
        mask = self.capacity - 1
        keys = self.keys
        vals = self.vals
        for key, val in pairs:
            h = (key * HASH_MULT & _WORD) & mask
            while keys[h] != -1:
                h = (h + 1) & mask
            keys[h] = key
            vals[h] = val

    def __len__(self) -> int:
        return self.occupancy


# A pile of unmerged partial results: same-shaped matrices whose sum is
# the answer. Plain sequence; the order is the merge order.
PartialPile = Sequence[SparseMat]


# ---------------------------------------------------------------------------
# column-chunk scheduling
# ---------------------------------------------------------------------------

def _per_column_run(ncols, column_fn, threads):
    """Run column_fn(j) -> (rows list, vals list) for every column and
    stitch the results in column order."""
    workers = kernel_threads(threads)

    def run_chunk(chunk: range):
        rows_out, vals_out, counts = [], [], []
        for j in chunk:
            rows, vals = column_fn(j)
            rows_out.extend(rows)
            vals_out.extend(vals)
            counts.append(len(rows))
        return rows_out, vals_out, counts

    if workers == 1 or ncols <= 1:
        chunks = [run_chunk(range(ncols))]
    else:
        ranges = [split_range(ncols, workers, t) for t in range(workers)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(run_chunk, ranges))

    all_rows, all_vals, all_counts = [], [], []
    for rows_out, vals_out, counts in chunks:
        all_rows.extend(rows_out)
        all_vals.extend(vals_out)
        all_counts.extend(counts)
    ptr = np.zeros(ncols + 1, dtype=np.int64)
    np.cumsum(np.asarray(all_counts, dtype=np.int64), out=ptr[1:])
    return ptr, all_rows, all_vals


def _pack(nrows, ncols, ptr, rows, vals, sr, sorted_flag):
    return SparseMat(
        nrows, ncols, ptr,
        np.asarray(rows, dtype=np.int64),
        sr.values(vals) if vals else sr.empty_values(),
        sorted=sorted_flag, validate=False)


# ---------------------------------------------------------------------------
# multiply kernels
# ---------------------------------------------------------------------------

def hash_spgemm_unsorted(a: SparseMat, b: SparseMat, sr: Semiring,
                         threads: int | None = None) -> SparseMat:
    """Product with hash accumulation, unsorted output columns.

    Both inputs may be unsorted. Each output column's table is sized
    from that column's exact flop count, so it never grows mid-column.
    Accumulations that land on the semiring zero are kept.
    """
    if a.ncols != b.nrows:
        raise DimMismatch(f"inner dims {a.ncols} vs {b.nrows}")
    aptr = a.col_ptr.tolist()
    arow = a.row_idx.tolist()
    aval = a.values.tolist()
    bptr = b.col_ptr.tolist()
    brow = b.row_idx.tolist()
    bval = b.values.tolist()
    acount = np.diff(a.col_ptr).tolist()
    add, mul = sr.add, sr.mul
    word = _WORD

    def column(j):
        lo, hi = bptr[j], bptr[j + 1]
        est = 0
        for t in range(lo, hi):
            est += acount[brow[t]]
        if est == 0:
            return (), ()
        cap = _next_pow2(2 * est)
        mask = cap - 1
        keys = [-1] * cap
        vals = [None] * cap
        for t in range(lo, hi):
            i = brow[t]
            bv = bval[t]
            for s in range(aptr[i], aptr[i + 1]):
                r = arow[s]
                v = mul(aval[s], bv)
                h = (r * HASH_MULT & word) & mask
                while True:
                    k = keys[h]
                    if k == r:
                        vals[h] = add(vals[h], v)
                        break
                    if k == -1:
                        keys[h] = r
                        vals[h] = v
                        break
                    h = (h + 1) & mask
        rows_out, vals_out = [], []
        for h, k in enumerate(keys):
            if k != -1:
                rows_out.append(k)
                vals_out.append(vals[h])
        return rows_out, vals_out

    ptr, rows, vals = _per_column_run(b.ncols, column, threads)
    return _pack(a.nrows, b.ncols, ptr, rows, vals, sr, sorted_flag=False)


def heap_spgemm_sorted(a: SparseMat, b: SparseMat, sr: Semiring,
                       threads: int | None = None) -> SparseMat:
    """Product via a k-way heap over a's (sorted) columns; sorted output.

    The reference kernel the sort-free path is measured against. ``a``
    must have sorted columns; ``b`` may be unsorted. Zero accumulations
    are kept, mirroring the hash kernel.
    """
    if a.ncols != b.nrows:
        raise DimMismatch(f"inner dims {a.ncols} vs {b.nrows}")
    if not a.sorted:
        raise UnsortedInput("heap multiply needs sorted columns in a")
    aptr = a.col_ptr.tolist()
    arow = a.row_idx.tolist()
    aval = a.values.tolist()
    bptr = b.col_ptr.tolist()
    brow = b.row_idx.tolist()
    bval = b.values.tolist()
    add, mul = sr.add, sr.mul
    heappush, heappop = heapq.heappush, heapq.heappop

    def column(j):
        heap = []
        for t in range(bptr[j], bptr[j + 1]):
            i = brow[t]
            lo, hi = aptr[i], aptr[i + 1]
            if lo < hi:
                heap.append((arow[lo], t, lo, hi, bval[t]))
        heapq.heapify(heap)
        rows_out, vals_out = [], []
        cur = -1
        acc = None
        while heap:
            r, t, pos, hi, bv = heappop(heap)
            v = mul(aval[pos], bv)
            if r == cur:
                acc = add(acc, v)
            else:
                if cur >= 0:
                    rows_out.append(cur)
                    vals_out.append(acc)
                cur, acc = r, v
            pos += 1
            if pos < hi:
                heappush(heap, (arow[pos], t, pos, hi, bv))
        if cur >= 0:
            rows_out.append(cur)
            vals_out.append(acc)
        return rows_out, vals_out

    ptr, rows, vals = _per_column_run(b.ncols, column, threads)
    return _pack(a.nrows, b.ncols, ptr, rows, vals, sr, sorted_flag=True)


# ---------------------------------------------------------------------------
# merge kernels
# ---------------------------------------------------------------------------

def _check_pile(pile: PartialPile) -> tuple[int, int]:
    if len(pile) == 0:
        raise EmptyPile("nothing to merge")
    nrows, ncols = pile[0].nrows, pile[0].ncols
    for p in pile[1:]:
        if p.nrows != nrows or p.ncols != ncols:
            raise DimMismatch(
                f"pile shapes differ: {p.shape} vs {(nrows, ncols)}")
    return nrows, ncols


def hash_merge_unsorted(pile: PartialPile, sr: Semiring,
                        threads: int | None = None) -> SparseMat:
    """Sum a pile of same-shaped partial results; unsorted output.

    Parts are consumed in pile order (entries in storage order within
    each part), so inexact sums are reproducible. Entries accumulating
    to the semiring zero are dropped.
    """
    nrows, ncols = _check_pile(pile)
    parts = [(p.col_ptr.tolist(), p.row_idx.tolist(), p.values.tolist())
             for p in pile]
    add = sr.add
    zero = sr.zero

    def column(j):
        est = 0
        for ptr, _, _ in parts:
            est += ptr[j + 1] - ptr[j]
        if est == 0:
            return (), ()
        table = HashAccumulator(est, add=add)
        insert = table.insert
        for ptr, prow, pval in parts:
            for t in range(ptr[j], ptr[j + 1]):
                insert(prow[t], pval[t])
        rows_out, vals_out = [], []
        for r, v in table.items():
            if v != zero:
                rows_out.append(r)
                vals_out.append(v)
        return rows_out, vals_out

    ptr, rows, vals = _per_column_run(ncols, column, threads)
    return _pack(nrows, ncols, ptr, rows, vals, sr, sorted_flag=False)


def heap_merge_sorted(pile: PartialPile, sr: Semiring,
                      threads: int | None = None) -> SparseMat:
    """k-way heap merge of sorted parts; sorted output, zeros dropped."""
    nrows, ncols = _check_pile(pile)
    for p in pile:
        if not p.sorted:
            raise UnsortedInput("heap merge needs sorted parts")
    parts = [(p.col_ptr.tolist(), p.row_idx.tolist(), p.values.tolist())
             for p in pile]
    add = sr.add
    zero = sr.zero
    heappush, heappop = heapq.heappush, heapq.heappop

    def column(j):
        heap = []
        for t, (ptr, prow, _) in enumerate(parts):
            lo, hi = ptr[j], ptr[j + 1]
            if lo < hi:
                heap.append((prow[lo], t, lo, hi))
        heapq.heapify(heap)
        rows_out, vals_out = [], []
        cur = -1
        acc = None
        while heap:
            r, t, pos, hi = heappop(heap)
            v = parts[t][2][pos]
            if r == cur:
                acc = add(acc, v)
            else:
                if cur >= 0 and acc != zero:
                    rows_out.append(cur)
                    vals_out.append(acc)
                cur, acc = r, v
            pos += 1
            if pos < hi:
                heappush(heap, (parts[t][1][pos], t, pos, hi))
        if cur >= 0 and acc != zero:
            rows_out.append(cur)
            vals_out.append(acc)
        return rows_out, vals_out

    ptr, rows, vals = _per_column_run(ncols, column, threads)
    return _pack(nrows, ncols, ptr, rows, vals, sr, sorted_flag=True)


# ---------------------------------------------------------------------------
# symbolic pass and finalization
# ---------------------------------------------------------------------------

def local_symbolic(a: SparseMat, b: SparseMat) -> int:
    """Merged nonzero count of the product without touching values.

    Pattern arithmetic: cancellation cannot shrink this, so the result
    equals nnz(hash_spgemm_unsorted(a, b)) for every semiring.
    """
    if a.ncols != b.nrows:
        raise DimMismatch(f"inner dims {a.ncols} vs {b.nrows}")
    aptr = a.col_ptr.tolist()
    arow = a.row_idx
    bptr = b.col_ptr.tolist()
    brow = b.row_idx.tolist()
    total = 0
    for j in range(b.ncols):
        seen: set[int] = set()
        up = seen.update
        for t in range(bptr[j], bptr[j + 1]):
            i = brow[t]
            up(arow[aptr[i]:aptr[i + 1]].tolist())
        total += len(seen)
    return total


def finalize_sort(m: SparseMat, sr: Semiring | None = None) -> SparseMat:
    """Sort rows within every column, values following; idempotent.

    Raises DuplicateRows if any column still holds a repeated row index,
    which would mean an upstream merge was skipped.
    """
    if m.nnz == 0:
        return SparseMat(m.nrows, m.ncols, m.col_ptr, m.row_idx, m.values,
                         sorted=True, validate=False)
    cols = m.entry_cols()
    order = np.lexsort((m.row_idx, cols))
    rows = m.row_idx[order]
    scols = cols[order]
    dup = (rows[1:] == rows[:-1]) & (scols[1:] == scols[:-1])
    if dup.any():
        at = int(np.flatnonzero(dup)[0])
        raise DuplicateRows(
            f"row {int(rows[at])} repeats in column {int(scols[at])}")
    return SparseMat(m.nrows, m.ncols, m.col_ptr, rows, m.values[order],
                     sorted=True, validate=False)
