"""Compressed-column sparse matrices and the reference dense multiply.

The storage format is plain compressed-column (CSC) with 64-bit indices:
``col_ptr`` of length ``ncols + 1``, parallel ``row_idx`` / ``values``
arrays, and a ``sorted`` flag. A *canonical* matrix has strictly
increasing row indices inside every column and no explicit zeros. An
*unsorted* matrix may additionally carry duplicate row indices within a
column; those represent unmerged partial sums and are legal inputs to
the merging kernels. Empty columns are kept in ``col_ptr`` as zero-width
ranges; there is no doubly-compressed variant.

Matrices are immutable after construction (the backing arrays are
frozen), so they can be shared freely between simulated ranks.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import (
    DimMismatch,
    IndexOutOfRange,
    OverlapDetected,
    RowCountMismatch,
    TooLargeForOracle,
    UnsortedInput,
    ZeroParts,
)
from .semiring import (DEFAULT_REL_TOL, INT64_PLUS_TIMES, Semiring,
                       infer_semiring)

# The dense reference multiply refuses anything bigger than this per side.
ORACLE_DIM_LIMIT = 4096


class Triple(NamedTuple):
    """One coordinate-format entry."""

    row: int
    col: int
    val: object


# ---------------------------------------------------------------------------
# balanced contiguous splitting (shared by column splits and the process grid)
# ---------------------------------------------------------------------------

def split_sizes(total: int, parts: int) -> list[int]:
    """Sizes of a balanced contiguous split; the remainder goes to the
    lowest-indexed parts (sizes differ by at most one)."""
    if parts <= 0:
        raise ZeroParts(f"cannot split {total} items into {parts} parts")
    base, rem = divmod(total, parts)
    return [base + 1 if t < rem else base for t in range(parts)]


def split_offset(total: int, parts: int, index: int) -> int:
    """Start offset of part ``index`` under the balanced split rule."""
    base, rem = divmod(total, parts)
    return index * base + min(index, rem)


def split_range(total: int, parts: int, index: int) -> range:
    """Half-open index range owned by part ``index``."""
    if not 0 <= index < parts:
        raise IndexOutOfRange(f"part {index} outside [0, {parts})")
    lo = split_offset(total, parts, index)
    hi = split_offset(total, parts, index + 1) if index + 1 < parts else total
    return range(lo, hi)


def split_part_of(total: int, parts: int, position: int) -> int:
    """Inverse of split_range: which part owns global ``position``."""
    base, rem = divmod(total, parts)
    cut = (base + 1) * rem
    if position < cut:
        return position // (base + 1)
    return rem + (position - cut) // base if base else parts - 1


# ---------------------------------------------------------------------------
# the matrix type
# ---------------------------------------------------------------------------

class SparseMat:
    """Immutable compressed-column sparse matrix.

    ``sorted=True`` asserts strictly increasing row indices per column
    (hence no duplicates); ``sorted=False`` makes no ordering promise and
    permits duplicate rows carrying unmerged partial values.
    """

    __slots__ = ("nrows", "ncols", "col_ptr", "row_idx", "values", "sorted")

    def __init__(self, nrows, ncols, col_ptr, row_idx, values, sorted=False,
                 validate=True):
        if nrows < 0 or ncols < 0:
            raise IndexOutOfRange(f"negative dimension {nrows}x{ncols}")
        cp = np.asarray(col_ptr, dtype=np.int64)
        ri = np.asarray(row_idx, dtype=np.int64)
        vals = np.asarray(values)
        if validate:
            if cp.ndim != 1 or cp.shape[0] != ncols + 1:
                raise ValueError("col_ptr must have length ncols + 1")
            if cp[0] != 0 or (np.diff(cp) < 0).any():
                raise ValueError("col_ptr must start at 0 and be nondecreasing")
            if cp[-1] != ri.shape[0] or ri.shape[0] != vals.shape[0]:
                raise ValueError("col_ptr end disagrees with entry count")
            if ri.shape[0]:
                if int(ri.min()) < 0 or int(ri.max()) >= nrows:
                    raise IndexOutOfRange("row index outside [0, nrows)")
            if sorted and ri.shape[0] > 1:
                starts = np.zeros(ri.shape[0], dtype=bool)
                starts[cp[:-1][cp[:-1] < ri.shape[0]]] = True
                bad = (np.diff(ri) <= 0) & ~starts[1:]
                if bad.any():
                    raise UnsortedInput(
                        "rows not strictly increasing within a column")
        for arr in (cp, ri, vals):
            arr.flags.writeable = False
        object.__setattr__(self, "nrows", int(nrows))
        object.__setattr__(self, "ncols", int(ncols))
        object.__setattr__(self, "col_ptr", cp)
        object.__setattr__(self, "row_idx", ri)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "sorted", bool(sorted))

    def __setattr__(self, name, value):
        raise AttributeError("SparseMat is immutable")

    # -- basic accessors ----------------------------------------------------

    @property
    def nnz(self) -> int:
        return int(self.col_ptr[-1])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nrows, self.ncols)

    def col(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        """(row indices, values) of column ``j`` as read-only views."""
        lo, hi = int(self.col_ptr[j]), int(self.col_ptr[j + 1])
        return self.row_idx[lo:hi], self.values[lo:hi]

    def column_counts(self) -> np.ndarray:
        return np.diff(self.col_ptr)

    def entry_cols(self) -> np.ndarray:
        """Column index of every stored entry, in storage order."""
        return np.repeat(np.arange(self.ncols, dtype=np.int64),
                         self.column_counts())

    def to_triples(self) -> list[Triple]:
        cols = self.entry_cols()
        return [Triple(int(r), int(c), v)
                for r, c, v in zip(self.row_idx, cols, self.values)]

    def __repr__(self) -> str:
        tag = "sorted" if self.sorted else "unsorted"
        return (f"SparseMat({self.nrows}x{self.ncols}, nnz={self.nnz}, "
                f"{tag}, dtype={self.values.dtype})")


def empty_matrix(nrows: int, ncols: int, sr: Semiring) -> SparseMat:
    return SparseMat(nrows, ncols, np.zeros(ncols + 1, dtype=np.int64),
                     np.empty(0, dtype=np.int64), sr.empty_values(),
                     sorted=True, validate=False)


def identity(n: int, sr: Semiring, scale=None) -> SparseMat:
    """n x n identity (or ``scale`` times it) over the given semiring."""
    if scale is None:
        scale = True if sr.dtype is np.bool_ else 1
    return SparseMat(n, n, np.arange(n + 1, dtype=np.int64),
                     np.arange(n, dtype=np.int64),
                     sr.values([scale] * n), sorted=True, validate=False)


# ---------------------------------------------------------------------------
# construction from coordinates
# ---------------------------------------------------------------------------

def _build_csc(nrows, ncols, rows, cols, vals, sr, sorted_flag):
    counts = np.bincount(cols, minlength=ncols) if len(cols) else np.zeros(ncols, dtype=np.int64)
    col_ptr = np.concatenate(([0], np.cumsum(counts, dtype=np.int64)))
    return SparseMat(nrows, ncols, col_ptr, rows, vals, sorted=sorted_flag,
                     validate=False)


def from_coo(nrows: int, ncols: int, rows, cols, vals, sr: Semiring,
             on_duplicate: str = "merge") -> SparseMat:
    """Canonical matrix from parallel coordinate arrays.

    Entries are sorted by (column, row). Duplicates are combined with the
    semiring add when ``on_duplicate="merge"`` (in input order, so inexact
    semirings stay deterministic for a fixed input order); with
    ``on_duplicate="error"`` any repeat raises OverlapDetected. Entries
    equal to the semiring zero are dropped after merging.
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=sr.dtype)
    if rows.shape != cols.shape or rows.shape != vals.shape:
        raise ValueError("coordinate arrays must have equal length")
    if rows.shape[0]:
        if int(rows.min()) < 0 or int(rows.max()) >= nrows:
            raise IndexOutOfRange("row index outside [0, nrows)")
        if int(cols.min()) < 0 or int(cols.max()) >= ncols:
            raise IndexOutOfRange("col index outside [0, ncols)")
    if rows.shape[0] == 0:
        return empty_matrix(nrows, ncols, sr)

    order = np.lexsort((rows, cols))
    rows, cols, vals = rows[order], cols[order], vals[order]
    is_start = np.empty(rows.shape[0], dtype=bool)
    is_start[0] = True
    is_start[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])

    if not is_start.all():
        if on_duplicate == "error":
            raise OverlapDetected("duplicate coordinate entry")
        starts = np.flatnonzero(is_start)
        if sr.plus_times:
            merged = np.add.reduceat(vals, starts)
        else:
            add = sr.add
            merged = []
            for t, lo in enumerate(starts):
                hi = starts[t + 1] if t + 1 < len(starts) else len(vals)
                acc = vals[lo]
                for u in range(lo + 1, hi):
                    acc = add(acc, vals[u])
                merged.append(acc)
            merged = np.asarray(merged, dtype=sr.dtype)
        rows, cols, vals = rows[starts], cols[starts], merged

    keep = vals != sr.zero
    if not keep.all():
        rows, cols, vals = rows[keep], cols[keep], vals[keep]
    return _build_csc(nrows, ncols, rows, cols, vals, sr, sorted_flag=True)


def from_triples(nrows: int, ncols: int, triples: Iterable,
                 sr: Semiring | None = None) -> SparseMat:
    """Canonical matrix from (row, col, val) triples in any order.

    Duplicates merge with the semiring add; results equal to zero are
    dropped. For exact semirings the outcome is independent of the input
    order. Without an explicit semiring, the value types pick one
    (ints, floats, or bools).
    """
    rows, cols, vals = [], [], []
    for t in triples:
        r, c, v = t
        rows.append(r)
        cols.append(c)
        vals.append(v)
    if sr is None:
        sr = infer_semiring(np.asarray(vals)) if vals else INT64_PLUS_TIMES
    return from_coo(nrows, ncols,
                    np.asarray(rows, dtype=np.int64),
                    np.asarray(cols, dtype=np.int64),
                    sr.values(vals) if vals else sr.empty_values(),
                    sr)


def canonicalize(m: SparseMat, sr: Semiring | None = None) -> SparseMat:
    """Sorted, duplicate-merged, zero-free form of ``m``."""
    sr = sr or infer_semiring(m.values)
    if m.sorted:
        keep = m.values != sr.zero
        if keep.all():
            return m
        return _filter_entries(m, keep, sr)
    return from_coo(m.nrows, m.ncols, m.row_idx, m.entry_cols(), m.values, sr)


def _filter_entries(m: SparseMat, keep: np.ndarray, sr: Semiring) -> SparseMat:
    cols = m.entry_cols()[keep]
    return _build_csc(m.nrows, m.ncols, m.row_idx[keep], cols,
                      m.values[keep], sr, sorted_flag=m.sorted)


def transpose(m: SparseMat, sr: Semiring | None = None) -> SparseMat:
    """Canonical transpose (duplicates of an unsorted input get merged)."""
    sr = sr or infer_semiring(m.values)
    return from_coo(m.ncols, m.nrows, m.entry_cols(), m.row_idx, m.values, sr)


# ---------------------------------------------------------------------------
# column splitting / concatenation
# ---------------------------------------------------------------------------

def col_split(m: SparseMat, parts: int) -> list[SparseMat]:
    """Split into ``parts`` contiguous column slices (balanced, remainder
    to the lowest-indexed parts). Concatenating the result restores ``m``."""
    if parts <= 0:
        raise ZeroParts(f"cannot split into {parts} parts")
    out = []
    for t in range(parts):
        rng = split_range(m.ncols, parts, t)
        lo, hi = int(m.col_ptr[rng.start]), int(m.col_ptr[rng.stop])
        out.append(SparseMat(
            m.nrows, len(rng),
            m.col_ptr[rng.start:rng.stop + 1] - m.col_ptr[rng.start],
            m.row_idx[lo:hi], m.values[lo:hi],
            sorted=m.sorted, validate=False))
    return out


def col_split_at(m: SparseMat, local_cols: Sequence[int]) -> SparseMat:
    """Submatrix keeping the given columns, in the given order."""
    local_cols = np.asarray(local_cols, dtype=np.int64)
    ptr = np.zeros(len(local_cols) + 1, dtype=np.int64)
    chunks_r, chunks_v = [], []
    for t, j in enumerate(local_cols):
        lo, hi = int(m.col_ptr[j]), int(m.col_ptr[j + 1])
        ptr[t + 1] = ptr[t] + (hi - lo)
        chunks_r.append(m.row_idx[lo:hi])
        chunks_v.append(m.values[lo:hi])
    rows = np.concatenate(chunks_r) if chunks_r else np.empty(0, dtype=np.int64)
    vals = np.concatenate(chunks_v) if chunks_v else m.values[:0]
    return SparseMat(m.nrows, len(local_cols), ptr, rows, vals,
                     sorted=m.sorted, validate=False)


def col_concat(parts: Sequence[SparseMat]) -> SparseMat:
    """Concatenate column slices left to right; widths add up."""
    if not parts:
        raise ValueError("need at least one part")
    nrows = parts[0].nrows
    for p in parts[1:]:
        if p.nrows != nrows:
            raise RowCountMismatch(
                f"row counts differ: {p.nrows} vs {nrows}")
    total_cols = sum(p.ncols for p in parts)
    ptr = np.zeros(total_cols + 1, dtype=np.int64)
    pos, off = 1, 0
    for p in parts:
        ptr[pos:pos + p.ncols] = p.col_ptr[1:] + off
        pos += p.ncols
        off += p.nnz
    rows = np.concatenate([p.row_idx for p in parts]) if total_cols else np.empty(0, np.int64)
    vals = np.concatenate([p.values for p in parts])
    return SparseMat(nrows, total_cols, ptr, rows, vals,
                     sorted=all(p.sorted for p in parts), validate=False)


def permute_cols(m: SparseMat, order: Sequence[int]) -> SparseMat:
    """Reorder columns so output column t is input column order[t]."""
    return col_split_at(m, order)


# ---------------------------------------------------------------------------
# comparisons
# ---------------------------------------------------------------------------

def bit_identical(a: SparseMat, b: SparseMat) -> bool:
    """Exact structural and value equality, flags included."""
    return (a.shape == b.shape and a.sorted == b.sorted
            and a.values.dtype == b.values.dtype
            and np.array_equal(a.col_ptr, b.col_ptr)
            and np.array_equal(a.row_idx, b.row_idx)
            and np.array_equal(a.values, b.values))


def canonical_equals(a: SparseMat, b: SparseMat, tol: float = DEFAULT_REL_TOL,
                     sr: Semiring | None = None) -> bool:
    """Equality after canonicalizing both sides.

    Patterns must match exactly. Values match exactly for exact
    semirings; inexact ones compare with symmetric relative tolerance
    ``|x - y| <= tol * max(|x|, |y|)``.
    """
    if a.shape != b.shape:
        return False
    sr_a = sr or infer_semiring(a.values)
    sr_b = sr or infer_semiring(b.values)
    ca, cb = canonicalize(a, sr_a), canonicalize(b, sr_b)
    if not (np.array_equal(ca.col_ptr, cb.col_ptr)
            and np.array_equal(ca.row_idx, cb.row_idx)):
        return False
    if sr_a.exact and sr_b.exact:
        return bool(np.array_equal(ca.values, cb.values))
    x, y = np.asarray(ca.values, dtype=np.float64), np.asarray(cb.values, dtype=np.float64)
    return bool(np.all(np.abs(x - y) <= tol * np.maximum(np.abs(x), np.abs(y))))


# ---------------------------------------------------------------------------
# reference multiply and product statistics
# ---------------------------------------------------------------------------

def dense_multiply_oracle(a: SparseMat, b: SparseMat, sr: Semiring) -> SparseMat:
    """Reference product via densified triple loop. Testing only.

    Walks every (column of b) x (inner index) pair and accumulates whole
    columns of ``a``, skipping stored zeros, which is exact because the
    semiring zero is absorbing under mul and the identity under add. The
    result is canonical (sorted, cancellation zeros dropped).
    """
    if a.ncols != b.nrows:
        raise DimMismatch(f"inner dims {a.ncols} vs {b.nrows}")
    if max(a.nrows, a.ncols, b.ncols) > ORACLE_DIM_LIMIT:
        raise TooLargeForOracle(
            f"oracle limited to {ORACLE_DIM_LIMIT} per dimension")
    zero, add, mul = sr.zero, sr.add, sr.mul
    m, kdim, n = a.nrows, a.ncols, b.ncols

    da = [[zero] * m for _ in range(kdim)]   # column-major dense a
    for i in range(kdim):
        rs, vs = a.col(i)
        ai = da[i]
        for r, v in zip(rs.tolist(), vs.tolist()):
            ai[r] = add(ai[r], v)            # unsorted input may repeat rows
    db = [[zero] * kdim for _ in range(n)]
    for j in range(n):
        rs, vs = b.col(j)
        bj = db[j]
        for r, v in zip(rs.tolist(), vs.tolist()):
            bj[r] = add(bj[r], v)

    out_rows, out_vals, ptr = [], [], [0]
    for j in range(n):
        bj = db[j]
        acc = [zero] * m
        for i in range(kdim):
            bv = bj[i]
            if bv == zero:
                continue
            ai = da[i]
            for r in range(m):
                av = ai[r]
                if av == zero:
                    continue
                acc[r] = add(acc[r], mul(av, bv))
        for r in range(m):
            if acc[r] != zero:
                out_rows.append(r)
                out_vals.append(acc[r])
        ptr.append(len(out_rows))
    return SparseMat(m, n, np.asarray(ptr, dtype=np.int64),
                     np.asarray(out_rows, dtype=np.int64),
                     sr.values(out_vals) if out_vals else sr.empty_values(),
                     sorted=True, validate=False)


@dataclass(frozen=True)
class MatStats:
    """Size statistics of a product pattern.

    ``nnz`` counts the merged (no-cancellation) product entries, ``flops``
    the scalar multiplications a Gustavson-style multiply performs. The
    compression factor ``cf = flops / nnz`` is exact (a Fraction) and is
    at least 1 whenever the product is nonempty.
    """

    nnz: int
    flops: int

    @property
    def cf(self) -> Fraction:
        if self.nnz == 0:
            return Fraction(1)
        return Fraction(self.flops, self.nnz)


def compute_stats(a: SparseMat, b: SparseMat) -> MatStats:
    """flops and pattern nnz of the product ``a @ b``.

    Pattern arithmetic only: values never cancel here, so
    flops >= nnz >= 0 and cf >= 1. Inputs should be canonical; duplicate
    rows in an unsorted ``b`` would double-count flops.
    """
    if a.ncols != b.nrows:
        raise DimMismatch(f"inner dims {a.ncols} vs {b.nrows}")
    acounts = a.column_counts()
    flops = int(acounts[b.row_idx].sum()) if b.nnz else 0
    nnz = 0
    arows = a.row_idx
    aptr = a.col_ptr
    for j in range(b.ncols):
        rs, _ = b.col(j)
        seen: set[int] = set()
        for i in rs.tolist():
            lo, hi = int(aptr[i]), int(aptr[i + 1])
            seen.update(arows[lo:hi].tolist())
        nnz += len(seen)
    return MatStats(nnz=nnz, flops=flops)
