"""Process grid shapes and block distribution of the operands.

The grid arranges ``p`` ranks as ``l`` layers of a square q x q mesh,
``q = sqrt(p / l)``. Operands are laid out so a q-stage broadcast
schedule inside each layer lines up the inner dimension:

* A (m x kk): rank (i, j, k) owns row block i and, inside column block
  j, the k-th contiguous column sub-slice. Locals are (m/q) x (kk/(q l)).
* B (kk x n): rank (i, j, k) owns column block j and, inside row block
  i, the k-th contiguous row sub-slice. Locals are (kk/(q l)) x (n/q).
* C is laid out like A.

All splits are balanced contiguous ranges with the remainder going to
the lowest indices, and every ownership map is plain offset arithmetic.
Batching cuts each rank's local B into block-cyclic column pieces so the
work per batch stays even.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import (
    IndivisibleLayers,
    NonSquareLayer,
    OverlapDetected,
    ZeroBatches,
)
from .semiring import infer_semiring
from .sparse import (
    SparseMat,
    canonicalize,
    col_split_at,
    from_coo,
    split_range,
)


@dataclass(frozen=True)
class RankCoord:
    """Position in the grid: row i, column j, layer k."""

    i: int
    j: int
    k: int


@dataclass(frozen=True)
class GridShape3D:
    """l layers of a q x q mesh; p = q * q * l ranks total.

    Rank ids are layer-major: rank = (k * q + i) * q + j.
    """

    p: int
    q: int
    l: int

    def rank_of(self, i: int, j: int, k: int) -> int:
        return (k * self.q + i) * self.q + j

    def coord_of(self, rank: int) -> RankCoord:
        q = self.q
        j = rank % q
        i = (rank // q) % q
        k = rank // (q * q)
        return RankCoord(i, j, k)

    def coords(self) -> Iterator[RankCoord]:
        for rank in range(self.p):
            yield self.coord_of(rank)


def make_grid(p: int, layers: int) -> GridShape3D:
    """Validate and build the grid: layers must divide p and p/layers
    must be a perfect square."""
    if p < 1 or layers < 1:
        raise IndivisibleLayers(f"need p >= 1 and layers >= 1, got {p}, {layers}")
    if p % layers:
        raise IndivisibleLayers(f"{layers} layers do not divide {p} ranks")
    per_layer = p // layers
    q = math.isqrt(per_layer)
    if q * q != per_layer:
        raise NonSquareLayer(f"{per_layer} ranks per layer is not a square")
    return GridShape3D(p=p, q=q, l=layers)


# ---------------------------------------------------------------------------
# ownership maps
# ---------------------------------------------------------------------------

def _nested_range(total: int, q: int, block: int, l: int, slice_idx: int) -> range:
    """The slice_idx-th sub-slice (of l) inside block ``block`` (of q)."""
    outer = split_range(total, q, block)
    inner = split_range(len(outer), l, slice_idx)
    return range(outer.start + inner.start, outer.start + inner.stop)


def owned_rows(grid: GridShape3D, role: str, nrows: int, c: RankCoord) -> range:
    if role == "B":
        return _nested_range(nrows, grid.q, c.i, grid.l, c.k)
    return split_range(nrows, grid.q, c.i)          # A and C


def owned_cols(grid: GridShape3D, role: str, ncols: int, c: RankCoord) -> range:
    if role == "B":
        return split_range(ncols, grid.q, c.j)
    return _nested_range(ncols, grid.q, c.j, grid.l, c.k)   # A and C


@dataclass(frozen=True)
class DistMatrix:
    """A global matrix cut into per-rank blocks along the ownership maps."""

    grid: GridShape3D
    role: str                      # "A", "B", or "C"
    nrows: int
    ncols: int
    locals_: tuple[SparseMat, ...]  # indexed by rank id

    def local(self, rank: int) -> SparseMat:
        return self.locals_[rank]

    def row_range(self, rank: int) -> range:
        return owned_rows(self.grid, self.role, self.nrows, self.grid.coord_of(rank))

    def col_range(self, rank: int) -> range:
        return owned_cols(self.grid, self.role, self.ncols, self.grid.coord_of(rank))

    @property
    def nnz(self) -> int:
        return sum(m.nnz for m in self.locals_)


def _distribute(m: SparseMat, grid: GridShape3D, role: str) -> DistMatrix:
    sr = infer_semiring(m.values)
    m = canonicalize(m, sr)
    entry_cols = m.entry_cols()
    locals_ = []
    for c in grid.coords():
        rr = owned_rows(grid, role, m.nrows, c)
        cr = owned_cols(grid, role, m.ncols, c)
        mask = ((m.row_idx >= rr.start) & (m.row_idx < rr.stop)
                & (entry_cols >= cr.start) & (entry_cols < cr.stop))
        locals_.append(from_coo(
            len(rr), len(cr),
            m.row_idx[mask] - rr.start,
            entry_cols[mask] - cr.start,
            m.values[mask], sr))
    return DistMatrix(grid=grid, role=role, nrows=m.nrows, ncols=m.ncols,
                      locals_=tuple(locals_))


def distribute_a(a: SparseMat, grid: GridShape3D) -> DistMatrix:
    """Lay out the left operand (row blocks, layered column sub-slices)."""
    return _distribute(a, grid, "A")


def distribute_b(b: SparseMat, grid: GridShape3D) -> DistMatrix:
    """Lay out the right operand (layered row sub-slices, column blocks)."""
    return _distribute(b, grid, "B")


def gather_global(d: DistMatrix) -> SparseMat:
    """Reassemble the global matrix; raises OverlapDetected if two ranks
    claim the same entry (ownership must be disjoint)."""
    rows, cols, vals = [], [], []
    for rank, m in enumerate(d.locals_):
        rr = d.row_range(rank)
        cr = d.col_range(rank)
        rows.append(m.row_idx + rr.start)
        cols.append(m.entry_cols() + cr.start)
        vals.append(m.values)
    sr = infer_semiring(d.locals_[0].values)
    return from_coo(d.nrows, d.ncols,
                    np.concatenate(rows), np.concatenate(cols),
                    np.concatenate(vals), sr, on_duplicate="error")


# ---------------------------------------------------------------------------
# block-cyclic batching of local B
# ---------------------------------------------------------------------------

def batch_piece_cols(local_cols: int, l: int, batches: int, piece: int) -> np.ndarray:
    """Local column indices of one block-cyclic batch piece.

    Columns are tiled by blocks of width ceil(local_cols / (batches*l));
    piece ``i`` takes every ``batches``-th block starting at block ``i``.
    Pieces are disjoint and jointly cover all columns, and each piece
    interleaves enough blocks that its later split into ``l`` layer
    shares stays balanced.
    """
    if batches <= 0:
        raise ZeroBatches(f"cannot batch into {batches} pieces")
    if not 0 <= piece < batches:
        raise ZeroBatches(f"piece {piece} outside [0, {batches})")
    if local_cols == 0:
        return np.empty(0, dtype=np.int64)
    width = -(-local_cols // (batches * l))
    cols: list[int] = []
    for start in range(piece * width, local_cols, batches * width):
        cols.extend(range(start, min(start + width, local_cols)))
    return np.asarray(cols, dtype=np.int64)


def batch_piece_blocks(local_cols: int, l: int, batches: int,
                       piece: int) -> list[np.ndarray]:
    """The piece's columns grouped into its ``l`` layer shares.

    Share ``k`` of piece ``i`` is cyclic block ``i + k*batches``, so a
    share is one contiguous column run, concatenating a piece's shares
    reproduces ``batch_piece_cols``, and walking share ``k`` across the
    pieces in piece order sweeps the local columns left to right. Shares
    past the last real block come back empty.
    """
    if batches <= 0:
        raise ZeroBatches(f"cannot batch into {batches} pieces")
    if not 0 <= piece < batches:
        raise ZeroBatches(f"piece {piece} outside [0, {batches})")
    if local_cols == 0:
        return [np.empty(0, dtype=np.int64) for _ in range(l)]
    width = -(-local_cols // (batches * l))
    shares = []
    for k in range(l):
        start = (piece + k * batches) * width
        stop = min(start + width, local_cols)
        shares.append(np.arange(start, max(start, stop), dtype=np.int64))
    return shares


def batch_split_b(db: DistMatrix, batches: int) -> list[list[SparseMat]]:
    """Cut every rank's local B into block-cyclic column pieces.

    Result is indexed [rank][piece]. Reassembling the pieces in cyclic
    column order restores the local matrix.
    """
    out = []
    for m in db.locals_:
        out.append([col_split_at(m, batch_piece_cols(m.ncols, db.grid.l,
                                                     batches, t))
                    for t in range(batches)])
    return out
