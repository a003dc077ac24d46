"""Shared helpers for the test suite."""

from __future__ import annotations

import numpy as np

from spgemm3d.semiring import (
    FLOAT64_PLUS_TIMES as FLOAT_SR,
    INT64_PLUS_TIMES as INT_SR,
    PATTERN as PATTERN_SR,
    Semiring,
)
from spgemm3d.sparse import SparseMat, from_coo

__all__ = [
    "INT_SR", "FLOAT_SR", "PATTERN_SR",
    "rand_mat", "dense_of", "dense_to_triples", "unsorted_mat",
]


def rand_mat(rng: np.random.Generator, nrows: int, ncols: int, density: float,
             sr: Semiring = INT_SR, lo: int = 1, hi: int = 9) -> SparseMat:
    """Random canonical matrix with i.i.d. Bernoulli(density) pattern."""
    mask = rng.random((nrows, ncols)) < density
    rows, cols = np.nonzero(mask)
    if sr.dtype is np.bool_:
        vals = np.ones(len(rows), dtype=np.bool_)
    elif np.dtype(sr.dtype).kind == "i":
        vals = rng.integers(lo, hi + 1, size=len(rows)).astype(np.int64)
    else:
        vals = rng.uniform(0.5, 2.0, size=len(rows))
    return from_coo(nrows, ncols, rows.astype(np.int64), cols.astype(np.int64),
                    vals, sr)


def dense_of(m: SparseMat, sr: Semiring) -> list[list]:
    """Row-major dense accumulation of a matrix's entries (merges
    duplicates with the semiring add, keeps explicit zeros as zero)."""
    grid = [[sr.zero] * m.ncols for _ in range(m.nrows)]
    cols = m.entry_cols()
    for r, c, v in zip(m.row_idx.tolist(), cols.tolist(), m.values.tolist()):
        grid[r][c] = sr.add(grid[r][c], v)
    return grid


def dense_to_triples(grid, sr: Semiring):
    out = []
    for r, row in enumerate(grid):
        for c, v in enumerate(row):
            if v != sr.zero:
                out.append((r, c, v))
    return out


def unsorted_mat(nrows: int, ncols: int, col_ptr, row_idx, values,
                 sr: Semiring = INT_SR) -> SparseMat:
    """Hand-built matrix with no sortedness promise (duplicates allowed)."""
    return SparseMat(nrows, ncols,
                     np.asarray(col_ptr, dtype=np.int64),
                     np.asarray(row_idx, dtype=np.int64),
                     sr.values(values), sorted=False)
