"""Synthetic inputs: uniform random matrices and skewed power-law graphs.

Both generators are deterministic in their seed and draw from their own
generator instance, so two calls with equal arguments are bit-identical
no matter what else has run.
"""

from __future__ import annotations

import numpy as np

from .errors import BadParams
from .semiring import INT64_PLUS_TIMES, Semiring
from .sparse import SparseMat, from_coo


def _values_for(rng: np.random.Generator, n: int, sr: Semiring) -> np.ndarray:
    if sr.dtype is np.bool_:
        return np.ones(n, dtype=np.bool_)
    if np.dtype(sr.dtype).kind == "i":
        return rng.integers(1, 10, size=n).astype(np.int64)
    return rng.uniform(0.5, 2.0, size=n)


def gen_er(nrows: int, ncols: int, density: float, seed: int = 0,
           sr: Semiring = INT64_PLUS_TIMES) -> SparseMat:
    """Uniform Bernoulli matrix: each cell is present with ``density``.

    Sampling goes column by column, so the output does not depend on
    any internal blocking and memory stays at one column of randomness.
    """
    if nrows < 0 or ncols < 0:
        raise BadParams(f"negative shape {nrows} x {ncols}")
    if not 0.0 <= density <= 1.0:
        raise BadParams(f"density {density} outside [0, 1]")
    rng = np.random.default_rng(seed)
    rows_l, cols_l = [], []
    for j in range(ncols):
        hit = np.nonzero(rng.random(nrows) < density)[0]
        rows_l.append(hit.astype(np.int64))
        cols_l.append(np.full(len(hit), j, dtype=np.int64))
    rows = np.concatenate(rows_l) if rows_l else np.empty(0, dtype=np.int64)
    cols = np.concatenate(cols_l) if cols_l else np.empty(0, dtype=np.int64)
    vals = _values_for(rng, len(rows), sr)
    return from_coo(nrows, ncols, rows, cols, vals, sr)


def gen_rmat(scale: int, edge_factor: int = 16, seed: int = 0,
             a: float = 0.57, b: float = 0.19, c: float = 0.19,
             d: float = 0.05, sr: Semiring = INT64_PLUS_TIMES) -> SparseMat:
    """Recursive-quadrant random graph on 2**scale vertices.

    ``edge_factor * 2**scale`` edges are drawn; each edge walks
    ``scale`` levels, picking the top-left, top-right, bottom-left, or
    bottom-right quadrant with probabilities a, b, c, d. The walk is
    vectorized over all edges at once. Coincident edges merge, so the
    result usually has fewer nonzeros than edges were drawn.
    """
    if scale < 0:
        raise BadParams(f"scale must be nonnegative, got {scale}")
    if edge_factor < 1:
        raise BadParams(f"edge_factor must be at least 1, got {edge_factor}")
    probs = (a, b, c, d)
    if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
        raise BadParams(f"quadrant probabilities {probs} must be nonnegative "
                        f"and sum to 1")
    n = 1 << scale
    nedges = edge_factor * n
    rng = np.random.default_rng(seed)
    rows = np.zeros(nedges, dtype=np.int64)
    cols = np.zeros(nedges, dtype=np.int64)
    for _ in range(scale):
        r = rng.random(nedges)
        row_bit = (r >= a + b).astype(np.int64)          # bottom half
        col_bit = ((r >= a) & (r < a + b) | (r >= a + b + c)).astype(np.int64)
        rows = (rows << 1) | row_bit
        cols = (cols << 1) | col_bit
    vals = _values_for(rng, nedges, sr)
    return from_coo(n, n, rows, cols, vals, sr)
