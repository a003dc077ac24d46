"""Scalar algebra used by every multiply and merge.

A semiring bundles the add and multiply callables with their additive
identity and the numpy dtype used to store values. Two arithmetic
semirings ship with the package, plus a boolean pattern semiring used
when only the nonzero structure matters:

* ``INT64_PLUS_TIMES`` -- ordinary (+, *) on 64-bit integers, exact.
* ``FLOAT64_PLUS_TIMES`` -- (+, *) on doubles; comparisons use a relative
  tolerance because reduction order differs between kernels.
* ``PATTERN`` -- (or, and) on booleans.

``zero`` must be the additive identity and absorbing under ``mul``;
entries that accumulate to ``zero`` are dropped whenever a matrix is
canonicalized or merged.
"""

from __future__ import annotations

import operator
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

# Relative tolerance applied when comparing values of inexact semirings.
DEFAULT_REL_TOL = 1e-9


@dataclass(frozen=True)
class Semiring:
    name: str
    add: Callable[[Any, Any], Any]
    mul: Callable[[Any, Any], Any]
    zero: Any
    dtype: Any = field(default=np.float64)
    # exact: equality of values is meaningful bit-for-bit (integers, bools).
    exact: bool = True
    # plus_times: add/mul are the native + and * of the dtype, which lets
    # canonicalization use vectorized numpy reductions instead of a loop.
    plus_times: bool = False

    def values(self, seq) -> np.ndarray:
        """Pack a Python sequence of semiring elements into a storage array."""
        return np.asarray(list(seq), dtype=self.dtype)

    def empty_values(self) -> np.ndarray:
        return np.empty(0, dtype=self.dtype)

    def __repr__(self) -> str:  # keep reports short
        return f"Semiring({self.name})"


INT64_PLUS_TIMES = Semiring(
    name="int64,+,*",
    add=operator.add,
    mul=operator.mul,
    zero=0,
    dtype=np.int64,
    exact=True,
    plus_times=True,
)

FLOAT64_PLUS_TIMES = Semiring(
    name="float64,+,*",
    add=operator.add,
    mul=operator.mul,
    zero=0.0,
    dtype=np.float64,
    exact=False,
    plus_times=True,
)

PATTERN = Semiring(
    name="bool,|,&",
    add=operator.or_,
    mul=operator.and_,
    zero=False,
    dtype=np.bool_,
    exact=True,
    plus_times=False,
)

_BY_NAME = {s.name: s for s in (INT64_PLUS_TIMES, FLOAT64_PLUS_TIMES, PATTERN)}
_ALIASES = {
    "int": INT64_PLUS_TIMES,
    "int64": INT64_PLUS_TIMES,
    "integer": INT64_PLUS_TIMES,
    "float": FLOAT64_PLUS_TIMES,
    "float64": FLOAT64_PLUS_TIMES,
    "real": FLOAT64_PLUS_TIMES,
    "pattern": PATTERN,
    "bool": PATTERN,
}


def semiring_by_name(name: str) -> Semiring:
    """Look up a bundled semiring by its name or a common alias."""
    sr = _BY_NAME.get(name) or _ALIASES.get(name.lower())
    if sr is None:
        raise KeyError(f"unknown semiring {name!r}")
    return sr


def infer_semiring(values: np.ndarray) -> Semiring:
    """Pick the bundled semiring matching an array's dtype."""
    kind = np.asarray(values).dtype.kind
    if kind in "iu":
        return INT64_PLUS_TIMES
    if kind == "b":
        return PATTERN
    return FLOAT64_PLUS_TIMES
