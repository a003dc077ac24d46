"""Exception types raised across the package.

Everything derives from SpgemmError so callers can catch one base class.
The names mirror the failure condition, not the module that raises them;
several are shared (DimMismatch is raised by kernels and matrix ops alike).
"""

from __future__ import annotations


class SpgemmError(Exception):
    """Base class for all errors raised by this package."""


# ---- matrix construction and slicing ----

class IndexOutOfRange(SpgemmError):
    """A row or column index falls outside the declared matrix shape."""


class ZeroParts(SpgemmError):
    """A split into zero parts was requested."""


class RowCountMismatch(SpgemmError):
    """Column concatenation requires every part to share the row count."""


class DimMismatch(SpgemmError):
    """Inner dimensions of a product (or merge operands) do not agree."""


class TooLargeForOracle(SpgemmError):
    """The dense reference multiply refuses matrices past its size guard."""


# ---- local kernels ----

class EmptyPile(SpgemmError):
    """A merge was asked to combine zero partial results."""


class UnsortedInput(SpgemmError):
    """A sorted-input kernel received a matrix without sorted columns."""


class DuplicateRows(SpgemmError):
    """Finalization found a repeated row index inside one column."""


# ---- process grid and distribution ----

class InvalidGrid(SpgemmError):
    """Base for grid shape errors."""


class IndivisibleLayers(InvalidGrid):
    """The process count is not divisible by the layer count."""


class NonSquareLayer(InvalidGrid):
    """Processes per layer do not form a square 2D grid."""


class ZeroBatches(SpgemmError):
    """A batch split into zero pieces was requested."""


class OverlapDetected(SpgemmError):
    """Gather found the same global entry owned by two ranks."""


# ---- runtime ----

class RankPanic(SpgemmError):
    """A rank worker raised; the whole simulated world was torn down.

    Carries the failing rank id and the original exception.
    """

    def __init__(self, rank: int, cause: BaseException, detail: str = ""):
        self.rank = rank
        self.cause = cause
        msg = f"rank {rank} failed: {cause!r}"
        if detail:
            msg += "\n" + detail
        super().__init__(msg)


class InvalidRoot(SpgemmError):
    """Broadcast root is not a member of the communicator."""


class PieceCountMismatch(SpgemmError):
    """An all-to-all was given a piece list whose length is not the group size."""


# ---- planning and memory ----

class InsufficientMemory(SpgemmError):
    """Per-rank budget cannot even hold the distributed inputs."""


class MemoryBudgetExceeded(SpgemmError):
    """A rank's tracked live words went past its budget during a run."""


class InsufficientAggregateMemory(SpgemmError):
    """Aggregate machine memory cannot hold the inputs."""


# ---- input parsing and generation ----

class BadParams(SpgemmError):
    """Generator parameters are out of range or inconsistent."""


class ParseError(SpgemmError):
    """A matrix file is malformed; message carries the line number."""


class UnsupportedField(SpgemmError):
    """The matrix file uses a field this reader does not support."""
