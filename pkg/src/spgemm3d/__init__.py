"""Memory-constrained batched 3D sparse matrix multiplication, simulated.

The package multiplies sparse matrices on a simulated grid of ranks
arranged as layers of square meshes, counts every word the algorithm
would move, plans batch counts against memory budgets, and predicts
phase costs from closed-form machine parameters.
"""

from .costmodel import (
    MachineParams,
    ProblemShape,
    lower_bound_batches,
    mem_estimate,
    predict,
    sweep_plan,
)
from .errors import SpgemmError
from .grid import (
    DistMatrix,
    GridShape3D,
    distribute_a,
    distribute_b,
    gather_global,
    make_grid,
)
from .mmio import mm_to_string, read_mm, write_mm
from .semiring import (
    FLOAT64_PLUS_TIMES,
    INT64_PLUS_TIMES,
    PATTERN,
    Semiring,
    semiring_by_name,
)
from .sparse import (
    SparseMat,
    bit_identical,
    canonical_equals,
    dense_multiply_oracle,
    from_coo,
    from_triples,
    identity,
    transpose,
)
from .summa import (
    BatchPlan,
    MultiplyResult,
    SymbolicReport,
    TopKCollector,
    batched_summa3d,
    multiply,
    plan_batches,
    run_symbolic,
    summa2d,
)
from .synth import gen_er, gen_rmat

__version__ = "0.1.0"

__all__ = [
    "BatchPlan", "DistMatrix", "FLOAT64_PLUS_TIMES", "GridShape3D",
    "INT64_PLUS_TIMES", "MachineParams", "MultiplyResult", "PATTERN",
    "ProblemShape", "Semiring", "SparseMat", "SpgemmError", "SymbolicReport",
    "TopKCollector", "batched_summa3d", "bit_identical", "canonical_equals",
    "dense_multiply_oracle", "distribute_a", "distribute_b", "from_coo",
    "from_triples", "gather_global", "gen_er", "gen_rmat", "identity",
    "lower_bound_batches", "make_grid", "mem_estimate", "mm_to_string",
    "multiply", "plan_batches", "predict", "read_mm", "run_symbolic",
    "semiring_by_name", "summa2d", "sweep_plan", "transpose", "write_mm",
]
