"""Batched generalized least squares for genome-wide association sweeps.

Three engines solve the same (SNP x trait) grid of GLS problems:

* :func:`sweep_naive`, one factorization per problem (the oracle),
* :func:`sweep_chol`, one Cholesky factorization per trait,
* :func:`sweep_eig`, one eigendecomposition for all traits.
"""

__version__ = "0.1.0"

from .chol import solve_single_chol, sweep_chol
from .datagen import ScenarioSpec, gen_scenario
from .eig import solve_single_eig, sweep_eig
from .errors import (
    CollinearityError,
    ConfigError,
    FormatError,
    GlsError,
    IndefiniteError,
    NumericError,
    ProblemError,
    StreamIOError,
    StructuralError,
    ValidationError,
)
from .model import Dataset, Dimensions, GlsResult, TraitParams, assemble_covariance, validate_dataset
from .naive import solve_gls_naive, sweep_naive
from .results import ResultCollector, compare_grids
from .streamio import MatrixFile, ResultWriter, read_matrix, read_results, write_matrix

__all__ = [
    "CollinearityError",
    "ConfigError",
    "Dataset",
    "Dimensions",
    "FormatError",
    "GlsError",
    "GlsResult",
    "IndefiniteError",
    "MatrixFile",
    "NumericError",
    "ProblemError",
    "ResultCollector",
    "ResultWriter",
    "ScenarioSpec",
    "StreamIOError",
    "StructuralError",
    "TraitParams",
    "ValidationError",
    "assemble_covariance",
    "compare_grids",
    "gen_scenario",
    "read_matrix",
    "read_results",
    "solve_gls_naive",
    "solve_single_chol",
    "solve_single_eig",
    "sweep_chol",
    "sweep_eig",
    "sweep_naive",
    "validate_dataset",
    "write_matrix",
]
