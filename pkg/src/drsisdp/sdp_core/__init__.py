"""Dense symmetric linear algebra and an embedded SDP solver."""
from .ipm import SolveResult, SolverOptions, Status, solve
from .linalg import (NumericalFailure, SymMatrix, as_sym, is_psd, min_eig, smat, svec,
                     svec_basis, sym_dim, symmetrize, triu_pairs)
from .program import ConicProgram, LmiBlock

__all__ = [
    "ConicProgram", "LmiBlock", "NumericalFailure", "SolveResult", "SolverOptions", "Status",
    "SymMatrix", "as_sym", "is_psd", "min_eig", "smat", "solve", "svec", "svec_basis",
    "sym_dim", "symmetrize", "triu_pairs",
]
