"""Distributionally robust MPC for systems with multiplicative noise."""
from .model import (EPS_STRICT, AmbiguitySet, ConstraintSpec, CostSpec, DrmpcSpec, PolicyParams,
                    QuadRow, StageVariables, SystemModel, covariance_propagate, empirical_covariance,
                    mean_propagate, recover_gains)
from .program import (CovarianceTemplate, DrmpcProgram, GbarEvaluation, StageRefs,
                      allocate_stage_variables, build_moment_lmis, build_stage_lmis,
                      build_trace_constraints, eval_Gbar, reduce_samples, sample_covariance_tuple,
                      solve_drmpc)

__all__ = [
    "EPS_STRICT", "AmbiguitySet", "ConstraintSpec", "CostSpec", "DrmpcSpec", "PolicyParams",
    "QuadRow", "StageVariables", "SystemModel", "covariance_propagate", "empirical_covariance",
    "mean_propagate", "recover_gains", "CovarianceTemplate", "DrmpcProgram", "GbarEvaluation",
    "StageRefs", "allocate_stage_variables", "build_moment_lmis", "build_stage_lmis",
    "build_trace_constraints", "eval_Gbar", "reduce_samples", "sample_covariance_tuple", "solve_drmpc",
]
