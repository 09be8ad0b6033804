"""compatkit: numerical evaluation of the lasso compatibility constant.

Computes phi exactly by sign-pattern enumeration of convex QPs, or bounds it
with a branch-and-bound MIQP under time limits, and ships the simulation and
active-set-estimation machinery needed to study phi against the lasso's
mean-squared-error bound.
"""

__version__ = "0.1.0"

from .bnb import BnbConfig, Formulation, phi_bnb, warm_start
from .compound import CompoundSymmetry, population_phi_sq, quad_form_decomposition, witness_vector
from .enumeration import FixedSignSubproblem, build_fixed_sign_qp, phi_enumerate, phi_for_pattern
from .lasso import cross_validate, estimate_active_set, fit_lasso, lambda_bound, sigma_sq_unbiased
from .model import (
    ActiveSet,
    CompatResult,
    CompatStatus,
    DesignMatrix,
    EPS_ZERO,
    GramMatrix,
    SignPattern,
    gram,
    standardize,
)
from .qp import QpProblem, QpSolution, QpStatus, SolverTolerances, solve_qp
from .simulate import ExperimentRecord, SimConfig, evaluate_cell, gen_compound_data, phi_curve, run_grid

__all__ = [
    "ActiveSet",
    "BnbConfig",
    "CompatResult",
    "CompatStatus",
    "CompoundSymmetry",
    "DesignMatrix",
    "EPS_ZERO",
    "ExperimentRecord",
    "FixedSignSubproblem",
    "Formulation",
    "GramMatrix",
    "QpProblem",
    "QpSolution",
    "QpStatus",
    "SignPattern",
    "SimConfig",
    "SolverTolerances",
    "build_fixed_sign_qp",
    "cross_validate",
    "estimate_active_set",
    "evaluate_cell",
    "fit_lasso",
    "gen_compound_data",
    "gram",
    "lambda_bound",
    "phi_bnb",
    "phi_curve",
    "phi_enumerate",
    "phi_for_pattern",
    "population_phi_sq",
    "quad_form_decomposition",
    "run_grid",
    "sigma_sq_unbiased",
    "solve_qp",
    "standardize",
    "warm_start",
    "witness_vector",
]
