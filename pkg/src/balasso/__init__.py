"""Bayesian adaptive Lasso: Gibbs samplers, sparse selection and model averaging."""
from __future__ import annotations

__version__ = "0.1.0"

from .data import CsvSchema, Dataset, DataError, load_csv, standardize
from .distributions import (
    InverseGaussianParams,
    NumericalError,
    ParameterError,
    RngHandle,
    sample_gamma,
    sample_inverse_gaussian,
    sample_mvn,
)
from .general import (
    CapStructure,
    GroupGibbsState,
    LsaSurrogate,
    fit_linear_lsa,
    fit_logistic_mle,
    gibbs_step_cap,
    gibbs_step_group,
    gibbs_step_lsa,
    lsa_pseudo_data,
    run_chain_group,
    run_chain_lsa,
)
from .gibbs import (
    ChainConfig,
    ChainStore,
    LinearGibbsState,
    PenaltyMode,
    gibbs_step_linear,
    run_chain_linear,
)
from .inference import (
    SelectionResult,
    SparsityPattern,
    compute_pse,
    estimate_pmp,
    predict_bma,
    select_freq,
    select_group,
    select_point,
)
from .persistence import load_chain, save_chain
from .solvers import (
    GroupL1Problem,
    NonConvergenceError,
    QuadraticL1Problem,
    SolverConfig,
    WeightedL1Problem,
    solve_group_lasso,
    solve_quadratic_lasso,
    solve_weighted_lasso,
)
