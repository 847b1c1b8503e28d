"""Solvers, benchmark problems, and verification tools for discretized
ill-posed inverse problems.

The package provides stochastic and full-gradient iterations — plain and
with a data-driven (truncated-SVD surrogate) regularization term — together
with classic mildly ill-posed test problems, ensemble experiment drivers,
and a numerical verification layer that checks the implementation against
closed-form oracles and structural inequalities.
"""

from .analysis import (
    DecayFit,
    MeanRecursionReport,
    NoiseMomentReport,
    PathwiseReport,
    bias_variance,
    check_pathwise_contraction,
    enumerate_mean_error,
    fit_decay,
    pathwise_step_constants,
    phi_bound_check,
    rho_radius,
    stability_sweep,
    stochastic_noise_moments,
    theoretical_decay_exponent,
)
from .operators import (
    AssumptionConstants,
    BasisReport,
    DataDrivenOp,
    ForwardOp,
    Nonlinearity,
    apply,
    cone_ratio,
    estimate_cone_constant,
    full_gradient,
    measure_constants,
    range_invariance_gap,
    rms_norm,
    row_gradient_step,
    row_value,
    truncate_svd,
    verify_assumption_v,
)
from .problems import (
    NoisyData,
    Problem,
    SourceFixture,
    add_noise,
    apply_source_fixture,
    load_problem,
    make_gravity,
    make_phillips,
    make_shaw,
    make_source_fixture,
    save_problem,
    squared_variant,
)
from .solvers import (
    APriori,
    DivergenceError,
    Ensemble,
    MaxEpochs,
    OracleBest,
    RecordSpec,
    Schedule,
    Trajectory,
    apriori_k_star,
    default_eta0,
    dsgd_run,
    eta_at,
    lambda_at,
    landweber_run,
    paper_landweber_step,
    run_ensemble,
)
from .verify import VerifyResult, run_suite

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # operators
    "AssumptionConstants",
    "BasisReport",
    "DataDrivenOp",
    "ForwardOp",
    "Nonlinearity",
    "apply",
    "cone_ratio",
    "estimate_cone_constant",
    "full_gradient",
    "measure_constants",
    "range_invariance_gap",
    "rms_norm",
    "row_gradient_step",
    "row_value",
    "truncate_svd",
    "verify_assumption_v",
    # problems
    "NoisyData",
    "Problem",
    "SourceFixture",
    "add_noise",
    "apply_source_fixture",
    "load_problem",
    "make_gravity",
    "make_phillips",
    "make_shaw",
    "make_source_fixture",
    "save_problem",
    "squared_variant",
    # solvers
    "APriori",
    "DivergenceError",
    "Ensemble",
    "MaxEpochs",
    "OracleBest",
    "RecordSpec",
    "Schedule",
    "Trajectory",
    "apriori_k_star",
    "default_eta0",
    "dsgd_run",
    "eta_at",
    "lambda_at",
    "landweber_run",
    "paper_landweber_step",
    "run_ensemble",
    # analysis
    "DecayFit",
    "MeanRecursionReport",
    "NoiseMomentReport",
    "PathwiseReport",
    "bias_variance",
    "check_pathwise_contraction",
    "enumerate_mean_error",
    "fit_decay",
    "pathwise_step_constants",
    "phi_bound_check",
    "rho_radius",
    "stability_sweep",
    "stochastic_noise_moments",
    "theoretical_decay_exponent",
    # verify
    "VerifyResult",
    "run_suite",
]
