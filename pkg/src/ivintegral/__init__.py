"""Identify the average causal slope ``theta(x)`` through an instrumental-variable integral equation.

Modules
-------
model        structural scenarios, simulation, ground truth
estimation   empirical CDF kernel, conditional means, smoothed means
solver       quadrature, Tikhonov / truncated-SVD inversion, antiderivative
diagnostics  condition reports, rate checks, error metrics
io           CSV / JSON formats
cli          command-line pipelines
"""

from .diagnostics import (
    ConditionReport,
    completeness_spectrum,
    condition5_grid,
    density_sup_estimate,
    error_metrics,
    forward_consistency,
    rate_check_phi,
    rate_check_sigma,
)
from .estimation import (
    EmpiricalCdf,
    KernelMatrix,
    MuEstimate,
    RhsVector,
    build_kernel,
    build_rhs,
    empirical_cdf,
    estimate_mu,
    smoothed_mu,
)
from .model import (
    Distribution,
    GFamily,
    SampleSet,
    Scenario,
    SmoothFunctionSpec,
    check_condition5,
    draw_sample_set,
    null_scenario,
    oracle_theta_mc,
    scenario_quadratic,
    scenario_s1,
    true_theta,
)
from .solver import (
    QuadratureGrid,
    RegularizedSolution,
    TikhonovProblem,
    antiderivative,
    assemble_system,
    forward_apply,
    make_grid,
    select_lambda,
    solve_tikhonov,
)

__version__ = "0.1.0"
