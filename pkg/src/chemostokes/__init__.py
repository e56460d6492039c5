"""Numerical laboratory for a chemotaxis-Stokes system with singular
sensitivity: staggered-grid solver, energy and certificate machinery,
functional-constant estimation, and trajectory audits."""

from .grid import (
    GridSpec,
    ScalarField,
    VectorField,
    constant,
    divergence,
    export_csv,
    from_function,
    grad_norm_sq,
    gradient,
    integrate,
    laplacian,
    load_field,
    lp_norm,
    mean,
    read_snapshot,
    save_field,
    vec_grad_magnitude,
    vec_l2_norm_sq,
    vec_lp_norm,
    vec_magnitude,
    w12_norm_sq,
    write_snapshot,
    zero_vector,
    zeros,
)
from .sensitivity import Eps, Identity, f, f_prime, rho
from .stokes import DecayTrial, SolverError, StokesSolver, fit_ku, lambda1
from .dynamics import (
    CFLError,
    FloorError,
    InvariantViolation,
    PotentialData,
    RunOptions,
    SimState,
    run,
    step,
    step_log,
    step_original,
    to_log,
    to_original,
)
from .energy import (
    Certificate,
    EnergyBounds,
    GrowthTrace,
    bracket_coefficient,
    certify,
    dissipation,
    energy_bounds,
    energy_step_audit,
    f_mu,
    fit_k4,
    spatiotemporal_budget,
)
from .functional_constants import (
    ConstantEstimate,
    VerifyResult,
    estimate,
    filtered_noise,
    quotient,
    verify,
)
from .monitor import (
    ConvergenceReport,
    TraceRecord,
    Z4Params,
    audit_k4,
    audit_l2,
    audit_z4,
    audit_zbound,
    calibrate_z4_constant,
    convergence_report,
    make_record,
    read_trace,
    write_trace,
)
from .kernels import BACKEND, active_backend

__version__ = "0.1.0"
