"""Implicit Euler / P1 Galerkin solver for second-order stochastic evolution
equations with nonlinear damping, plus the Monte Carlo verification harness.
"""

__version__ = "0.1.0"

from .mesh_fem import Mesh1D, TridiagonalMatrix, build_mesh
from .noise import WienerPath, coarsen_path, generate_path, refine_path
from .operators import (
    AuditReport,
    ElasticOperator,
    LinearDamping,
    ProblemSpec,
    RhoDamping,
    SpectralNoise,
    ZeroNoise,
    check_assumptions,
    mesh_problem,
    rho,
    scalar_surrogate,
)
from .stepper import (
    ForcingGrid,
    NonConvergence,
    SchemeParams,
    SineForcing,
    Trajectory,
    ZeroForcing,
    build_forcing_grid,
    integrate,
    scheme_params,
    solve_step,
    step_residual,
)
from .prolongation import (
    PiecewiseConstantProcess,
    evaluate,
    steklov_average,
    theta_plus,
    verify_steklov_identity,
)
from .analysis import (
    ConvergenceReport,
    EnergyLedger,
    EnsembleStats,
    audit_apriori,
    audit_energy,
    convergence_study,
    manufactured_errors,
    manufactured_problem,
    run_apriori_ensemble,
    uniqueness_experiment,
)
