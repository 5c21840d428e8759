"""Stochastic linear-quadratic control toolkit.

Solves finite-horizon, infinite-horizon, constant-Hamiltonian (cell) and
average-cost formulations of the LQ problem with multiplicative noise, and
certifies exponential turnpike and ergodic-cost behavior with coupled
Monte Carlo experiments.
"""

from .backend import available_backends, backend_name, select_backend
from .cell import (
    CellError,
    CellSolution,
    HamiltonianEval,
    cell_residual,
    enumerate_cell_solutions_special,
    hamiltonian,
    hamiltonian_at,
    homogeneous_hamiltonian,
    solve_cell,
)
from .model import (
    LQModel,
    ModelError,
    ValidationReport,
    dump_model,
    load_model,
    read_model,
    validate_model,
    write_model,
)
from .riccati import (
    AreSolution,
    FiniteHorizonSolution,
    RiccatiError,
    are_residual,
    complete_finite_horizon,
    integrate_dre,
    solve_are_stabilizing,
    solve_finite_horizon,
    value_finite,
)
from .rng import NoisePath
from .sde_lab import (
    EmpiricalMeasure,
    SimConfig,
    SimulationError,
    TrajectoryBundle,
    cost_along,
    deviation_curve,
    moment_curve,
    simulate_affine_closed_loop,
    simulate_cell_ensemble,
    simulate_coupled_ensemble,
    snapshot_measure,
    stationarity_residual,
    wasserstein2_estimate,
)
from .stability import (
    ClosedLoopPair,
    StabilityCert,
    StabilityError,
    find_stabilizer,
    is_l2_exp_stable,
    is_stabilizer,
    lyap_operator_matrix,
    solve_generalized_lyapunov,
)
from .static_opt import (
    StaticOptError,
    StaticOptimum,
    solve_static_kkt,
    static_from_cell,
    static_objective,
)
from .turnpike import (
    CoefficientCertificate,
    DecayFit,
    ErgodicReport,
    StateTurnpikeCertificate,
    TurnpikeCertificate,
    certify_coefficient_convergence,
    certify_state_turnpike,
    certify_turnpike,
    default_tau,
    ergodic_report,
    fit_exponential,
)

__version__ = "0.1.0"
