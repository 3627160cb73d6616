"""Value functions for discounted control across a dynamics/cost discontinuity.

The package solves infinite-horizon discounted problems whose dynamics and
running costs jump across the hyperplane {x_N = 0}: the extremal value
functions (all trajectories vs. regular-sliding trajectories), the eta-relaxed
family interpolating between them, and the switch-blended finite-difference
approximation, together with a verification harness for the orderings, limits
and equation residuals these objects must satisfy.
"""

from .bellman import (
    MINUS,
    PLUS,
    Grid,
    GridFunction,
    SolverConfig,
    SolverError,
    ValueClass,
    build_grid,
    dpp_residual,
    eta_class,
    filippov_class,
    finite_horizon_oracle,
    interface_admissibility_mask,
    solve_value,
    value_tolerance,
)
from .dynamics import (
    ExtendedControl,
    RegularityReport,
    Regime,
    Trajectory,
    classify,
    discounted_cost,
    integrate,
    regularize_control,
    sliding_mix,
)
from .filippov import FDScheme, epsilon_sweep, solve_filippov
from .hamiltonians import (
    HamiltonianQuery,
    NoAdmissibleControlError,
    control_reduction_radius,
    evaluate_hamiltonian,
    filippov_hamiltonian,
    hamiltonian_global,
    hamiltonian_side,
    tangential_hamiltonian,
)
from .problems import (
    DomainError,
    PiecewiseToy,
    ProblemDefinitionError,
    ProblemSpec,
    Quadratic,
    Superlinear,
    dyn_cost,
    mixed_dyn_cost,
    pull_pull_toy,
    stay_put_control,
)

__version__ = "0.1.0"
