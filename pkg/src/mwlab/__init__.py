"""Max-Weight switched networks: discrete simulation, exact fluid limits,
polyhedral invariant-set geometry, and seeded collapse experiments."""

from .arrivals import (
    ArrivalSpec,
    BurstSpec,
    ClosedForm,
    DeviationPath,
    MarkovSpec,
    f_tailed_probe,
    generate,
    heavy_traffic_sequence,
    max_deviation,
)
from .experiments import (
    BudgetError,
    ExperimentReport,
    ScalingSpec,
    converse_experiment,
    fluid_convergence_experiment,
    sensitivity_experiment,
    ssc_experiment,
    wmw_equivalence_check,
)
from .fluid import (
    DomainError,
    DriftCertificate,
    ExtremePointError,
    FluidTrajectory,
    InvariantSet,
    PotentialEval,
    attraction_rate,
    capacity_check,
    collapse_direction,
    fluid_drift,
    integrate_fluid,
    invariant_set,
    potential,
)
from .geometry import (
    MembershipResult,
    MinNormCertificate,
    NumericFailureError,
    Polyhedron,
    Polytope,
    hoffman_estimate,
    lp_membership,
    min_norm_point,
    project,
)
from .netmodel import (
    ConfigError,
    DiscreteTrajectory,
    InvalidActionError,
    Network,
    ScheduleDecision,
    close_actions,
    load_network,
    schedule,
    simulate,
    step,
    wmw_to_mw,
)

__version__ = "0.1.0"
