"""Dynamical flow networks on acyclic multigraphs.

Simulation of density dynamics under distributed routing policies,
asymptotic (limit) flow computation, min-cut capacity, and weak-resilience
estimation against capacity-reducing perturbations.
"""

__version__ = "0.1.0"

from .topology import (
    Cut,
    Link,
    NetworkTopology,
    TopologyError,
    ValidationResult,
    enumerate_od_cuts,
    max_flow_value,
    min_cut_capacity,
    topological_order,
    validate_topology,
)
from .flows import (
    CustomFlow,
    ExponentialFlow,
    FlowFunction,
    FlowNetwork,
    InadmissiblePerturbation,
    PerturbationSpec,
    scale_perturbation,
)
from .routing import (
    GenericPolicy,
    LogitPolicy,
    RoutingPolicy,
    check_property_a,
    check_property_b,
    cooperative_gap,
)
from .dynamics import (
    LimitFlow,
    LocalSolverError,
    SimulationConfig,
    SimulationError,
    Trajectory,
    alpha_transfer_estimate,
    convergence_check,
    detect_saturation,
    limit_flow_estimate,
    local_limit_flow,
    network_limit_flow,
    rhs,
    simulate,
    simulate_local,
)
from .resilience import (
    AttackOutcome,
    AttackScenario,
    ResilienceReport,
    cut_attack,
    estimate_weak_resilience,
    evaluate_attack,
    initial_densities,
    sample_scaling_perturbations,
)
from .scenario import Scenario, ScenarioError, load_scenario, parse_scenario, validate_scenario

__all__ = [name for name in dir() if not name.startswith("_")]
