"""Exact equilibria, packet routing and convergence measurement for flows over time
in the deterministic queueing model."""

from __future__ import annotations

from .harness import SweepConfig, SweepRow, export_report, run_convergence_sweep, sup_distance
from .instance import (
    Arc,
    Instance,
    InstanceError,
    empty_network_labels,
    load_instance,
    parse_instance,
    serialize_instance,
    validate_instance,
)
from .loading import (
    Affine,
    Outcome,
    StrategyClass,
    earliest_arrival_labels,
    load_profile,
    measure_epsilon,
    measure_overtaking,
    measure_strict_delta,
    thin_flow_residuals,
)
from .packets import (
    PacketInstance,
    PacketProfile,
    best_response,
    embed_packets,
    find_packet_equilibrium,
    simulate_packets,
)
from .thinflow import (
    Configuration,
    GeneralizedSubnetwork,
    ThinFlow,
    check_thin_flow,
    classify_configuration,
    is_valid_configuration,
    solve_thin_flow,
    thin_flow_oracle,
)
from .trajectory import (
    Trajectory,
    compute_trajectory,
    derive_exact_profile,
    evaluate_trajectory,
    steady_state_info,
)

__version__ = "0.1.0"
