"""Distributed Kalman filtering over networks with random symmetric link failures."""

from .graph import (
    Graph,
    LinkFailureModel,
    build_graph,
    default_topology,
    estimate_disconnection_probability,
    is_connected,
    laplacian,
    orthonormal_complement,
    sample_subgraph,
    spectrum,
    theta_matrix,
)
from .model import Plant, paper5_plant, simulate, simulate_batch, solve_riccati
from .pushsum import PushSumNetwork, pushsum_round
from .dkf import ConsensusParams, DkfNetwork, default_delta, frozen_gains, run_batch
from .analysis import bounds_report, kron_square_radius, minimal_gamma

__version__ = "0.1.0"
