"""Experiment configuration, Monte-Carlo drivers and the ``dkf-net`` command."""
from .config import ConfigError, ExperimentConfig, build_plant, build_topology, parse_config
from .experiments import (MseRow, MseTable, Workload, run_bounds_report, run_min_pbeta_sweep,
                          run_mse_experiment, run_pushsum)
