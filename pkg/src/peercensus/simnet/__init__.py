"""Deterministic simulation harness: churn, analytic mining, networking,
attacker strategies, bootstrap from an existing chain, and metrics."""

from .attacks import ByzantineFuzz, DoubleSpender, Honest, Strategy, Withholding, make_strategy
from .bootstrap import BootstrapError, BootstrapPlan, bootstrap_from_chain, liveness_threshold
from .churn import ChurnParams, churn_counts, churn_step, online_fraction_trace, stationary_rho
from .cluster import Cluster, Node, NodeConfig, logs_prefix_comparable, one_op_per_timestamp
from .config import ChurnSpec, ConfigError, ScenarioConfig, load_config, load_yaml
from .entities import Entity, Ownership, Resource, Role, split_ratio
from .metrics import CSV_COLUMNS, Metrics, is_secure, is_secure_phi, read_csv
from .mining import block_share_trial, sample_block_event
from .network import DelaySpec, Network
from .scenario import run_scenario

__all__ = [
    "BootstrapError", "BootstrapPlan", "ByzantineFuzz", "CSV_COLUMNS", "ChurnParams", "ChurnSpec", "Cluster",
    "ConfigError", "DelaySpec", "DoubleSpender", "Entity", "Honest", "Metrics", "Network", "Node", "NodeConfig",
    "Ownership", "Resource", "Role", "ScenarioConfig", "Strategy", "Withholding", "block_share_trial",
    "bootstrap_from_chain", "churn_counts", "churn_step", "is_secure", "is_secure_phi", "liveness_threshold",
    "load_config", "load_yaml", "logs_prefix_comparable", "make_strategy", "one_op_per_timestamp",
    "online_fraction_trace", "read_csv", "run_scenario", "sample_block_event", "split_ratio", "stationary_rho",
]
