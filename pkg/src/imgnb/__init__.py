"""Graph neural contextual bandits for multi-round influence maximization."""
from .campaign import CampaignState, RoundRecord, compute_round_reward, run_campaign, run_round
from .clustering import ClusterMap, UserClusterer, cluster_users, read_cluster_map, write_cluster_map
from .config import ConfigError, ExperimentConfig, apply_overrides, load_config, parse_config_text
from .envs import (EventLog, EventLogError, ReplayEnvironment, SyntheticEnvironment,
                   SyntheticWorld, gen_synthetic, load_event_log, sample_event_log,
                   write_event_log)
from .gcn import GcnScorer, build_exploration_input, exploit_forward, explore_forward
from .graphs import UserGraph, build_graph, normalize_adjacency, propagate, rbf_weight
from .harness import aggregate, run_experiment, sweep
from .neural import EstimatorNet, TrainingDivergence, avg_pool, fc_forward, sgd_step
from .policies import IMGNB, LinUCBPolicy, RandomPolicy, make_policy, select_top_l
from .user_estimators import UserEstimatorBank

__all__ = [
    "CampaignState", "RoundRecord", "compute_round_reward", "run_campaign", "run_round",
    "ClusterMap", "UserClusterer", "cluster_users", "read_cluster_map", "write_cluster_map",
    "ConfigError", "ExperimentConfig", "apply_overrides", "load_config", "parse_config_text",
    "EventLog", "EventLogError", "ReplayEnvironment", "SyntheticEnvironment", "SyntheticWorld",
    "gen_synthetic", "load_event_log", "sample_event_log", "write_event_log",
    "GcnScorer", "build_exploration_input", "exploit_forward", "explore_forward",
    "UserGraph", "build_graph", "normalize_adjacency", "propagate", "rbf_weight",
    "aggregate", "run_experiment", "sweep",
    "EstimatorNet", "TrainingDivergence", "avg_pool", "fc_forward", "sgd_step",
    "IMGNB", "LinUCBPolicy", "RandomPolicy", "make_policy", "select_top_l",
    "UserEstimatorBank",
]
__version__ = "0.1.0"
