"""fleetsim: zone-graph ride-hailing repositioning simulator and policies."""

from .agent import Hyperparams, ReplayBuffer, anneal_threshold, select_action, sync_target, train
from .demand import ArrivalCursor, DemandConfig, Order, parse_trip_records, synth_orders
from .mdp import State, StateDims, Transition
from .qnet import QNetwork, encode_state, grad_check, masked_max, sgd_step, td_target
from .sim import MetricsReport, Simulation, compute_reward
from .zones import (
    ActionMask,
    ZoneNetwork,
    action_space,
    build_action_mask,
    head_width,
    load_network,
    load_network_file,
    max_degree,
    resolve_action,
)

__all__ = [
    "ActionMask",
    "ArrivalCursor",
    "DemandConfig",
    "Hyperparams",
    "MetricsReport",
    "Order",
    "QNetwork",
    "ReplayBuffer",
    "Simulation",
    "State",
    "StateDims",
    "Transition",
    "ZoneNetwork",
    "action_space",
    "anneal_threshold",
    "build_action_mask",
    "compute_reward",
    "encode_state",
    "grad_check",
    "head_width",
    "load_network",
    "load_network_file",
    "masked_max",
    "max_degree",
    "parse_trip_records",
    "resolve_action",
    "select_action",
    "sgd_step",
    "sync_target",
    "synth_orders",
    "td_target",
    "train",
]
