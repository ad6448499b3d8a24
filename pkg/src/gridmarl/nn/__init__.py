"""Numpy networks: gradient tape, parameter containers, optimizers."""

from .autodiff import Var, leaf, min_relu_preactivation
from .checkpoint import load as load_checkpoint
from .checkpoint import save as save_checkpoint
from .network import (
    GraphBatch,
    Trace,
    backward,
    batch_subgraphs,
    critic_forward,
    critic_values,
    mlp_logprobs,
    policy_forward,
    policy_logprobs,
)
from .optim import AdamState, PlateauSchedule, adam_state, adam_step, plateau_update
from .params import (
    LayerParams,
    MlpParams,
    NetParams,
    Params,
    RoundParams,
    add_scaled_,
    edge_update,
    max_abs,
    new_graph_net,
    new_mlp,
    scale_,
    vertex_update,
    zeros_like_params,
)

__all__ = [
    "AdamState",
    "GraphBatch",
    "LayerParams",
    "MlpParams",
    "NetParams",
    "Params",
    "PlateauSchedule",
    "RoundParams",
    "Trace",
    "Var",
    "adam_state",
    "adam_step",
    "add_scaled_",
    "backward",
    "batch_subgraphs",
    "critic_forward",
    "critic_values",
    "edge_update",
    "leaf",
    "load_checkpoint",
    "max_abs",
    "min_relu_preactivation",
    "mlp_logprobs",
    "new_graph_net",
    "new_mlp",
    "plateau_update",
    "policy_forward",
    "policy_logprobs",
    "save_checkpoint",
    "scale_",
    "vertex_update",
    "zeros_like_params",
]
