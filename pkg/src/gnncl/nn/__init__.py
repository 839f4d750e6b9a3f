"""GNN backbones, attention snapshots, and checkpointing."""

from .checkpoint import (
    load_checkpoint,
    read_blob,
    save_checkpoint,
    write_blob,
)
from .layers import GatLayer, GcnLayer, GinLayer, ModelError, activation_fn
from .model import (
    BACKBONES,
    AttentionSnapshot,
    ForwardContext,
    GnnModel,
    ModelConfig,
    class_columns,
    head_logits,
    model_forward,
    nonparam_attention,
)

__all__ = [
    "AttentionSnapshot", "BACKBONES", "ForwardContext", "GatLayer",
    "GcnLayer", "GinLayer", "GnnModel", "ModelConfig", "ModelError",
    "activation_fn", "class_columns", "head_logits", "load_checkpoint",
    "model_forward", "nonparam_attention", "read_blob", "save_checkpoint",
    "write_blob",
]
