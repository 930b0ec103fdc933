"""Graph-network surrogate: model, batching, losses with gradients and checkpoints."""
from .batch import GraphBatch, Normalizer, reverse_index
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .model import (
    PRESETS,
    EncodeProcessDecode,
    GnnConfig,
    Mlp,
    init_params,
    message_round,
    mlp_forward,
    param_checksum,
    param_count,
)
from .objective import (
    LossContext,
    TargetOracle,
    compute_losses,
    contact_fields,
    integrate_step,
    integrate_torch,
    loss_gradient,
)


def predict_accelerations(model, batch: GraphBatch):
    """Encode, ``k`` message rounds, decode; returns a numpy array (n_nodes, 3)."""
    import torch

    with torch.no_grad():
        return model(batch).numpy()


__all__ = [
    "CheckpointError", "EncodeProcessDecode", "GnnConfig", "GraphBatch", "LossContext", "Mlp", "Normalizer",
    "PRESETS", "TargetOracle", "compute_losses", "contact_fields", "init_params", "integrate_step",
    "integrate_torch", "load_checkpoint", "loss_gradient", "message_round", "mlp_forward", "param_checksum",
    "param_count", "predict_accelerations", "reverse_index", "save_checkpoint",
]
