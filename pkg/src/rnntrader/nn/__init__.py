from .layers import (
    BatchTooSmallError,
    InvalidRateError,
    LstmCellParams,
    attention_backward,
    attention_forward,
    batch_norm_backward,
    batch_norm_forward,
    bilstm_backward,
    bilstm_forward,
    dropout_backward,
    dropout_forward,
    init_lstm_cell,
    lstm_cell_backward,
    lstm_cell_forward,
    lstm_layer_backward,
    lstm_layer_forward,
    softmax,
)
from .network import (
    NetworkParams,
    RecurrentLayerParams,
    ShapeMismatchError,
    StaleCacheError,
    UnknownVariantError,
    Variant,
    backward,
    forward,
    init_network,
    load_checkpoint,
    mse_loss,
    save_checkpoint,
    variant_from_string,
)
from .rmsprop import RmsPropState, init_rmsprop, rmsprop_step

__all__ = [
    "BatchTooSmallError",
    "InvalidRateError",
    "LstmCellParams",
    "NetworkParams",
    "RecurrentLayerParams",
    "RmsPropState",
    "ShapeMismatchError",
    "StaleCacheError",
    "UnknownVariantError",
    "Variant",
    "attention_backward",
    "attention_forward",
    "backward",
    "batch_norm_backward",
    "batch_norm_forward",
    "bilstm_backward",
    "bilstm_forward",
    "dropout_backward",
    "dropout_forward",
    "forward",
    "init_lstm_cell",
    "init_network",
    "init_rmsprop",
    "load_checkpoint",
    "lstm_cell_backward",
    "lstm_cell_forward",
    "lstm_layer_backward",
    "lstm_layer_forward",
    "mse_loss",
    "rmsprop_step",
    "save_checkpoint",
    "softmax",
    "variant_from_string",
]
