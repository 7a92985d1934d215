"""From-scratch 1-layer transformer encoder-decoder in numpy.

Parameters live in a flat name -> array map, gradients mirror it, and every
forward pass has a hand-written backward.  Parameters and activations are
float32; reductions that are sensitive to accumulation order (softmax
denominators, layer-norm statistics, Adam moments) run in float64.
"""

from .params import (
    DESK_CONFIG,
    FULL_SCALE_CONFIG,
    PAPER_GRID,
    CorruptCheckpointError,
    ModelConfig,
    PEMode,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .positional import (
    KTooLargeError,
    SequenceTooLongError,
    label_positions,
    sinusoidal_table,
)
from .net import (
    ShapeMismatchError,
    decoder_forward,
    embed,
    encoder_forward,
)
from .decoding import generate, generate_multi, make_neural_port
from .training import (
    AdamState,
    NonFiniteLossError,
    gradient_check,
    init_adam,
    training_step,
)

__all__ = [
    "AdamState",
    "CorruptCheckpointError",
    "DESK_CONFIG",
    "FULL_SCALE_CONFIG",
    "KTooLargeError",
    "ModelConfig",
    "NonFiniteLossError",
    "PAPER_GRID",
    "PEMode",
    "SequenceTooLongError",
    "ShapeMismatchError",
    "decoder_forward",
    "embed",
    "encoder_forward",
    "generate",
    "generate_multi",
    "gradient_check",
    "init_adam",
    "init_params",
    "label_positions",
    "load_checkpoint",
    "make_neural_port",
    "save_checkpoint",
    "sinusoidal_table",
    "training_step",
]
