"""seqstream: streaming sequence layers with verified layer/step equivalence."""

from .attention import DotProductSelfAttention
from .combinators import Bidirectional, Blockwise, Parallel, Repeat, Residual, Serial
from .dense import (
    Add,
    Conditioning,
    Dense,
    Dropout,
    Emit,
    ExpandDims,
    Flatten,
    Identity,
    LayerNormalization,
    MoveAxis,
    Pointwise,
    Reshape,
    RMSNormalization,
    Scale,
    Softmax,
    Squeeze,
    TransposeChannels,
)
from .errors import (
    BlockSizeError,
    MissingConstantError,
    NotSteppableError,
    PipelineError,
    ShapeMismatchError,
    SpecMismatchError,
    SpecParseError,
)
from .layer import (
    LayerProperties,
    RngCounter,
    SequenceLayer,
    StatelessLayer,
    compose_receptive_fields,
)
from .recurrent import LSTM
from .sequence import ChannelSpec, Sequence, load_sequence, save_sequence
from .streaming import step_by_step, stream_blocks
from .temporal import (
    AveragePooling1D,
    Conv1D,
    Conv1DTranspose,
    Delay,
    Downsample1D,
    Frame,
    StepDelay,
    Lookahead,
    MaxPooling1D,
    MinPooling1D,
    OverlapAdd,
    Upsample1D,
    Window,
)

__all__ = [
    "Add",
    "AveragePooling1D",
    "Bidirectional",
    "BlockSizeError",
    "Blockwise",
    "ChannelSpec",
    "Conditioning",
    "Conv1D",
    "Conv1DTranspose",
    "Delay",
    "Dense",
    "DotProductSelfAttention",
    "Downsample1D",
    "Dropout",
    "Emit",
    "ExpandDims",
    "Flatten",
    "Frame",
    "Identity",
    "LSTM",
    "LayerNormalization",
    "LayerProperties",
    "Lookahead",
    "MaxPooling1D",
    "MinPooling1D",
    "MissingConstantError",
    "MoveAxis",
    "NotSteppableError",
    "OverlapAdd",
    "Parallel",
    "PipelineError",
    "Pointwise",
    "Repeat",
    "Reshape",
    "Residual",
    "RMSNormalization",
    "RngCounter",
    "Scale",
    "SequenceLayer",
    "Sequence",
    "Serial",
    "ShapeMismatchError",
    "Softmax",
    "SpecMismatchError",
    "SpecParseError",
    "Squeeze",
    "StatelessLayer",
    "StepDelay",
    "TransposeChannels",
    "Upsample1D",
    "Window",
    "compose_receptive_fields",
    "load_sequence",
    "save_sequence",
    "step_by_step",
    "stream_blocks",
]

__version__ = "0.1.0"
