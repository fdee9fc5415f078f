"""Drivers for step-wise execution, including the flush/trim latency protocol."""

from __future__ import annotations

import numpy as np

from .errors import BlockSizeError, NotSteppableError
from .layer import SequenceLayer
from .sequence import Sequence


def _resolve_block(layer: SequenceLayer, block: int | None) -> int:
    if block is None:
        return layer.block_size
    if block <= 0 or block % layer.block_size:
        raise BlockSizeError(
            f"block {block} is not a positive multiple of {layer.name}'s "
            f"block_size {layer.block_size}"
        )
    return block


def concat_emits(emits_list):
    """Concatenates per-block emits over time, preserving tree structure."""
    if not emits_list:
        return ()
    head = emits_list[0]
    if isinstance(head, Sequence):
        return Sequence.concatenate_sequences(emits_list)
    if isinstance(head, np.ndarray):
        return np.concatenate(emits_list, axis=1)
    if isinstance(head, tuple):
        return tuple(concat_emits([e[i] for e in emits_list]) for i in range(len(head)))
    if isinstance(head, dict):
        return {k: concat_emits([e[k] for e in emits_list]) for k in head}
    return head


def stream_blocks(
    layer: SequenceLayer,
    x: Sequence,
    *,
    training: bool,
    block: int | None = None,
    constants=None,
    initial_state=None,
    with_emits: bool = False,
):
    """Runs get_initial_state + step over x, padding x up to a block multiple.

    Returns (output, final_state, emits); no latency handling is applied.
    """
    if not layer.supports_step:
        raise NotSteppableError(f"{layer.name} cannot be stepped")
    block = _resolve_block(layer, block)
    remainder = x.time % block
    if remainder:
        x = x.pad_time(0, block - remainder, valid=False)
    state = initial_state
    if state is None:
        state = layer.get_initial_state(
            x.batch_size, x.channel_spec, training=training, constants=constants
        )
    outputs = []
    emits_list = []
    for start in range(0, x.time, block):
        piece = x[:, start : start + block]
        if with_emits:
            y, state, emits = layer.step_with_emits(
                piece, state, training=training, constants=constants
            )
            emits_list.append(emits)
        else:
            y, state = layer.step(piece, state, training=training, constants=constants)
        outputs.append(y)
    if outputs:
        out = Sequence.concatenate_sequences(outputs)
    else:
        out = x[:, 0:0]
    return out, state, concat_emits(emits_list) if with_emits else ()


def step_by_step(
    layer: SequenceLayer,
    x: Sequence,
    *,
    training: bool,
    block: int | None = None,
    constants=None,
    trim: bool = True,
    with_emits: bool = False,
):
    """Step-wise execution equivalent to layer(x) for contract-abiding layers.

    Appends input_latency invalid steps to flush buffered lookahead, drops
    the first output_latency (invalid) outputs, and trims the result to the
    layer-wise output extent.
    """
    expected = layer.output_time(x.time)
    padded = x.pad_time(0, layer.input_latency, valid=False)
    out, state, emits = stream_blocks(
        layer, padded, training=training, block=block, constants=constants, with_emits=with_emits
    )
    out = out[:, layer.output_latency :]
    if trim:
        out = out[:, :expected]
    if with_emits:
        return out, state, emits
    return out
