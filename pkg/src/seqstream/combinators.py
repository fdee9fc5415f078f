"""Layers built from layers: Serial, Parallel, Residual, Repeat,
Bidirectional, and Blockwise.

Every property of a combinator is derived from its children on access;
nothing is stored at construction, so metadata can never drift from the
composition.

Serial latency accounting: output latencies fold forward (an upstream delay
of d input steps becomes d * ratio output steps plus the child's own), input
latencies fold backward (a child needs its own flush plus enough input to
push the downstream flush through). A downsampling child whose accumulated
upstream delay is not a multiple of its stride would consume misaligned
blocks, so such chains report supports_step = False and name the child; a
Delay inserted before it restores alignment.

Parallel children may disagree on latency: faster children are delayed
inside step() by per-child FIFOs so all branches emit the same stream
positions, and the combinator reports the maximum latencies.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

from .errors import NotSteppableError, SpecMismatchError
from .layer import SequenceLayer
from .receptive_field import (
    reverse_rf_map,
    rf_at,
    serial_rf_map,
    union_rf_maps,
)
from .sequence import ChannelSpec, Sequence
from .streaming import stream_blocks

__all__ = ["Serial", "Parallel", "Residual", "Repeat", "Bidirectional", "Blockwise"]

COMBINE_MODES = ("stack", "concat", "add", "mean")


def _unique_names(children):
    seen = {}
    for child in children:
        if child.name in seen:
            seen[child.name] += 1
            child.name = f"{child.name}_{seen[child.name]}"
        else:
            seen[child.name] = 0
    return tuple(children)


def _combine_specs(specs, mode: str) -> ChannelSpec:
    first = specs[0]
    if mode in ("add", "mean", "stack"):
        for s in specs[1:]:
            if s != first:
                raise SpecMismatchError(
                    f"combine={mode} requires identical child specs, got {first} and {s}"
                )
        if mode == "stack":
            return ChannelSpec((len(specs),) + first.shape, first.dtype)
        return first
    for s in specs[1:]:
        if s.shape[:-1] != first.shape[:-1] or s.dtype != first.dtype:
            raise SpecMismatchError(
                f"combine=concat requires equal all-but-last channel dims, "
                f"got {first} and {s}"
            )
    last = sum(s.shape[-1] for s in specs)
    return ChannelSpec(first.shape[:-1] + (last,), first.dtype)


def _combine_outputs(outputs, mode: str) -> Sequence:
    time = {y.time for y in outputs}
    if len(time) != 1:
        raise SpecMismatchError(
            f"parallel branches produced unequal output lengths {sorted(time)}; "
            "equal lengths are required"
        )
    mask = outputs[0].mask
    for y in outputs[1:]:
        mask = np.logical_and(mask, y.mask)
    arrays = [np.asarray(y.values) for y in outputs]
    if mode == "stack":
        values = np.stack(arrays, axis=2)
    elif mode == "concat":
        values = np.concatenate(arrays, axis=-1)
    else:
        total = arrays[0]
        for a in arrays[1:]:
            total = total + a
        if mode == "mean":
            total = (total / np.float32(len(arrays))).astype(arrays[0].dtype)
        values = total
    return Sequence(values, mask)


class Serial(SequenceLayer):
    """Applies children one after another; an empty Serial is the identity."""

    def __init__(self, layers, name=None):
        super().__init__(name)
        self._children = _unique_names(list(layers))

    @property
    def children(self):
        return self._children

    @property
    def output_ratio(self):
        ratio = Fraction(1)
        for child in self._children:
            ratio *= child.output_ratio
        return ratio

    @property
    def block_size(self):
        block = Fraction(1)
        ratio = Fraction(1)
        for child in self._children:
            arriving = block * ratio
            assert arriving.denominator == 1
            block = Fraction(math.lcm(int(arriving), child.block_size)) / ratio
            ratio *= child.output_ratio
        assert block.denominator == 1
        return int(block)

    def _forward_output_latency(self):
        """(output_latency, misalignment reason or None)."""
        latency = 0
        for child in self._children:
            converted = latency * child.output_ratio
            if converted.denominator != 1:
                return latency, (
                    f"accumulated latency {latency} ahead of {child.name!r} is not a "
                    f"multiple of {child.output_ratio.denominator}; insert a StepDelay of "
                    f"{-latency % child.output_ratio.denominator} to align"
                )
            latency = int(converted) + child.output_latency
        return latency, None

    @property
    def output_latency(self):
        return self._forward_output_latency()[0]

    @property
    def input_latency(self):
        latency = 0
        for child in reversed(self._children):
            latency = child.input_latency + math.ceil(latency / child.output_ratio)
        return latency

    @property
    def receptive_field_per_step(self):
        maps = [c.receptive_field_per_step for c in self._children]
        return serial_rf_map(maps, [c.output_ratio for c in self._children])

    @property
    def supports_step(self):
        if not all(c.supports_step for c in self._children):
            return False
        return self._forward_output_latency()[1] is None

    @property
    def is_stochastic(self):
        return any(c.is_stochastic for c in self._children)

    def output_time(self, input_time):
        time = input_time
        for child in self._children:
            time = child.output_time(time)
        return time

    def get_output_spec(self, input_spec, constants=None):
        spec = input_spec
        for child in self._children:
            spec = child.get_output_spec(spec, constants)
        return spec

    def layer(self, x, *, training, constants=None):
        for child in self._children:
            x = child.layer(x, training=training, constants=constants)
        return x

    def layer_with_emits(self, x, *, training, constants=None):
        emits = []
        for child in self._children:
            x, e = child.layer_with_emits(x, training=training, constants=constants)
            emits.append(e)
        return x, tuple(emits)

    def _require_steppable(self):
        if not all(c.supports_step for c in self._children):
            bad = [c.name for c in self._children if not c.supports_step]
            raise NotSteppableError(f"{self.name}: children {bad} cannot be stepped")
        reason = self._forward_output_latency()[1]
        if reason is not None:
            raise NotSteppableError(f"{self.name}: {reason}")

    def get_initial_state(self, batch_size, input_spec, *, training, constants=None):
        self._require_steppable()
        states = []
        spec = input_spec
        for child in self._children:
            states.append(
                child.get_initial_state(batch_size, spec, training=training, constants=constants)
            )
            spec = child.get_output_spec(spec, constants)
        return tuple(states)

    def step(self, x, state, *, training, constants=None):
        self._check_block(x)
        new_states = []
        for child, child_state in zip(self._children, state):
            x, child_state = child.step(x, child_state, training=training, constants=constants)
            new_states.append(child_state)
        return x, tuple(new_states)

    def step_with_emits(self, x, state, *, training, constants=None):
        self._check_block(x)
        new_states = []
        emits = []
        for child, child_state in zip(self._children, state):
            x, child_state, e = child.step_with_emits(
                x, child_state, training=training, constants=constants
            )
            new_states.append(child_state)
            emits.append(e)
        return x, tuple(new_states), tuple(emits)


class Parallel(SequenceLayer):
    """Feeds the same input to every child and combines their outputs."""

    def __init__(self, layers, combine="stack", name=None):
        super().__init__(name)
        children = list(layers)
        if not children:
            raise ValueError("parallel requires at least one child")
        if combine not in COMBINE_MODES:
            raise ValueError(f"combine must be one of {COMBINE_MODES}, got {combine!r}")
        ratios = {c.output_ratio for c in children}
        if len(ratios) != 1:
            raise SpecMismatchError(
                f"parallel children must share an output ratio, got "
                f"{[str(c.output_ratio) for c in children]}"
            )
        self.combine = combine
        self._children = _unique_names(children)

    @property
    def children(self):
        return self._children

    @property
    def output_ratio(self):
        return self._children[0].output_ratio

    @property
    def block_size(self):
        return math.lcm(*(c.block_size for c in self._children))

    @property
    def output_latency(self):
        return max(c.output_latency for c in self._children)

    @property
    def input_latency(self):
        return max(c.input_latency for c in self._children)

    @property
    def receptive_field_per_step(self):
        maps = [c.receptive_field_per_step for c in self._children]
        return union_rf_maps(maps, [c.output_ratio for c in self._children])

    @property
    def supports_step(self):
        return all(c.supports_step for c in self._children)

    @property
    def is_stochastic(self):
        return any(c.is_stochastic for c in self._children)

    def output_time(self, input_time):
        times = {c.output_time(input_time) for c in self._children}
        if len(times) != 1:
            raise SpecMismatchError(
                f"{self.name}: children disagree on output length for input "
                f"{input_time}: {sorted(times)}"
            )
        return times.pop()

    def get_output_spec(self, input_spec, constants=None):
        specs = [c.get_output_spec(input_spec, constants) for c in self._children]
        return _combine_specs(specs, self.combine)

    def layer(self, x, *, training, constants=None):
        outputs = [c.layer(x, training=training, constants=constants) for c in self._children]
        return _combine_outputs(outputs, self.combine)

    def layer_with_emits(self, x, *, training, constants=None):
        pairs = [
            c.layer_with_emits(x, training=training, constants=constants)
            for c in self._children
        ]
        return _combine_outputs([p[0] for p in pairs], self.combine), tuple(p[1] for p in pairs)

    def get_initial_state(self, batch_size, input_spec, *, training, constants=None):
        if not self.supports_step:
            raise NotSteppableError(f"{self.name}: some children cannot be stepped")
        child_states = tuple(
            c.get_initial_state(batch_size, input_spec, training=training, constants=constants)
            for c in self._children
        )
        fifos = []
        overall = self.output_latency
        for child in self._children:
            delay = overall - child.output_latency
            spec = child.get_output_spec(input_spec, constants)
            fifos.append(
                Sequence(
                    np.zeros((batch_size, delay) + spec.shape, dtype=spec.dtype),
                    np.zeros((batch_size, delay), bool),
                    masked=True,
                )
            )
        return (child_states, tuple(fifos))

    def _step_children(self, x, state, *, training, constants, with_emits):
        self._check_block(x)
        child_states, fifos = state
        out_len = int(x.time * self.output_ratio)
        outputs, new_states, new_fifos, emits = [], [], [], []
        for child, child_state, fifo in zip(self._children, child_states, fifos):
            if with_emits:
                y, child_state, e = child.step_with_emits(
                    x, child_state, training=training, constants=constants
                )
                emits.append(e)
            else:
                y, child_state = child.step(x, child_state, training=training, constants=constants)
            merged = Sequence.concatenate_sequences([fifo, y.mask_invalid()])
            outputs.append(merged[:, :out_len])
            new_fifos.append(merged[:, out_len:])
            new_states.append(child_state)
        combined = _combine_outputs(outputs, self.combine)
        return combined, (tuple(new_states), tuple(new_fifos)), tuple(emits)

    def step(self, x, state, *, training, constants=None):
        y, state, _ = self._step_children(
            x, state, training=training, constants=constants, with_emits=False
        )
        return y, state

    def step_with_emits(self, x, state, *, training, constants=None):
        return self._step_children(
            x, state, training=training, constants=constants, with_emits=True
        )


class Residual(Parallel):
    """body(x) + shortcut(x); the shortcut defaults to the identity."""

    def __init__(self, body, shortcut=None, name=None):
        from .dense import Identity

        if isinstance(body, (list, tuple)):
            body = Serial(list(body), name="body")
        if shortcut is None:
            shortcut = Identity(name="shortcut")
        super().__init__([body, shortcut], combine="add", name=name)


class Repeat(Serial):
    """Applies independently parameterized copies of one template in series.

    ``make_child`` is invoked once per iteration (with the iteration index)
    and must build ratio-1 layers with matching input/output specs.
    """

    def __init__(self, make_child, num_repeats, name=None):
        if num_repeats < 1:
            raise ValueError(f"num_repeats must be >= 1, got {num_repeats}")
        children = []
        for i in range(num_repeats):
            child = make_child(i)
            if child.output_ratio != 1:
                raise SpecMismatchError(
                    f"repeat requires ratio-1 children, got {child.output_ratio}"
                )
            child.name = f"iter_{i}"
            children.append(child)
        super().__init__(children, name=name)
        self.num_repeats = int(num_repeats)

    def get_output_spec(self, input_spec, constants=None):
        spec = super().get_output_spec(input_spec, constants)
        if spec != input_spec:
            raise SpecMismatchError(
                f"{self.name}: repeated child must preserve the spec, "
                f"got {input_spec} -> {spec}"
            )
        return spec


class Bidirectional(SequenceLayer):
    """Forward layer on the sequence, backward layer on the time-reversed
    valid region, outputs combined. Reversal needs the whole sequence, so
    this layer cannot be stepped."""

    def __init__(self, forward, backward, combine="stack", name=None):
        super().__init__(name)
        if combine not in COMBINE_MODES:
            raise ValueError(f"combine must be one of {COMBINE_MODES}, got {combine!r}")
        for child in (forward, backward):
            if child.output_ratio != 1:
                raise SpecMismatchError(
                    f"bidirectional requires ratio-1 children, got {child.output_ratio}"
                )
        _unique_names([forward, backward])
        self.forward = forward
        self.backward = backward
        self.combine = combine

    @property
    def children(self):
        return (self.forward, self.backward)

    @property
    def supports_step(self):
        return False

    @property
    def block_size(self):
        return math.lcm(self.forward.block_size, self.backward.block_size)

    @property
    def is_stochastic(self):
        return self.forward.is_stochastic or self.backward.is_stochastic

    @property
    def receptive_field_per_step(self):
        maps = [
            self.forward.receptive_field_per_step,
            reverse_rf_map(self.backward.receptive_field_per_step),
        ]
        return union_rf_maps(maps, [Fraction(1), Fraction(1)])

    def get_output_spec(self, input_spec, constants=None):
        specs = [
            self.forward.get_output_spec(input_spec, constants),
            self.backward.get_output_spec(input_spec, constants),
        ]
        return _combine_specs(specs, self.combine)

    def layer(self, x, *, training, constants=None):
        fwd = self.forward.layer(x, training=training, constants=constants)
        rev = x.reverse_time_valid()
        bwd = self.backward.layer(rev, training=training, constants=constants)
        bwd = bwd.reverse_time_valid()
        return _combine_outputs([fwd, bwd], self.combine)

    def get_initial_state(self, batch_size, input_spec, *, training, constants=None):
        raise NotSteppableError(f"{self.name}: bidirectional layers cannot be stepped")

    def step(self, x, state, *, training, constants=None):
        raise NotSteppableError(f"{self.name}: bidirectional layers cannot be stepped")


class Blockwise(SequenceLayer):
    """Re-clocks a steppable child to a larger block size.

    layer() is re-implemented by stepping the child block by block (bounding
    peak memory by the block size), flushing per the latency protocol, and
    trimming to the child's layer-wise extent.
    """

    def __init__(self, child, block_size, name=None):
        super().__init__(name)
        if not child.supports_step:
            raise NotSteppableError(f"blockwise requires a steppable child, got {child.name}")
        if block_size <= 0 or block_size % child.block_size:
            raise ValueError(
                f"block_size {block_size} is not a positive multiple of "
                f"{child.name}'s block_size {child.block_size}"
            )
        self.child = child
        self._block_size = int(block_size)

    @property
    def children(self):
        return (self.child,)

    @property
    def output_ratio(self):
        return self.child.output_ratio

    @property
    def block_size(self):
        return self._block_size

    @property
    def input_latency(self):
        return self.child.input_latency

    @property
    def output_latency(self):
        return self.child.output_latency

    @property
    def receptive_field_per_step(self):
        return self.child.receptive_field_per_step

    @property
    def is_stochastic(self):
        return self.child.is_stochastic

    def output_time(self, input_time):
        return self.child.output_time(input_time)

    def get_output_spec(self, input_spec, constants=None):
        return self.child.get_output_spec(input_spec, constants)

    def layer(self, x, *, training, constants=None):
        expected = self.child.output_time(x.time)
        padded = x.pad_time(0, self.child.input_latency, valid=False)
        out, _, _ = stream_blocks(
            self.child, padded, training=training, block=self._block_size, constants=constants
        )
        return out[:, self.child.output_latency :][:, :expected]

    def get_initial_state(self, batch_size, input_spec, *, training, constants=None):
        return self.child.get_initial_state(
            batch_size, input_spec, training=training, constants=constants
        )

    def step(self, x, state, *, training, constants=None):
        self._check_block(x)
        return self.child.step(x, state, training=training, constants=constants)

    def step_with_emits(self, x, state, *, training, constants=None):
        self._check_block(x)
        return self.child.step_with_emits(x, state, training=training, constants=constants)
