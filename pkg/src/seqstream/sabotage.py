"""Deliberately broken layers, one per contract check.

These exist to prove the harness catches what it claims to catch: each
fixture violates exactly one clause of the contract while looking plausible
otherwise. They are also registered in the pipeline registry under
``sabotage_*`` names so the CLI failure paths can be exercised end to end.
Never use them for anything else.
"""

from __future__ import annotations

import numpy as np

from .dense import Identity
from .layer import RngCounter, SequenceLayer
from .sequence import Sequence
from .temporal import Conv1D


class StaleBufferConv(Conv1D):
    """step() never updates its context buffer (breaks layer_step_equal_1x)."""

    def step(self, x, state, *, training, constants=None):
        y, _ = super().step(x, state, training=training, constants=constants)
        return y, state


class FirstBlockOnly(SequenceLayer):
    """Correct at exactly block_size per step, garbage beyond it.

    Breaks layer_step_equal_2x while passing the 1x check.
    """

    def __init__(self, name=None):
        super().__init__(name)

    @property
    def block_size(self):
        return 2

    def layer(self, x, *, training, constants=None):
        return x

    def get_initial_state(self, batch_size, input_spec, *, training, constants=None):
        return ()

    def step(self, x, state, *, training, constants=None):
        self._check_block(x)
        if x.time > self.block_size:
            zeros = np.zeros_like(np.asarray(x.values))
            return Sequence(zeros, x.mask, masked=False), state
        return x, state


class WrongRatioIdentity(Identity):
    """Claims to halve the sequence but does not (breaks metadata_consistency)."""

    @property
    def output_ratio(self):
        from fractions import Fraction

        return Fraction(1, 2)

    @property
    def block_size(self):
        return 2


class UnderdeclaredRFConv(Conv1D):
    """kernel_size-3 causal conv declaring a 2-step receptive field.

    Breaks receptive_field_empirical: the probe finds dependence at -2.
    """

    def __init__(self, in_channels, filters, *, params=None, rng=None, name=None):
        super().__init__(
            in_channels, filters, 3, padding="causal", params=params, rng=rng, name=name
        )

    @property
    def receptive_field_per_step(self):
        return {0: (-1, 0)}


class BatchMixingDense(SequenceLayer):
    """Subtracts the batch mean per timestep (breaks batching_invariance)."""

    def __init__(self, name=None):
        super().__init__(name)

    def layer(self, x, *, training, constants=None):
        centered = np.asarray(x.values) - np.asarray(x.values).mean(axis=0, keepdims=True)
        return Sequence(centered.astype(x.dtype), x.mask)

    def get_initial_state(self, batch_size, input_spec, *, training, constants=None):
        return ()

    def step(self, x, state, *, training, constants=None):
        self._check_block(x)
        return self.layer(x, training=training, constants=constants), state


class LeakyConv(Conv1D):
    """Consumes raw (unmasked) values, so poisoned padding contaminates
    valid outputs (breaks padding_invariance).

    Must look ahead (reverse_causal/same): a causal window never reaches the
    invalid tail from a valid anchor, which would hide the leak.
    """

    def layer(self, x, *, training, constants=None):
        pretend_masked = Sequence(x.values, x.mask, masked=True)
        return super().layer(pretend_masked, training=training, constants=constants)

    def step(self, x, state, *, training, constants=None):
        pretend_masked = Sequence(x.values, x.mask, masked=True)
        return super().step(pretend_masked, state, training=training, constants=constants)


class ShapeShiftingEmits(Identity):
    """Emits a dict layer-wise but a tuple step-wise (breaks emits_consistency)."""

    def layer_with_emits(self, x, *, training, constants=None):
        return x, {"tap": x}

    def step_with_emits(self, x, state, *, training, constants=None):
        y, state = self.step(x, state, training=training, constants=constants)
        return y, state, (x,)


class BlockSeededDropout(SequenceLayer):
    """Dropout whose draws restart at every step call (breaks rng_equivalence)."""

    def __init__(self, rate=0.5, seed=0, name=None):
        super().__init__(name)
        self.rate = float(rate)
        self.seed = int(seed)

    @property
    def is_stochastic(self):
        return True

    def _draw(self, shape):
        return np.random.default_rng(self.seed).uniform(size=shape) < (1 - self.rate)

    def layer(self, x, *, training, constants=None):
        if not training:
            return x
        keep = self._draw(x.shape)
        scale = np.float32(1 / (1 - self.rate))
        return Sequence(
            np.where(keep, np.asarray(x.values) * scale, np.float32(0)), x.mask
        )

    def get_initial_state(self, batch_size, input_spec, *, training, constants=None):
        return RngCounter(self.seed, 0)

    def step(self, x, state, *, training, constants=None):
        self._check_block(x)
        return self.layer(x, training=training, constants=constants), state.advanced(x.time)


#: check name -> factory(in_channels, rng) for the fixture that must trip it
FIXTURES = {
    "layer_step_equal_1x": lambda ch, rng: StaleBufferConv(
        ch, 3, 3, padding="causal", rng=rng, name="stale_buffer_conv"
    ),
    "layer_step_equal_2x": lambda ch, rng: FirstBlockOnly(name="first_block_only"),
    "metadata_consistency": lambda ch, rng: WrongRatioIdentity(name="wrong_ratio"),
    "receptive_field_empirical": lambda ch, rng: UnderdeclaredRFConv(
        ch, 3, rng=rng, name="underdeclared_rf"
    ),
    "batching_invariance": lambda ch, rng: BatchMixingDense(name="batch_mixing"),
    "padding_invariance": lambda ch, rng: LeakyConv(
        ch, 3, 3, padding="reverse_causal", rng=rng, name="leaky_conv"
    ),
    "emits_consistency": lambda ch, rng: ShapeShiftingEmits(name="shape_shifting_emits"),
    "rng_equivalence": lambda ch, rng: BlockSeededDropout(seed=3, name="block_seeded_dropout"),
}
