"""Per-timestep layers against closed forms and loop oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import seqstream as sl
from seqstream.dense import counter_uniform
from seqstream.layer import poison_invalid
from seqstream.sequence import ChannelSpec, Sequence
from seqstream.streaming import step_by_step

from conftest import assert_sequences_close, random_sequence


class TestDense:
    def test_identity_weight_zero_bias(self, rng):
        layer = sl.Dense(3, 3, params={"weight": np.eye(3, dtype=np.float32), "bias": np.zeros(3, np.float32)})
        x = random_sequence(0, 2, 5, 3)
        assert_sequences_close(layer.layer(x, training=False), x)

    def test_matches_per_timestep_matmul_oracle(self, rng):
        layer = sl.Dense(3, 5, rng=rng)
        x = random_sequence(1, 2, 6, 3)
        y = layer.layer(x, training=False)
        w, b = layer.parameters["weight"], layer.parameters["bias"]
        for bi in range(2):
            for t in range(6):
                expect = np.asarray(x.values)[bi, t] @ w + b
                np.testing.assert_allclose(y.values[bi, t], expect, atol=1e-6)

    def test_valid_steps_unaffected_by_poison(self, rng):
        layer = sl.Dense(3, 4, rng=rng)
        x = random_sequence(2, 2, 6, 3, lengths=[6, 3])
        clean = layer.layer(x, training=False).mask_invalid()
        poisoned = layer.layer(poison_invalid(x), training=False).mask_invalid()
        np.testing.assert_array_equal(clean.values, poisoned.values)

    def test_output_spec(self, rng):
        layer = sl.Dense(3, 5, rng=rng)
        assert layer.get_output_spec(ChannelSpec((3,))) == ChannelSpec((5,))
        with pytest.raises(sl.SpecMismatchError):
            layer.get_output_spec(ChannelSpec((4,)))

    def test_training_keyword_is_required(self, rng):
        layer = sl.Dense(3, 5, rng=rng)
        with pytest.raises(TypeError):
            layer.layer(random_sequence(0, 1, 2, 3))


class TestPointwise:
    def test_relu(self):
        x = Sequence.from_values(np.array([[[-1.0], [2.0]]], np.float32))
        y = sl.Pointwise("relu").layer(x, training=False)
        np.testing.assert_array_equal(y.values[0, :, 0], [0, 2])

    def test_softmax_uniform(self):
        x = Sequence.from_values(np.ones((1, 2, 4), np.float32))
        y = sl.Softmax().layer(x, training=False)
        np.testing.assert_allclose(y.values, 0.25, atol=1e-7)

    def test_gelu_matches_float64_oracle(self, rng):
        x = random_sequence(3, 2, 8, 4)
        y = sl.Pointwise("gelu").layer(x, training=False)
        v64 = np.asarray(x.values, np.float64)
        expect = 0.5 * v64 * (1.0 + np.vectorize(math.erf)(v64 / math.sqrt(2.0)))
        np.testing.assert_allclose(y.values, expect, atol=1e-6)

    @pytest.mark.parametrize(
        "kind,preserves",
        [
            ("relu", True),
            ("tanh", True),
            ("abs", True),
            ("swish", True),
            ("gelu", True),
            ("elu", True),
            ("sigmoid", False),
            ("softplus", False),
            ("exp", False),
        ],
    )
    def test_masked_flag_follows_zero_preservation(self, kind, preserves):
        x = random_sequence(4, 1, 4, 2, lengths=[2]).mask_invalid()
        y = sl.Pointwise(kind).layer(x, training=False)
        assert y.masked == preserves

    def test_maximum_minimum_zero_preservation_depends_on_value(self):
        x = random_sequence(5, 1, 4, 2).mask_invalid()
        assert sl.Pointwise("maximum", -1.0).layer(x, training=False).masked
        assert not sl.Pointwise("maximum", 0.5).layer(x, training=False).masked
        assert sl.Pointwise("minimum", 1.0).layer(x, training=False).masked

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown pointwise kind"):
            sl.Pointwise("frobnicate")

    def test_scale_and_add(self):
        x = random_sequence(6, 1, 4, 2)
        two_x = sl.Scale(2.0).layer(x, training=False)
        np.testing.assert_allclose(two_x.values, 2 * np.asarray(x.values), atol=0)
        plus = sl.Add(1.5).layer(x, training=False)
        np.testing.assert_allclose(plus.values, np.asarray(x.values) + 1.5, atol=0)


class TestNormalization:
    def test_rms_constant_vector_closed_form(self, rng):
        c = 0.7
        layer = sl.RMSNormalization(4, params={"scale": np.full(4, 1.3, np.float32)}, epsilon=1e-6)
        x = Sequence.from_values(np.full((1, 3, 4), c, np.float32))
        y = layer.layer(x, training=False)
        expect = 1.3 * c / math.sqrt(c * c + 1e-6)
        np.testing.assert_allclose(y.values, expect, atol=1e-6)

    def test_layer_norm_moments(self, rng):
        layer = sl.LayerNormalization(
            6,
            params={"scale": np.ones(6, np.float32), "offset": np.zeros(6, np.float32)},
            epsilon=1e-12,
        )
        x = random_sequence(7, 2, 5, 6)
        y = np.asarray(layer.layer(x, training=False).values, np.float64)
        np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-5)
        np.testing.assert_allclose(y.var(axis=-1), 1.0, atol=1e-4)

    def test_norm_valid_steps_independent_of_invalid_values(self, rng):
        for cls in (sl.LayerNormalization, sl.RMSNormalization):
            layer = cls(4, rng=np.random.default_rng(1))
            x = random_sequence(8, 2, 6, 4, lengths=[6, 3])
            clean = layer.layer(x, training=False).mask_invalid()
            poisoned = layer.layer(poison_invalid(x), training=False).mask_invalid()
            np.testing.assert_array_equal(clean.values, poisoned.values)

    def test_epsilon_validation(self):
        with pytest.raises(ValueError):
            sl.RMSNormalization(4, epsilon=0.0)


class TestDropout:
    def test_rate_zero_identity(self):
        x = random_sequence(9, 2, 6, 3)
        y = sl.Dropout(0.0).layer(x, training=True)
        np.testing.assert_array_equal(y.values, x.values)

    def test_eval_mode_identity(self):
        x = random_sequence(10, 2, 6, 3)
        y = sl.Dropout(0.9, seed=5).layer(x, training=False)
        np.testing.assert_array_equal(y.values, x.values)

    def test_rate_validation(self):
        with pytest.raises(ValueError):
            sl.Dropout(1.0)

    @pytest.mark.parametrize("block", [1, 3])
    def test_partition_invariant_draws(self, block):
        layer = sl.Dropout(0.5, seed=11)
        x = random_sequence(12, 2, 12, 3)
        y = layer.layer(x, training=True)
        ys = step_by_step(layer, x, training=True, block=block)
        assert_sequences_close(y, ys, atol=0)

    def test_draws_are_coordinate_pure(self):
        a = counter_uniform(3, np.arange(4), np.arange(2), np.arange(5))
        b = counter_uniform(3, np.arange(4), np.arange(2), np.arange(5))
        np.testing.assert_array_equal(a, b)
        c = counter_uniform(4, np.arange(4), np.arange(2), np.arange(5))
        assert not np.array_equal(a, c)

    def test_kept_fraction_near_rate(self):
        layer = sl.Dropout(0.25, seed=2)
        x = Sequence.from_values(np.ones((4, 64, 16), np.float32))
        y = layer.layer(x, training=True)
        kept = np.count_nonzero(y.values) / y.values.size
        assert abs(kept - 0.75) < 0.03


class TestShapeOps:
    def test_flatten_row_major(self):
        values = np.arange(12, dtype=np.float32).reshape(1, 2, 2, 3)
        y = sl.Flatten().layer(Sequence.from_values(values), training=False)
        assert y.channel_shape == (6,)
        np.testing.assert_array_equal(y.values[0, 0], values[0, 0].reshape(-1))

    def test_expand_then_squeeze_identity(self):
        x = random_sequence(13, 1, 3, 4)
        out = sl.Squeeze(0).layer(
            sl.ExpandDims(0).layer(x, training=False), training=False
        )
        np.testing.assert_array_equal(out.values, x.values)

    def test_reshape_matches_index_oracle(self):
        values = np.arange(24, dtype=np.float32).reshape(1, 2, 3, 4)
        y = sl.Reshape((4, 3)).layer(Sequence.from_values(values), training=False)
        for t in range(2):
            flat = values[0, t].reshape(-1)
            for i in range(4):
                for j in range(3):
                    assert y.values[0, t, i, j] == flat[i * 3 + j]

    def test_move_axis(self):
        x = Sequence.from_values(np.arange(24, dtype=np.float32).reshape(1, 2, 3, 4))
        y = sl.MoveAxis(0, 1).layer(x, training=False)
        assert y.channel_shape == (4, 3)
        np.testing.assert_array_equal(y.values[0, 0], np.asarray(x.values)[0, 0].T)

    def test_transpose_channels_bit_exact(self):
        x = Sequence.from_values(np.arange(24, dtype=np.float32).reshape(1, 2, 3, 4))
        y = sl.TransposeChannels((1, 0)).layer(x, training=False)
        np.testing.assert_array_equal(y.values[0, 1], np.asarray(x.values)[0, 1].T)

    def test_reshape_bad_target(self):
        with pytest.raises(sl.SpecMismatchError):
            sl.Reshape((5,)).layer(random_sequence(0, 1, 2, 4), training=False)

    def test_masked_flag_preserved(self):
        x = random_sequence(14, 1, 4, 4, lengths=[2]).mask_invalid()
        assert sl.Flatten().layer(x, training=False).masked


class TestConditioning:
    def make(self, mode="add"):
        x = random_sequence(15, 2, 6, 3)
        cond = random_sequence(16, 2, 10, 3)
        return sl.Conditioning("cond", mode), x, {"cond": cond}

    def test_add_zeros_is_identity(self):
        layer = sl.Conditioning("cond", "add")
        x = random_sequence(17, 2, 6, 3)
        zeros = Sequence.from_values(np.zeros((2, 8, 3), np.float32))
        y = layer.layer(x, training=False, constants={"cond": zeros})
        np.testing.assert_array_equal(
            np.asarray(y.mask_invalid().values), np.asarray(x.mask_invalid().values)
        )

    def test_concat_doubles_channels(self):
        layer, x, constants = self.make("concat")
        y = layer.layer(x, training=False, constants=constants)
        assert y.channel_shape == (6,)
        assert layer.get_output_spec(x.channel_spec, constants) == ChannelSpec((6,))

    def test_step_slicing_matches_layer(self):
        layer, x, constants = self.make("add")
        y = layer.layer(x, training=False, constants=constants)
        ys = step_by_step(layer, x, training=False, block=2, constants=constants)
        assert_sequences_close(y, ys)

    def test_missing_key(self):
        layer, x, _ = self.make()
        with pytest.raises(sl.MissingConstantError):
            layer.layer(x, training=False, constants={})

    def test_conditioning_too_short(self):
        layer = sl.Conditioning("cond", "add")
        x = random_sequence(18, 2, 6, 3)
        short = random_sequence(19, 2, 4, 3)
        with pytest.raises(sl.SpecMismatchError, match="too short"):
            layer.layer(x, training=False, constants={"cond": short})


class TestEmit:
    def test_emits_input(self):
        x = random_sequence(20, 1, 4, 2)
        layer = sl.Emit()
        y, emits = layer.layer_with_emits(x, training=False)
        np.testing.assert_array_equal(y.values, x.values)
        assert emits is x

    def test_default_emits_empty(self, rng):
        layer = sl.Dense(2, 2, rng=rng)
        _, emits = layer.layer_with_emits(random_sequence(0, 1, 2, 2), training=False)
        assert emits == ()


@settings(max_examples=20)
@given(seed=st.integers(0, 500), rate=st.floats(0.0, 0.9), t=st.integers(1, 16))
def test_dropout_layer_step_property(seed, rate, t):
    layer = sl.Dropout(rate, seed=seed)
    x = random_sequence(seed, 2, t, 2)
    y = layer.layer(x, training=True)
    ys = step_by_step(layer, x, training=True)
    np.testing.assert_array_equal(np.asarray(y.mask), np.asarray(ys.mask))
    np.testing.assert_array_equal(
        np.asarray(y.mask_invalid().values), np.asarray(ys.mask_invalid().values)
    )
