"""Time-mixing layers against explicit-loop oracles and the metadata the
convolution family must report."""

import math

import numpy as np
import pytest
from fractions import Fraction

import seqstream as sl
from seqstream.layer import poison_invalid
from seqstream.sequence import Sequence
from seqstream.streaming import step_by_step
from seqstream.temporal import explicit_padding, window_curve

from conftest import assert_sequences_close, random_sequence

INF = math.inf


def conv1d_oracle(x: Sequence, weight, bias, stride, dilation, padding):
    """Direct convolution: explicit float64 sum over taps on masked data."""
    xm = np.asarray(x.mask_invalid().values, np.float64)
    mask = np.asarray(x.mask)
    k, cin, cout = weight.shape
    pad_left, _ = explicit_padding(padding, k, dilation)
    batch, time = mask.shape
    out_len = -(-time // stride)
    out = np.zeros((batch, out_len, cout))
    for b in range(batch):
        for t in range(out_len):
            for j in range(k):
                u = t * stride - pad_left + j * dilation
                if 0 <= u < time:
                    for ci in range(cin):
                        out[b, t] += xm[b, u, ci] * weight[j, ci].astype(np.float64)
            out[b, t] += bias.astype(np.float64)
    out_mask = mask[:, ::stride][:, :out_len]
    return out, out_mask


def tconv_oracle(x: Sequence, weight, bias, stride, padding):
    """Transpose convolution via explicit scatter-add in float64."""
    xm = np.asarray(x.mask_invalid().values, np.float64)
    mask = np.asarray(x.mask)
    k, cin, cout = weight.shape
    trim = max(k - stride, 0) // 2 if padding == "same" else 0
    batch, time = mask.shape
    out_len = time * stride
    out = np.zeros((batch, out_len, cout))
    for b in range(batch):
        for i in range(time):
            for j in range(k):
                o = i * stride + j - trim
                if 0 <= o < out_len:
                    for ci in range(cin):
                        out[b, o] += xm[b, i, ci] * weight[j, ci].astype(np.float64)
    out += bias.astype(np.float64)
    return out, np.repeat(mask, stride, axis=1)


def pool_oracle(kind, x: Sequence, window, stride, padding):
    """Windowed reduction over valid members only; avg divides by the count."""
    values = np.asarray(x.values, np.float64)
    mask = np.asarray(x.mask)
    pad_left, _ = explicit_padding(padding, window, 1)
    batch, time = mask.shape
    out_len = -(-time // stride)
    out = np.zeros((batch, out_len) + values.shape[2:])
    for b in range(batch):
        for t in range(out_len):
            members = []
            for j in range(window):
                u = t * stride - pad_left + j
                if 0 <= u < time and mask[b, u]:
                    members.append(values[b, u])
            if members:
                stackd = np.stack(members)
                if kind == "max":
                    out[b, t] = stackd.max(axis=0)
                elif kind == "min":
                    out[b, t] = stackd.min(axis=0)
                else:
                    out[b, t] = stackd.sum(axis=0) / len(members)
    return out, mask[:, ::stride][:, :out_len]


class TestConv1D:
    def test_k1_identity_weight_matches_dense(self, rng):
        w = rng.uniform(-0.5, 0.5, (1, 3, 4)).astype(np.float32)
        b = rng.uniform(-0.5, 0.5, 4).astype(np.float32)
        conv = sl.Conv1D(3, 4, 1, params={"weight": w, "bias": b})
        dense = sl.Dense(3, 4, params={"weight": w[0], "bias": b})
        x = random_sequence(0, 2, 6, 3)
        assert_sequences_close(
            conv.layer(x, training=False), dense.layer(x, training=False), atol=1e-6
        )

    @pytest.mark.parametrize(
        "padding,expected",
        [("causal", (-4, 0)), ("reverse_causal", (0, 4)), ("same", (-2, 2))],
    )
    def test_k5_receptive_fields(self, padding, expected, rng):
        layer = sl.Conv1D(3, 3, 5, padding=padding, rng=rng)
        assert layer.receptive_field == expected

    def test_reverse_causal_latencies(self, rng):
        layer = sl.Conv1D(3, 3, 5, padding="reverse_causal", rng=rng)
        assert layer.input_latency == 4
        assert layer.output_latency == 4

    def test_strided_latencies_differ(self, rng):
        layer = sl.Conv1D(3, 3, 5, stride=2, padding="reverse_causal", rng=rng)
        assert layer.input_latency == 4
        assert layer.output_latency == 2
        assert layer.output_ratio == Fraction(1, 2)
        assert layer.block_size == 2

    @pytest.mark.parametrize("case", range(20))
    def test_matches_direct_convolution_oracle(self, case):
        rng = np.random.default_rng(100 + case)
        k = int(rng.integers(1, 6))
        stride = int(rng.integers(1, 4))
        dilation = int(rng.integers(1, 3))
        padding = ("causal", "reverse_causal", "same")[case % 3]
        time = int(rng.integers(max(4, k), 17))
        layer = sl.Conv1D(2, 3, k, stride=stride, dilation=dilation, padding=padding, rng=rng)
        x = random_sequence(case, 2, time, 2, lengths=[time, max(1, time - 3)])
        y = layer.layer(x, training=False)
        expect, expect_mask = conv1d_oracle(
            x, layer.parameters["weight"], layer.parameters["bias"], stride, dilation, padding
        )
        np.testing.assert_array_equal(np.asarray(y.mask), expect_mask)
        got = np.asarray(y.mask_invalid().values, np.float64)
        np.testing.assert_allclose(got, np.where(expect_mask[..., None], expect, 0), atol=1e-5)

    def test_channel_mismatch(self, rng):
        layer = sl.Conv1D(3, 4, 3, rng=rng)
        with pytest.raises(sl.SpecMismatchError):
            layer.layer(random_sequence(0, 1, 6, 5), training=False)

    def test_initial_state_holds_invalid_context(self, rng):
        layer = sl.Conv1D(3, 4, 3, padding="causal", rng=rng)
        state = layer.get_initial_state(2, sl.ChannelSpec((3,)), training=False)
        assert isinstance(state, Sequence)
        assert state.time == 2  # (k-1) buffered steps
        assert not np.asarray(state.mask).any()


class TestConv1DTranspose:
    def test_per_step_rf_with_hole(self, rng):
        layer = sl.Conv1DTranspose(3, 1, 1, stride=2, padding="same", rng=rng)
        assert layer.receptive_field_per_step == {0: (0, 0), 1: None}
        assert layer.receptive_field == (0, 0)
        assert layer.output_ratio == Fraction(2)

    def test_k_equals_stride_ones_kernel_repeats_impulse(self):
        k = s = 3
        layer = sl.Conv1DTranspose(
            1, 1, k, stride=s, padding="causal",
            params={"weight": np.ones((k, 1, 1), np.float32), "bias": np.zeros(1, np.float32)},
        )
        impulse = np.zeros((1, 5, 1), np.float32)
        impulse[0, 2, 0] = 1.0
        y = layer.layer(Sequence.from_values(impulse), training=False)
        expect, _ = tconv_oracle(
            Sequence.from_values(impulse), layer.parameters["weight"],
            layer.parameters["bias"], s, "causal",
        )
        np.testing.assert_allclose(np.asarray(y.values), expect, atol=1e-6)
        np.testing.assert_array_equal(y.values[0, :, 0], np.repeat(impulse[0, :, 0], s))

    def test_s1_k1_identity_kernel(self):
        layer = sl.Conv1DTranspose(
            2, 2, 1, stride=1,
            params={"weight": np.eye(2, dtype=np.float32)[None], "bias": np.zeros(2, np.float32)},
        )
        x = random_sequence(1, 2, 6, 2)
        assert_sequences_close(layer.layer(x, training=False), x)

    @pytest.mark.parametrize("case", range(20))
    def test_matches_scatter_add_oracle(self, case):
        rng = np.random.default_rng(200 + case)
        k = int(rng.integers(1, 7))
        stride = int(rng.integers(1, 5))
        padding = ("causal", "same")[case % 2]
        time = int(rng.integers(2, 17))
        layer = sl.Conv1DTranspose(2, 3, k, stride=stride, padding=padding, rng=rng)
        x = random_sequence(case, 2, time, 2, lengths=[time, max(1, time - 2)])
        y = layer.layer(x, training=False)
        expect, expect_mask = tconv_oracle(
            x, layer.parameters["weight"], layer.parameters["bias"], stride, padding
        )
        np.testing.assert_array_equal(np.asarray(y.mask), expect_mask)
        got = np.asarray(y.mask_invalid().values, np.float64)
        np.testing.assert_allclose(got, np.where(expect_mask[..., None], expect, 0), atol=1e-5)


class TestResampling:
    def test_rate_one_identity(self):
        x = random_sequence(2, 2, 6, 3)
        for layer in (sl.Downsample1D(1), sl.Upsample1D(1)):
            assert_sequences_close(layer.layer(x, training=False), x)

    def test_down3_takes_every_third(self):
        x = Sequence.from_values(np.arange(9, dtype=np.float32).reshape(1, 9, 1))
        y = sl.Downsample1D(3).layer(x, training=False)
        np.testing.assert_array_equal(y.values[0, :, 0], [0, 3, 6])

    def test_up_then_down_identity(self):
        x = random_sequence(3, 2, 8, 3)
        composed = sl.Serial([sl.Upsample1D(2), sl.Downsample1D(2)])
        assert_sequences_close(composed.layer(x, training=False), x)
        assert composed.output_ratio == 1

    def test_down_then_up_block_size_two(self):
        # the paper's internal-resampling example: ratio 1 but block 2
        composed = sl.Serial([sl.Downsample1D(2), sl.Upsample1D(2)])
        assert composed.output_ratio == 1
        assert composed.block_size == 2


class TestDelayLookahead:
    def test_zero_is_identity(self):
        x = random_sequence(4, 2, 6, 3)
        assert_sequences_close(sl.Delay(0).layer(x, training=False), x)
        assert_sequences_close(sl.Lookahead(0).layer(x, training=False), x)

    def test_delay_then_lookahead_recovers_valid_region(self):
        x = random_sequence(5, 2, 8, 3).mask_invalid()
        composed = sl.Serial([sl.Delay(2), sl.Lookahead(2)])
        y = composed.layer(x, training=False)
        lengths = np.asarray(x.mask).sum(axis=1)
        for b in range(2):
            keep = int(lengths[b]) - 2  # the final delayed steps fall off the end
            np.testing.assert_allclose(
                np.asarray(y.values)[b, :keep], np.asarray(x.values)[b, :keep], atol=0
            )

    def test_delay_rf_anchor(self):
        assert sl.Delay(3).receptive_field == (-3, -3)
        assert sl.Lookahead(2).receptive_field == (2, 2)

    def test_delay_prepends_invalid(self):
        x = random_sequence(6, 1, 5, 2)
        y = sl.Delay(2).layer(x, training=False)
        assert not np.asarray(y.mask)[0, :2].any()
        np.testing.assert_array_equal(
            np.asarray(y.values)[0, 2:], np.asarray(x.mask_invalid().values)[0, :3]
        )


class TestPooling:
    def test_window_one_identity(self):
        x = random_sequence(7, 2, 6, 3)
        for cls in (sl.MaxPooling1D, sl.MinPooling1D, sl.AveragePooling1D):
            assert_sequences_close(cls(1).layer(x, training=False), x)

    def test_max_window2_causal_hand_case(self):
        x = Sequence.from_values(np.array([[[1.0], [3.0], [2.0]]], np.float32))
        y = sl.MaxPooling1D(2, padding="causal").layer(x, training=False)
        np.testing.assert_array_equal(y.values[0, :, 0], [1, 3, 3])

    @pytest.mark.parametrize("kind,cls", [("max", sl.MaxPooling1D), ("min", sl.MinPooling1D), ("avg", sl.AveragePooling1D)])
    @pytest.mark.parametrize("case", range(7))
    def test_matches_validity_aware_loop_oracle(self, kind, cls, case):
        rng = np.random.default_rng(300 + case)
        window = int(rng.integers(1, 5))
        stride = int(rng.integers(1, 3))
        padding = ("causal", "reverse_causal", "same")[case % 3]
        time = int(rng.integers(4, 17))
        layer = cls(window, stride=stride, padding=padding)
        x = random_sequence(case, 2, time, 2, lengths=[time, max(1, time - 3)])
        y = layer.layer(x, training=False)
        expect, expect_mask = pool_oracle(kind, x, window, stride, padding)
        np.testing.assert_array_equal(np.asarray(y.mask), expect_mask)
        got = np.asarray(y.mask_invalid().values, np.float64)
        np.testing.assert_allclose(got, np.where(expect_mask[..., None], expect, 0), atol=1e-5)

    def test_poisoned_padding_never_read(self, rng):
        layer = sl.AveragePooling1D(3, padding="same")
        x = random_sequence(8, 2, 8, 2, lengths=[8, 4])
        clean = layer.layer(x, training=False).mask_invalid()
        poisoned = layer.layer(poison_invalid(x), training=False).mask_invalid()
        np.testing.assert_array_equal(clean.values, poisoned.values)


class TestFrameWindowOverlapAdd:
    def test_rectangular_roundtrip_no_overlap(self):
        # partition identity requires hop-aligned valid lengths
        x = random_sequence(9, 2, 12, 3, lengths=[12, 9]).mask_invalid()
        frame = sl.Frame(3, 3)
        ola = sl.OverlapAdd(3, 3)
        framed = frame.layer(x, training=False)
        back = ola.layer(framed, training=False)
        assert_sequences_close(back, x)

    def test_half_overlap_doubles_interior(self):
        x = Sequence.from_values(np.ones((1, 12, 1), np.float32))
        composed = sl.Serial([sl.Frame(4, 2), sl.OverlapAdd(4, 2)])
        y = composed.layer(x, training=False)
        # interior positions receive two overlapping contributions
        np.testing.assert_allclose(np.asarray(y.values)[0, 2:10, 0], 2.0, atol=1e-6)
        # explicit overlap-add loop oracle
        frames = sl.Frame(4, 2).layer(x, training=False)
        expect = np.zeros(14)
        for f in range(frames.time):
            expect[f * 2 : f * 2 + 4] += np.asarray(frames.values)[0, f, :, 0]
        np.testing.assert_allclose(np.asarray(y.values)[0, :, 0], expect[:12], atol=1e-6)

    def test_frame_metadata(self):
        frame = sl.Frame(4, 2)
        assert frame.output_ratio == Fraction(1, 2)
        assert frame.block_size == 2
        assert frame.receptive_field == (0, 3)
        ola = sl.OverlapAdd(4, 2)
        assert ola.output_ratio == Fraction(2)
        assert ola.output_latency == 2
        assert ola.input_latency == 1

    def test_hann_symmetric_endpoints_zero(self):
        curve = window_curve("hann", 9)
        expect = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(9) / 8)  # float64 closed form
        np.testing.assert_allclose(curve, expect, atol=1e-7)
        assert curve[0] == 0 and curve[-1] == 0
        np.testing.assert_allclose(curve, curve[::-1], atol=0)

    def test_window_layer_multiplies_frame_axis(self):
        x = random_sequence(10, 1, 6, (4, 2))
        y = sl.Window("hann", axis=0).layer(x, training=False)
        curve = window_curve("hann", 4)
        np.testing.assert_allclose(
            np.asarray(y.values), np.asarray(x.values) * curve[None, None, :, None], atol=1e-7
        )

    def test_invalid_hop(self):
        with pytest.raises(ValueError):
            sl.Frame(2, 3)
        with pytest.raises(ValueError):
            sl.OverlapAdd(4, 0)
