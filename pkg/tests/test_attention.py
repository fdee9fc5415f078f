"""Self-attention against an O(T^2) masked-softmax oracle, plus cache
semantics the streaming path must honor."""

import numpy as np
import pytest

import seqstream as sl
from seqstream.sequence import ChannelSpec, Sequence
from seqstream.streaming import step_by_step
from seqstream.verify import HarnessConfig, verify_contract

from conftest import assert_sequences_close, random_sequence


def attention_oracle(x: Sequence, params, num_heads, units, past, future):
    """Explicit double loop over (query, key) pairs in float64."""
    xm = np.asarray(x.mask_invalid().values, np.float64)
    mask = np.asarray(x.mask)
    batch, time = mask.shape
    q = np.einsum("btd,dhu->bthu", xm, params["q_proj"].astype(np.float64))
    k = np.einsum("btd,dhu->bthu", xm, params["k_proj"].astype(np.float64))
    v = np.einsum("btd,dhu->bthu", xm, params["v_proj"].astype(np.float64))
    out = np.zeros((batch, time, num_heads, units))
    scale = 1.0 / np.sqrt(units)
    for b in range(batch):
        for t in range(time):
            if not mask[b, t]:
                continue
            for h in range(num_heads):
                logits, vals = [], []
                for u in range(time):
                    if not mask[b, u]:
                        continue
                    if u > t + future:
                        continue
                    if past >= 0 and u < t - past:
                        continue
                    logits.append(np.dot(q[b, t, h], k[b, u, h]) * scale)
                    vals.append(v[b, u, h])
                logits = np.asarray(logits)
                weights = np.exp(logits - logits.max())
                weights = weights / weights.sum()
                out[b, t, h] = np.einsum("s,su->u", weights, np.stack(vals))
    return out, mask


def make_layer(seed=0, past=-1, future=0, d=4, heads=2, units=4):
    return sl.DotProductSelfAttention(
        d, heads, units, max_past_horizon=past, max_future_horizon=future,
        rng=np.random.default_rng(seed),
    )


class TestAttentionLayer:
    def test_single_valid_timestep_returns_value_projection(self):
        layer = make_layer(seed=1)
        x = random_sequence(0, 1, 4, 4, lengths=[1])
        y = layer.layer(x, training=False)
        v = np.einsum(
            "btd,dhu->bthu", np.asarray(x.mask_invalid().values), layer.parameters["v_proj"]
        )
        np.testing.assert_allclose(y.values[0, 0], v[0, 0], atol=1e-6)

    @pytest.mark.parametrize("case", range(20))
    def test_matches_masked_softmax_oracle(self, case):
        rng = np.random.default_rng(400 + case)
        past = (-1, 3, 5)[case % 3]
        future = (0, 2)[case % 2]
        time = int(rng.integers(3, 17))
        layer = make_layer(seed=case, past=past, future=future)
        x = random_sequence(case, 2, time, 4, lengths=[time, max(1, time - 2)])
        y = layer.layer(x, training=False)
        expect, mask = attention_oracle(
            x, layer.parameters, 2, 4, past, future
        )
        np.testing.assert_array_equal(np.asarray(y.mask), mask)
        np.testing.assert_allclose(
            np.asarray(y.mask_invalid().values, np.float64), expect, atol=1e-5
        )

    def test_bounded_past_ignores_older_inputs(self):
        layer = make_layer(seed=2, past=2)
        x = random_sequence(1, 1, 10, 4)
        y = layer.layer(x, training=False)
        perturbed_values = np.array(x.values)
        perturbed_values[0, 1] += 1.0  # more than 2 steps before t=8
        y2 = layer.layer(Sequence.from_values(perturbed_values), training=False)
        np.testing.assert_allclose(y.values[0, 8:], y2.values[0, 8:], atol=1e-7)
        assert np.abs(np.asarray(y.values)[0, 1:4] - np.asarray(y2.values)[0, 1:4]).max() > 1e-4

    def test_softmax_rows_sum_to_one(self):
        # via the oracle decomposition: uniform values make each output the mean
        layer = make_layer(seed=3, past=-1)
        x = Sequence.from_values(np.ones((1, 6, 4), np.float32))
        y = layer.layer(x, training=False)
        v = np.einsum("btd,dhu->bthu", np.asarray(x.values), layer.parameters["v_proj"])
        np.testing.assert_allclose(np.asarray(y.values), v, atol=1e-5)

    def test_unbounded_future_rejected(self):
        with pytest.raises(ValueError, match="max_future_horizon"):
            make_layer(future=-1)

    def test_output_spec(self):
        layer = make_layer()
        assert layer.get_output_spec(ChannelSpec((4,))) == ChannelSpec((2, 4))
        with pytest.raises(sl.SpecMismatchError):
            layer.get_output_spec(ChannelSpec((5,)))

    def test_latency_equals_future_horizon(self):
        layer = make_layer(past=4, future=2)
        assert layer.input_latency == 2
        assert layer.output_latency == 2
        assert layer.receptive_field == (-4, 2)
        assert make_layer(past=-1).receptive_field == (-np.inf, 0)


class TestAttentionStep:
    @pytest.mark.parametrize("past,future", [(-1, 0), (4, 0), (4, 2)])
    def test_step_matches_layer(self, past, future):
        layer = make_layer(seed=4, past=past, future=future)
        x = random_sequence(2, 2, 16, 4, lengths=[16, 11])
        y = layer.layer(x, training=False)
        ys = step_by_step(layer, x, training=False)
        assert_sequences_close(y, ys)

    def test_first_step_single_valid_position(self):
        layer = make_layer(seed=5, past=4)
        x = random_sequence(3, 1, 1, 4)
        state = layer.get_initial_state(1, ChannelSpec((4,)), training=False)
        y, _ = layer.step(x, state, training=False)
        v = np.einsum(
            "btd,dhu->bthu", np.asarray(x.mask_invalid().values), layer.parameters["v_proj"]
        )
        np.testing.assert_allclose(np.asarray(y.values), v, atol=1e-6)

    def test_invalid_steps_leave_cache_and_counts_unchanged(self):
        layer = make_layer(seed=6, past=4)
        x = random_sequence(4, 2, 4, 4)
        state = layer.get_initial_state(2, ChannelSpec((4,)), training=False)
        _, state = layer.step(x, state, training=False)
        poison = Sequence(
            np.full((2, 4, 4), np.nan, np.float32), np.zeros((2, 4), bool)
        )
        _, state2 = layer.step(poison, state, training=False)
        np.testing.assert_array_equal(state2["counts"], state["counts"])
        np.testing.assert_array_equal(state2["k_cache"], state["k_cache"])
        np.testing.assert_array_equal(state2["v_cache"], state["v_cache"])

    def test_bounded_state_shapes_constant(self):
        layer = make_layer(seed=7, past=3, future=2)
        x = random_sequence(5, 2, 4, 4)
        state = layer.get_initial_state(2, ChannelSpec((4,)), training=False)
        shapes = {k: np.shape(v) for k, v in state.items() if isinstance(v, np.ndarray)}
        for _ in range(4):
            _, state = layer.step(x, state, training=False)
            for key, shape in shapes.items():
                assert np.shape(state[key]) == shape, key
        assert not layer.state_grows

    def test_unbounded_cache_grows(self):
        layer = make_layer(seed=8, past=-1)
        assert layer.state_grows
        x = random_sequence(6, 2, 4, 4)
        state = layer.get_initial_state(2, ChannelSpec((4,)), training=False)
        _, state = layer.step(x, state, training=False)
        first = state["k_cache"].shape[1]
        _, state = layer.step(x, state, training=False)
        assert state["k_cache"].shape[1] > first


@pytest.mark.parametrize("past,future", [(-1, 0), (4, 0), (4, 2)])
def test_contract_suite(past, future):
    layer = make_layer(seed=9, past=past, future=future)
    report = verify_contract(layer, ChannelSpec((4,)), HarnessConfig(tolerance=1e-5))
    assert report.passed, report.render()
