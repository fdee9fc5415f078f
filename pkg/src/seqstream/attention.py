"""Multi-headed dot-product self-attention with a streaming KV cache.

Each output step attends over the valid inputs inside a configurable window:
``max_past_horizon`` steps back (-1 for unbounded) through
``max_future_horizon`` steps ahead. A future horizon F makes the layer emit
F invalid placeholder steps while queries wait for their lookahead context,
so output latency and input latency both equal F.

Step-wise state:

* a key/value cache over past steps - a ring of extent ``max_past_horizon``
  for bounded horizons, or a growing buffer when the past is unbounded (the
  one sanctioned exception to fixed-shape state);
* a per-row count of valid cached entries. Invalid input steps are never
  written, so feeding invalid blocks leaves cache and counts untouched;
* when F > 0, a FIFO of the last F projected queries/keys/values awaiting
  emission.
"""

from __future__ import annotations

import numpy as np

from . import params as params_lib
from .errors import SpecMismatchError
from .layer import SequenceLayer
from .sequence import ChannelSpec, Sequence

__all__ = ["DotProductSelfAttention"]

_NEG_INF = np.float32(-np.inf)


class DotProductSelfAttention(SequenceLayer):
    def __init__(
        self,
        d_model,
        num_heads,
        units_per_head,
        max_past_horizon=-1,
        max_future_horizon=0,
        *,
        params=None,
        rng=None,
        name=None,
    ):
        super().__init__(name)
        if max_past_horizon < -1:
            raise ValueError(f"max_past_horizon must be >= 0 or -1, got {max_past_horizon}")
        if max_future_horizon < 0:
            raise ValueError(
                f"max_future_horizon must be a finite value >= 0, got {max_future_horizon}"
            )
        self.d_model = int(d_model)
        self.num_heads = int(num_heads)
        self.units_per_head = int(units_per_head)
        self.max_past_horizon = int(max_past_horizon)
        self.max_future_horizon = int(max_future_horizon)
        proj = (self.d_model, self.num_heads, self.units_per_head)
        self._params = params_lib.materialize(
            {"q_proj": proj, "k_proj": proj, "v_proj": proj}, params, rng, self.name
        )

    @property
    def parameters(self):
        return dict(self._params)

    @property
    def unbounded_past(self) -> bool:
        return self.max_past_horizon == -1

    @property
    def state_grows(self) -> bool:
        return self.unbounded_past

    @property
    def input_latency(self):
        return self.max_future_horizon

    @property
    def output_latency(self):
        return self.max_future_horizon

    @property
    def receptive_field_per_step(self):
        past = -np.inf if self.unbounded_past else -self.max_past_horizon
        return {0: (past, self.max_future_horizon)}

    def get_output_spec(self, input_spec, constants=None):
        if input_spec.shape != (self.d_model,):
            raise SpecMismatchError(
                f"{self.name}: expected channel shape ({self.d_model},), got {input_spec.shape}"
            )
        return ChannelSpec((self.num_heads, self.units_per_head), np.float32)

    def _project(self, values):
        q = np.einsum("btd,dhu->bthu", values, self._params["q_proj"], optimize=False)
        k = np.einsum("btd,dhu->bthu", values, self._params["k_proj"], optimize=False)
        v = np.einsum("btd,dhu->bthu", values, self._params["v_proj"], optimize=False)
        return q.astype(np.float32), k.astype(np.float32), v.astype(np.float32)

    def _logit_scale(self):
        return np.float32(1.0 / np.sqrt(self.units_per_head))

    @staticmethod
    def _softmax_context(logits, values):
        """Masked softmax over the last logits axis, then value mixing.

        logits [B, H, T, S] with -inf at excluded positions; values
        [B, S, H, U]. Rows with no admissible position produce zeros.
        """
        peak = np.max(logits, axis=-1, keepdims=True)
        peak = np.where(np.isfinite(peak), peak, np.float32(0))
        weights = np.exp(logits - peak)
        denom = np.sum(weights, axis=-1, keepdims=True)
        probs = weights / np.maximum(denom, np.float32(1e-30))
        context = np.einsum("bhts,bshu->bthu", probs, values, optimize=False)
        return context.astype(np.float32), probs

    def layer(self, x, *, training, constants=None):
        self._check_channel_rank(x, 1)
        if x.channel_shape[0] != self.d_model:
            raise SpecMismatchError(
                f"{self.name}: expected d_model {self.d_model}, got {x.channel_shape[0]}"
            )
        xm = x.mask_invalid()
        q, k, v = self._project(np.asarray(xm.values, dtype=np.float32))
        time = x.time
        logits = (
            np.einsum("bthu,bshu->bhts", q, k, optimize=False).astype(np.float32)
            * self._logit_scale()
        )
        t_idx = np.arange(time)[:, None]
        s_idx = np.arange(time)[None, :]
        allowed = s_idx <= t_idx + self.max_future_horizon
        if not self.unbounded_past:
            allowed &= s_idx >= t_idx - self.max_past_horizon
        admissible = allowed[None, None, :, :] & np.asarray(x.mask)[:, None, None, :]
        logits = np.where(admissible, logits, _NEG_INF)
        context, _ = self._softmax_context(logits, v)
        return Sequence(context, x.mask).mask_invalid()

    # -- streaming ---------------------------------------------------------

    def get_initial_state(self, batch_size, input_spec, *, training, constants=None):
        h, u, f = self.num_heads, self.units_per_head, self.max_future_horizon
        cache_len = 0 if self.unbounded_past else self.max_past_horizon
        kv_shape = (batch_size, cache_len, h, u)
        pending_shape = (batch_size, f, h, u)
        return {
            "k_cache": np.zeros(kv_shape, np.float32),
            "v_cache": np.zeros(kv_shape, np.float32),
            "counts": np.zeros(batch_size, np.int64),
            "position": 0,
            "pending_q": np.zeros(pending_shape, np.float32),
            "pending_k": np.zeros(pending_shape, np.float32),
            "pending_v": np.zeros(pending_shape, np.float32),
            "pending_mask": np.zeros((batch_size, f), bool),
        }

    def _window_positions(self, query_pos: int) -> np.ndarray:
        if self.unbounded_past:
            return np.arange(0, max(query_pos, 0))
        return np.arange(query_pos - self.max_past_horizon, query_pos)

    def step(self, x, state, *, training, constants=None):
        self._check_block(x)
        self._check_channel_rank(x, 1)
        xm = x.mask_invalid()
        q_new, k_new, v_new = self._project(np.asarray(xm.values, dtype=np.float32))
        mask_new = np.asarray(x.mask)
        batch = x.batch_size
        f = self.max_future_horizon
        scale = self._logit_scale()

        k_cache = state["k_cache"]
        v_cache = state["v_cache"]
        counts = state["counts"].copy()
        position = state["position"]
        pend_q, pend_k, pend_v = state["pending_q"], state["pending_k"], state["pending_v"]
        pend_m = state["pending_mask"]

        if self.unbounded_past:
            k_cache = np.array(k_cache)
            v_cache = np.array(v_cache)
        else:
            k_cache = k_cache.copy()
            v_cache = v_cache.copy()

        outputs = []
        out_masks = []
        for i in range(x.time):
            # stage the newest entry; the oldest pending becomes the query
            pend_q = np.concatenate([pend_q, q_new[:, i : i + 1]], axis=1)
            pend_k = np.concatenate([pend_k, k_new[:, i : i + 1]], axis=1)
            pend_v = np.concatenate([pend_v, v_new[:, i : i + 1]], axis=1)
            pend_m = np.concatenate([pend_m, mask_new[:, i : i + 1]], axis=1)
            query_pos = position - f
            q_i = pend_q[:, 0]
            q_mask = pend_m[:, 0]

            window = self._window_positions(query_pos)
            if self.unbounded_past:
                present = window < k_cache.shape[1]
                window = window[present]
                slots = window
            else:
                slots = window % max(self.max_past_horizon, 1)
            if window.size:
                k_past = k_cache[:, slots]
                v_past = v_cache[:, slots]
                past_valid = (window[None, :] >= 0) & (window[None, :] < counts[:, None])
            else:
                k_past = np.zeros((batch, 0) + q_i.shape[1:], np.float32)
                v_past = np.zeros((batch, 0) + q_i.shape[1:], np.float32)
                past_valid = np.zeros((batch, 0), bool)

            keys = np.concatenate([k_past, pend_k], axis=1)
            vals = np.concatenate([v_past, pend_v], axis=1)
            valid = np.concatenate([past_valid, pend_m], axis=1)

            logits = (
                np.einsum("bhu,bshu->bhs", q_i, keys, optimize=False).astype(np.float32)
                * scale
            )
            logits = np.where(valid[:, None, :], logits, _NEG_INF)
            context, _ = self._softmax_context(logits[:, :, None, :], vals)
            out = np.where(q_mask[:, None, None], context[:, 0], np.float32(0))
            outputs.append(out[:, None])
            out_masks.append(q_mask[:, None])

            # retire the emitted entry into the past cache (valid rows only)
            retire_k, retire_v, retire_m = pend_k[:, 0], pend_v[:, 0], pend_m[:, 0]
            if query_pos >= 0:
                if self.unbounded_past:
                    if retire_m.any():
                        k_cache = np.concatenate([k_cache, retire_k[:, None]], axis=1)
                        v_cache = np.concatenate([v_cache, retire_v[:, None]], axis=1)
                        k_cache[:, -1] = np.where(retire_m[:, None, None], retire_k, 0)
                        v_cache[:, -1] = np.where(retire_m[:, None, None], retire_v, 0)
                elif self.max_past_horizon > 0:
                    slot = query_pos % self.max_past_horizon
                    k_cache[:, slot] = np.where(retire_m[:, None, None], retire_k, k_cache[:, slot])
                    v_cache[:, slot] = np.where(retire_m[:, None, None], retire_v, v_cache[:, slot])
                counts = counts + retire_m.astype(np.int64)
            pend_q, pend_k, pend_v, pend_m = (
                pend_q[:, 1:],
                pend_k[:, 1:],
                pend_v[:, 1:],
                pend_m[:, 1:],
            )
            position += 1

        new_state = {
            "k_cache": k_cache,
            "v_cache": v_cache,
            "counts": counts,
            "position": position,
            "pending_q": pend_q,
            "pending_k": pend_k,
            "pending_v": pend_v,
            "pending_mask": pend_m,
        }
        out = Sequence(
            np.concatenate(outputs, axis=1), np.concatenate(out_masks, axis=1), masked=True
        )
        return out, new_state
