"""Recurrent layers: an LSTM with explicit cell/hidden state."""

from __future__ import annotations

import numpy as np
from scipy import special

from . import params as params_lib
from . import tensor
from .errors import SpecMismatchError
from .layer import SequenceLayer
from .sequence import ChannelSpec, Sequence

__all__ = ["LSTM"]


class LSTM(SequenceLayer):
    """Standard LSTM over the time axis; the canonical unbounded-memory layer.

    Gate blocks in the fused kernel are ordered (input, forget, cell, output);
    random initialization adds 1.0 to the forget-gate bias. State holds at
    invalid timesteps, which is what makes trailing padding unable to disturb
    the recurrence.
    """

    def __init__(self, in_features, units, *, params=None, rng=None, name=None):
        super().__init__(name)
        self.in_features = int(in_features)
        self.units = int(units)
        spec = {
            "kernel": (self.in_features + self.units, 4 * self.units),
            "bias": (4 * self.units,),
        }
        if params is None:
            initialized = params_lib.materialize(spec, None, rng, self.name)
            bias = np.array(initialized["bias"])
            bias[self.units : 2 * self.units] += 1.0
            initialized["bias"] = tensor.freeze(bias)
            self._params = initialized
        else:
            self._params = params_lib.materialize(spec, params, None, self.name)

    @property
    def parameters(self):
        return dict(self._params)

    @property
    def receptive_field_per_step(self):
        return {0: (-np.inf, 0)}

    def get_output_spec(self, input_spec, constants=None):
        if input_spec.shape != (self.in_features,):
            raise SpecMismatchError(
                f"{self.name}: expected channel shape ({self.in_features},), got {input_spec.shape}"
            )
        return ChannelSpec((self.units,), np.float32)

    def get_initial_state(self, batch_size, input_spec, *, training, constants=None):
        zeros = np.zeros((batch_size, self.units), dtype=np.float32)
        return {"c": zeros, "h": zeros}

    def _scan(self, x: Sequence, c: np.ndarray, h: np.ndarray):
        self._check_channel_rank(x, 1)
        if x.channel_shape[0] != self.in_features:
            raise SpecMismatchError(
                f"{self.name}: expected {self.in_features} input features, got {x.channel_shape[0]}"
            )
        xm = x.mask_invalid()
        values = np.asarray(xm.values, dtype=np.float32)
        mask = np.asarray(x.mask)
        kernel, bias = self._params["kernel"], self._params["bias"]
        u = self.units
        outputs = np.zeros((x.batch_size, x.time, u), dtype=np.float32)
        for t in range(x.time):
            zin = np.concatenate([values[:, t], h], axis=1)
            z = np.einsum("bc,cg->bg", zin, kernel, optimize=False) + bias
            i_g = special.expit(z[:, :u])
            f_g = special.expit(z[:, u : 2 * u])
            g_g = np.tanh(z[:, 2 * u : 3 * u])
            o_g = special.expit(z[:, 3 * u :])
            c_new = f_g * c + i_g * g_g
            h_new = o_g * np.tanh(c_new)
            valid = mask[:, t][:, None]
            c = np.where(valid, c_new.astype(np.float32), c)
            h = np.where(valid, h_new.astype(np.float32), h)
            outputs[:, t] = np.where(valid, h_new, 0.0)
        return Sequence(outputs, mask, masked=True), {"c": c, "h": h}

    def layer(self, x, *, training, constants=None):
        zeros = np.zeros((x.batch_size, self.units), dtype=np.float32)
        out, _ = self._scan(x, zeros, zeros)
        return out

    def step(self, x, state, *, training, constants=None):
        self._check_block(x)
        return self._scan(x, state["c"], state["h"])
