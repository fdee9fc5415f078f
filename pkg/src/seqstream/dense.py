"""Per-timestep layers: projections, activations, normalization, dropout,
channel-shape manipulation, conditioning, and the identity/emit utilities.

Everything here has output ratio 1, block size 1, zero latency, and a
receptive field of (0, 0): no information moves across time. Dropout is the
one stochastic member; its draws are a pure function of (seed, absolute
timestep, batch row, flat channel index) so that any block partition of the
stream reproduces the same decisions.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

from . import params as params_lib
from .errors import MissingConstantError, SpecMismatchError
from .layer import Constants, RngCounter, SequenceLayer, State, StatelessLayer
from .sequence import ChannelSpec, Sequence

__all__ = [
    "Identity",
    "Emit",
    "Dense",
    "Scale",
    "Add",
    "Pointwise",
    "Softmax",
    "LayerNormalization",
    "RMSNormalization",
    "Dropout",
    "Reshape",
    "Flatten",
    "ExpandDims",
    "Squeeze",
    "MoveAxis",
    "TransposeChannels",
    "Conditioning",
]


class Identity(StatelessLayer):
    def layer(self, x, *, training, constants=None):
        return x


class Emit(StatelessLayer):
    """Identity layer that exposes its input as an emit for tapping a stack."""

    def layer(self, x, *, training, constants=None):
        return x

    def layer_with_emits(self, x, *, training, constants=None):
        return x, x

    def step_with_emits(self, x, state, *, training, constants=None):
        self._check_block(x)
        return x, state, x


class Dense(StatelessLayer):
    """Affine map over the final channel dimension."""

    def __init__(self, in_features, units, use_bias=True, *, params=None, rng=None, name=None):
        super().__init__(name)
        self.in_features = int(in_features)
        self.units = int(units)
        self.use_bias = bool(use_bias)
        spec = {"weight": (self.in_features, self.units)}
        if self.use_bias:
            spec["bias"] = (self.units,)
        self._params = params_lib.materialize(spec, params, rng, self.name)

    @property
    def parameters(self):
        return dict(self._params)

    def get_output_spec(self, input_spec, constants=None):
        if not input_spec.shape or input_spec.shape[-1] != self.in_features:
            raise SpecMismatchError(
                f"{self.name}: expected final channel extent {self.in_features}, "
                f"got {input_spec.shape}"
            )
        return ChannelSpec(input_spec.shape[:-1] + (self.units,), input_spec.dtype)

    def layer(self, x, *, training, constants=None):
        if not x.channel_shape or x.channel_shape[-1] != self.in_features:
            raise SpecMismatchError(
                f"{self.name}: expected final channel extent {self.in_features}, "
                f"got {x.channel_shape}"
            )
        y = np.einsum("...i,io->...o", np.asarray(x.values), self._params["weight"], optimize=False)
        if self.use_bias:
            y = y + self._params["bias"]
        return Sequence(np.asarray(y, dtype=np.float32), x.mask)


class Scale(StatelessLayer):
    """Multiplies by a constant scalar or channel-broadcastable array."""

    def __init__(self, value, name=None):
        super().__init__(name)
        self.value = np.asarray(value, dtype=np.float32)

    def layer(self, x, *, training, constants=None):
        return x.apply_values(lambda v: v * self.value, zero_preserving=True)


class Add(StatelessLayer):
    """Adds a constant scalar or channel-broadcastable array."""

    def __init__(self, value, name=None):
        super().__init__(name)
        self.value = np.asarray(value, dtype=np.float32)

    def layer(self, x, *, training, constants=None):
        zero_preserving = bool(np.all(self.value == 0))
        return x.apply_values(lambda v: v + self.value, zero_preserving=zero_preserving)


def _gelu(v):
    return (0.5 * v * (1.0 + special.erf(v / np.sqrt(2.0)))).astype(v.dtype)


def _sigmoid(v):
    return special.expit(v).astype(v.dtype)


# kind -> (fn builder, zero-preserving predicate, allows integer input)
_POINTWISE = {
    "relu": (lambda p: lambda v: np.maximum(v, 0), lambda p: True, False),
    "gelu": (lambda p: _gelu, lambda p: True, False),
    "sigmoid": (lambda p: _sigmoid, lambda p: False, False),
    "tanh": (lambda p: np.tanh, lambda p: True, False),
    "swish": (lambda p: lambda v: v * _sigmoid(v), lambda p: True, False),
    "softplus": (lambda p: lambda v: np.logaddexp(0.0, v).astype(v.dtype), lambda p: False, False),
    "leaky_relu": (
        lambda p: lambda v: np.where(v >= 0, v, np.asarray(p, v.dtype) * v),
        lambda p: True,
        False,
    ),
    "elu": (
        lambda p: lambda v: np.where(v >= 0, v, np.asarray(p, v.dtype) * np.expm1(v)),
        lambda p: True,
        False,
    ),
    "abs": (lambda p: np.abs, lambda p: True, True),
    "exp": (lambda p: np.exp, lambda p: False, False),
    "log": (lambda p: np.log, lambda p: False, False),  # domain: positive values
    "power": (lambda p: lambda v: np.power(v, np.asarray(p, v.dtype)), lambda p: p > 0, False),
    "maximum": (lambda p: lambda v: np.maximum(v, np.asarray(p, v.dtype)), lambda p: p <= 0, True),
    "minimum": (lambda p: lambda v: np.minimum(v, np.asarray(p, v.dtype)), lambda p: p >= 0, True),
    "mod": (lambda p: lambda v: np.mod(v, np.asarray(p, v.dtype)), lambda p: True, True),
}

_POINTWISE_DEFAULTS = {"leaky_relu": 0.2, "elu": 1.0}


class Pointwise(StatelessLayer):
    """Named elementwise activation applied per value.

    Kinds with f(0) != 0 clear the masked flag; zero-preserving kinds keep it.
    """

    def __init__(self, kind, value=None, name=None):
        super().__init__(name if name is not None else kind)
        if kind not in _POINTWISE:
            raise ValueError(f"unknown pointwise kind {kind!r}; known: {sorted(_POINTWISE)}")
        self.kind = kind
        self.value = _POINTWISE_DEFAULTS.get(kind) if value is None else value
        builder, zp, self._allows_int = _POINTWISE[kind]
        self._fn = builder(self.value)
        self._zero_preserving = zp(self.value)

    def layer(self, x, *, training, constants=None):
        if x.dtype.kind != "f" and not self._allows_int:
            raise SpecMismatchError(f"{self.name}: float input required, got {x.dtype}")
        return x.apply_values(self._fn, zero_preserving=self._zero_preserving)


class Softmax(StatelessLayer):
    """Softmax over one channel axis, computed per (batch, time) position."""

    def __init__(self, axis=-1, name=None):
        super().__init__(name)
        self.axis = int(axis)

    def _values_axis(self, ndim):
        axis = self.axis % (ndim - 2)
        return axis + 2

    def layer(self, x, *, training, constants=None):
        if not x.channel_shape:
            raise SpecMismatchError(f"{self.name}: input must have channel dimensions")
        axis = self._values_axis(x.ndim)
        v = np.asarray(x.values)
        shifted = v - np.max(v, axis=axis, keepdims=True)
        e = np.exp(shifted)
        out = e / np.sum(e, axis=axis, keepdims=True)
        return Sequence(out.astype(x.dtype), x.mask)


class LayerNormalization(StatelessLayer):
    """Normalizes each timestep over all channel axes, then applies an affine."""

    def __init__(self, shape, epsilon=1e-6, *, params=None, rng=None, name=None):
        super().__init__(name)
        if epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {epsilon}")
        self.shape = tuple(int(d) for d in (shape if np.ndim(shape) else (shape,)))
        self.epsilon = float(epsilon)
        spec = {"scale": self.shape, "offset": self.shape}
        self._params = params_lib.materialize(spec, params, rng, self.name)

    @property
    def parameters(self):
        return dict(self._params)

    def _check(self, channel_shape):
        if tuple(channel_shape) != self.shape:
            raise SpecMismatchError(
                f"{self.name}: expected channel shape {self.shape}, got {tuple(channel_shape)}"
            )

    def get_output_spec(self, input_spec, constants=None):
        self._check(input_spec.shape)
        return input_spec

    def layer(self, x, *, training, constants=None):
        self._check(x.channel_shape)
        axes = tuple(range(2, x.ndim))
        v = np.asarray(x.values, dtype=np.float32)
        mean = v.mean(axis=axes, keepdims=True)
        centered = v - mean
        var = np.mean(np.square(centered), axis=axes, keepdims=True)
        normed = centered / np.sqrt(var + np.float32(self.epsilon))
        out = normed * self._params["scale"] + self._params["offset"]
        return Sequence(out.astype(np.float32), x.mask)


class RMSNormalization(StatelessLayer):
    """Root-mean-square normalization over channel axes (no mean centering)."""

    def __init__(self, shape, epsilon=1e-6, *, params=None, rng=None, name=None):
        super().__init__(name)
        if epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {epsilon}")
        self.shape = tuple(int(d) for d in (shape if np.ndim(shape) else (shape,)))
        self.epsilon = float(epsilon)
        self._params = params_lib.materialize({"scale": self.shape}, params, rng, self.name)

    @property
    def parameters(self):
        return dict(self._params)

    def _check(self, channel_shape):
        if tuple(channel_shape) != self.shape:
            raise SpecMismatchError(
                f"{self.name}: expected channel shape {self.shape}, got {tuple(channel_shape)}"
            )

    def get_output_spec(self, input_spec, constants=None):
        self._check(input_spec.shape)
        return input_spec

    def layer(self, x, *, training, constants=None):
        self._check(x.channel_shape)
        axes = tuple(range(2, x.ndim))
        v = np.asarray(x.values, dtype=np.float32)
        ms = np.mean(np.square(v), axis=axes, keepdims=True)
        out = v / np.sqrt(ms + np.float32(self.epsilon)) * self._params["scale"]
        # f(0) = 0, so a masked input stays masked
        return Sequence(out.astype(np.float32), x.mask, masked=x.masked)


# --- dropout ----------------------------------------------------------------

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_G1 = np.uint64(0x9E3779B97F4A7C15)
_G2 = np.uint64(0xC2B2AE3D27D4EB4F)
_G3 = np.uint64(0x165667B19E3779F9)


def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def counter_uniform(seed: int, t_abs, b, c) -> np.ndarray:
    """Uniform [0, 1) draws keyed by (seed, timestep, batch row, channel).

    Pure and order-free: the draw at a coordinate never depends on how the
    stream was partitioned into blocks.
    """
    t_abs = np.asarray(t_abs, dtype=np.uint64)
    b = np.asarray(b, dtype=np.uint64)
    c = np.asarray(c, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        h = _mix64(z ^ _mix64(t_abs[None, :, None] * _G1 + np.uint64(1)))
        h = _mix64(h ^ _mix64(b[:, None, None] * _G2 + np.uint64(2)))
        h = _mix64(h ^ _mix64(c[None, None, :] * _G3 + np.uint64(3)))
    return (h >> np.uint64(11)).astype(np.float64) * (2.0**-53)


class Dropout(SequenceLayer):
    """Drops each element with probability ``rate`` during training.

    Kept elements are scaled by 1/(1-rate). Identity when training is False.
    Step-wise state is an RngCounter whose offset advances by the timesteps
    consumed, so layer-wise and step-wise draws coincide for any block split.
    """

    def __init__(self, rate, seed=0, name=None):
        super().__init__(name)
        if not 0 <= rate < 1:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = float(rate)
        self.seed = int(seed)

    @property
    def is_stochastic(self):
        return self.rate > 0

    def _apply(self, x: Sequence, offset: int) -> Sequence:
        if x.dtype.kind != "f":
            raise SpecMismatchError(f"{self.name}: float input required, got {x.dtype}")
        batch, time = x.mask.shape
        channels = int(np.prod(x.channel_shape, dtype=np.int64)) if x.channel_shape else 1
        u = counter_uniform(
            self.seed, np.arange(offset, offset + time), np.arange(batch), np.arange(channels)
        )
        keep = (u < (1.0 - self.rate)).reshape((batch, time) + x.channel_shape)
        scale = np.float32(1.0 / (1.0 - self.rate))
        values = np.where(keep, np.asarray(x.values) * scale, np.float32(0))
        return Sequence(values, x.mask, masked=x.masked)

    def layer(self, x, *, training, constants=None):
        if not training or self.rate == 0:
            return x
        return self._apply(x, offset=0)

    def get_initial_state(self, batch_size, input_spec, *, training, constants=None):
        return RngCounter(self.seed, 0)

    def step(self, x, state: RngCounter, *, training, constants=None):
        self._check_block(x)
        if not training or self.rate == 0:
            return x, state.advanced(x.time)
        return self._apply(x, offset=state.offset), state.advanced(x.time)


# --- channel shape manipulation ---------------------------------------------


class _ChannelOp(StatelessLayer):
    """Base for pure channel-shape manipulations (bit-exact value moves)."""

    def _out_shape(self, channel_shape) -> tuple[int, ...]:
        raise NotImplementedError

    def get_output_spec(self, input_spec, constants=None):
        return ChannelSpec(self._out_shape(input_spec.shape), input_spec.dtype)

    def layer(self, x, *, training, constants=None):
        out_shape = self._out_shape(x.channel_shape)
        return x.apply_values(
            lambda v: self._transform(v, out_shape), zero_preserving=True
        )

    def _transform(self, values, out_shape):
        return values.reshape(values.shape[:2] + out_shape)


class Reshape(_ChannelOp):
    def __init__(self, shape, name=None):
        super().__init__(name)
        self.shape = tuple(int(d) for d in shape)

    def _out_shape(self, channel_shape):
        if math.prod(channel_shape) != math.prod(self.shape):
            raise SpecMismatchError(
                f"{self.name}: cannot reshape channels {tuple(channel_shape)} to {self.shape}"
            )
        return self.shape


class Flatten(_ChannelOp):
    def _out_shape(self, channel_shape):
        return (math.prod(channel_shape),)


class ExpandDims(_ChannelOp):
    def __init__(self, axis=0, name=None):
        super().__init__(name)
        self.axis = int(axis)

    def _out_shape(self, channel_shape):
        rank = len(channel_shape)
        axis = self.axis % (rank + 1) if self.axis < 0 else self.axis
        if axis > rank:
            raise SpecMismatchError(f"{self.name}: axis {self.axis} out of range for {channel_shape}")
        return channel_shape[:axis] + (1,) + channel_shape[axis:]


class Squeeze(_ChannelOp):
    def __init__(self, axis, name=None):
        super().__init__(name)
        self.axis = int(axis)

    def _out_shape(self, channel_shape):
        rank = len(channel_shape)
        axis = self.axis % rank
        if channel_shape[axis] != 1:
            raise SpecMismatchError(
                f"{self.name}: cannot squeeze extent {channel_shape[axis]} at axis {axis}"
            )
        return channel_shape[:axis] + channel_shape[axis + 1 :]


class MoveAxis(_ChannelOp):
    def __init__(self, source, destination, name=None):
        super().__init__(name)
        self.source = int(source)
        self.destination = int(destination)

    def _out_shape(self, channel_shape):
        rank = len(channel_shape)
        src, dst = self.source % rank, self.destination % rank
        dims = list(channel_shape)
        dims.insert(dst, dims.pop(src))
        return tuple(dims)

    def _transform(self, values, out_shape):
        rank = values.ndim - 2
        src, dst = self.source % rank, self.destination % rank
        return np.moveaxis(values, 2 + src, 2 + dst)


class TransposeChannels(_ChannelOp):
    def __init__(self, perm, name=None):
        super().__init__(name)
        self.perm = tuple(int(p) for p in perm)

    def _out_shape(self, channel_shape):
        if sorted(self.perm) != list(range(len(channel_shape))):
            raise SpecMismatchError(
                f"{self.name}: perm {self.perm} invalid for channel rank {len(channel_shape)}"
            )
        return tuple(channel_shape[p] for p in self.perm)

    def _transform(self, values, out_shape):
        return np.transpose(values, (0, 1) + tuple(2 + p for p in self.perm))


# --- conditioning -------------------------------------------------------------


class Conditioning(SequenceLayer):
    """Combines the input with a time-aligned conditioning sequence.

    The conditioning sequence is looked up in ``constants`` under ``key`` and
    must cover at least the input's time extent. In step mode the full
    conditioning sequence is supplied once (at get_initial_state and each
    step); an absolute-position counter in the state selects the slice for
    each block.
    """

    MODES = ("add", "concat")

    def __init__(self, key, mode="add", name=None):
        super().__init__(name)
        if mode not in self.MODES:
            raise ValueError(f"conditioning mode must be one of {self.MODES}, got {mode!r}")
        self.key = str(key)
        self.mode = mode

    def _lookup(self, constants: Constants | None) -> Sequence:
        if not constants or self.key not in constants:
            raise MissingConstantError(
                f"{self.name}: constants[{self.key!r}] is required"
            )
        cond = constants[self.key]
        if not isinstance(cond, Sequence):
            raise MissingConstantError(
                f"{self.name}: constants[{self.key!r}] must be a Sequence, got {type(cond).__name__}"
            )
        return cond

    def get_output_spec(self, input_spec, constants=None):
        cond = self._lookup(constants)
        if self.mode == "add":
            if cond.channel_shape != input_spec.shape:
                raise SpecMismatchError(
                    f"{self.name}: add conditioning requires equal channel shapes, "
                    f"got {input_spec.shape} and {cond.channel_shape}"
                )
            return input_spec
        if cond.channel_shape[:-1] != input_spec.shape[:-1]:
            raise SpecMismatchError(
                f"{self.name}: concat conditioning requires equal leading channel dims, "
                f"got {input_spec.shape} and {cond.channel_shape}"
            )
        shape = input_spec.shape[:-1] + (input_spec.shape[-1] + cond.channel_shape[-1],)
        return ChannelSpec(shape, input_spec.dtype)

    def _combine(self, x: Sequence, cond: Sequence, start: int) -> Sequence:
        if cond.batch_size != x.batch_size:
            raise SpecMismatchError(
                f"{self.name}: conditioning batch {cond.batch_size} != input batch {x.batch_size}"
            )
        if cond.time < start + x.time:
            raise SpecMismatchError(
                f"{self.name}: conditioning time {cond.time} too short for "
                f"positions [{start}, {start + x.time})"
            )
        window = cond.slice_time(start, start + x.time)
        mask = np.logical_and(x.mask, window.mask)
        if self.mode == "add":
            values = np.asarray(x.values) + np.asarray(window.values)
        else:
            values = np.concatenate([np.asarray(x.values), np.asarray(window.values)], axis=-1)
        return Sequence(values, mask)

    def layer(self, x, *, training, constants=None):
        return self._combine(x, self._lookup(constants), start=0)

    def get_initial_state(self, batch_size, input_spec, *, training, constants=None):
        self._lookup(constants)
        return 0

    def step(self, x, state: int, *, training, constants=None):
        self._check_block(x)
        y = self._combine(x, self._lookup(constants), start=state)
        return y, state + x.time
