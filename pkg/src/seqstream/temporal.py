"""Layers that mix information across time.

Streaming mechanics shared by the windowed layers (Conv1D, pooling, Frame):
the state carries the trailing context of already-seen masked inputs, sized
``output_latency * stride + pad_left`` so that each incoming block lines up
its windows at fixed offsets within ``context + block``. Output validity
follows the anchor rule: output step ``t`` is valid iff its anchor input
``t * stride`` (or ``floor(t / ratio)`` for upsampling layers) is valid.

Padding conventions (pad_left, with pad_left + pad_right = effective_kernel - 1):

* ``causal``: everything on the left; zero latency.
* ``reverse_causal``: everything on the right; full lookahead.
* ``same``: centered, left = (effective_kernel - 1) // 2.

Transpose convolutions trim ``max(kernel - stride, 0) // 2`` from the left
of the full scatter for ``same`` and nothing for ``causal``.
"""

from __future__ import annotations

import math

import numpy as np

from . import params as params_lib
from .errors import SpecMismatchError
from .layer import SequenceLayer, StatelessLayer, ceil_ratio
from .sequence import ChannelSpec, Sequence
from fractions import Fraction

__all__ = [
    "Conv1D",
    "Conv1DTranspose",
    "Downsample1D",
    "Upsample1D",
    "Delay",
    "StepDelay",
    "Lookahead",
    "MaxPooling1D",
    "MinPooling1D",
    "AveragePooling1D",
    "Frame",
    "Window",
    "OverlapAdd",
]

PADDING_MODES = ("causal", "reverse_causal", "same")


def effective_kernel(kernel_size: int, dilation: int) -> int:
    return (kernel_size - 1) * dilation + 1


def explicit_padding(mode: str, kernel_size: int, dilation: int) -> tuple[int, int]:
    eff = effective_kernel(kernel_size, dilation)
    if mode == "causal":
        return eff - 1, 0
    if mode == "reverse_causal":
        return 0, eff - 1
    if mode == "same":
        left = (eff - 1) // 2
        return left, eff - 1 - left
    raise ValueError(f"unknown padding mode {mode!r}; expected one of {PADDING_MODES}")


class _WindowedLayer(SequenceLayer):
    """Shared layer/step plumbing for fixed-window time reductions."""

    def __init__(self, kernel_size, stride, dilation, padding, name):
        super().__init__(name)
        if kernel_size < 1 or stride < 1 or dilation < 1:
            raise ValueError(
                f"kernel_size/stride/dilation must be >= 1, got "
                f"{(kernel_size, stride, dilation)}"
            )
        self.kernel_size = int(kernel_size)
        self.stride = int(stride)
        self.dilation = int(dilation)
        self.padding = str(padding)
        self.pad_left, self.pad_right = explicit_padding(padding, kernel_size, dilation)

    @property
    def output_ratio(self):
        return Fraction(1, self.stride)

    @property
    def block_size(self):
        return self.stride

    @property
    def input_latency(self):
        return self.pad_right

    @property
    def output_latency(self):
        return self.pad_right // self.stride

    @property
    def receptive_field_per_step(self):
        eff = effective_kernel(self.kernel_size, self.dilation)
        return {0: (-self.pad_left, -self.pad_left + eff - 1)}

    def _context_len(self) -> int:
        return self.output_latency * self.stride + self.pad_left

    def _reduce_windows(self, window_values, window_mask):
        """[B, out, k, ...ch] windows -> [B, out, ...ch] outputs."""
        raise NotImplementedError

    def _gather(self, values, mask, out_len):
        taps = np.arange(self.kernel_size) * self.dilation
        idx = np.arange(out_len)[:, None] * self.stride + taps[None, :]
        return values[:, idx], mask[:, idx]

    def layer(self, x, *, training, constants=None):
        xm = x.mask_invalid()
        time = x.time
        out_len = self.output_time(time)
        eff = effective_kernel(self.kernel_size, self.dilation)
        needed = max(0, (out_len - 1) * self.stride + eff - self.pad_left - time)
        ch_pads = [(0, 0)] * (x.ndim - 2)
        values = np.pad(np.asarray(xm.values), [(0, 0), (self.pad_left, needed)] + ch_pads)
        mask = np.pad(np.asarray(x.mask), [(0, 0), (self.pad_left, needed)])
        wv, wm = self._gather(values, mask, out_len)
        out = self._reduce_windows(wv, wm)
        out_mask = np.asarray(x.mask)[:, :: self.stride][:, :out_len]
        return Sequence(out, out_mask)

    def get_initial_state(self, batch_size, input_spec, *, training, constants=None):
        ctx = self._context_len()
        values = np.zeros((batch_size, ctx) + input_spec.shape, dtype=input_spec.dtype)
        mask = np.zeros((batch_size, ctx), dtype=bool)
        return Sequence(values, mask, masked=True)

    def step(self, x, state: Sequence, *, training, constants=None):
        self._check_block(x)
        xm = x.mask_invalid()
        values = np.concatenate([np.asarray(state.values), np.asarray(xm.values)], axis=1)
        mask = np.concatenate([np.asarray(state.mask), np.asarray(x.mask)], axis=1)
        out_len = x.time // self.stride
        wv, wm = self._gather(values, mask, out_len)
        out = self._reduce_windows(wv, wm)
        out_mask = mask[:, self.pad_left :: self.stride][:, :out_len]
        ctx = self._context_len()
        new_state = Sequence(
            values[:, values.shape[1] - ctx :], mask[:, mask.shape[1] - ctx :], masked=True
        )
        return Sequence(out, out_mask), new_state


class Conv1D(_WindowedLayer):
    """Strided, dilated 1D convolution over the time axis.

    Input channel shape [in_channels]; output [filters]. The kernel is
    applied to masked values, so padding can never leak into valid outputs.
    """

    def __init__(
        self,
        in_channels,
        filters,
        kernel_size,
        stride=1,
        dilation=1,
        padding="causal",
        use_bias=True,
        *,
        params=None,
        rng=None,
        name=None,
    ):
        super().__init__(kernel_size, stride, dilation, padding, name)
        self.in_channels = int(in_channels)
        self.filters = int(filters)
        self.use_bias = bool(use_bias)
        spec = {"weight": (self.kernel_size, self.in_channels, self.filters)}
        if self.use_bias:
            spec["bias"] = (self.filters,)
        self._params = params_lib.materialize(spec, params, rng, self.name)

    @property
    def parameters(self):
        return dict(self._params)

    def get_output_spec(self, input_spec, constants=None):
        if input_spec.shape != (self.in_channels,):
            raise SpecMismatchError(
                f"{self.name}: expected channel shape ({self.in_channels},), got {input_spec.shape}"
            )
        return ChannelSpec((self.filters,), np.float32)

    def _reduce_windows(self, wv, wm):
        y = np.einsum("btkc,kcf->btf", wv, self._params["weight"], optimize=False)
        if self.use_bias:
            y = y + self._params["bias"]
        return y.astype(np.float32)

    def layer(self, x, *, training, constants=None):
        self._check_channel_rank(x, 1)
        if x.channel_shape[0] != self.in_channels:
            raise SpecMismatchError(
                f"{self.name}: expected {self.in_channels} input channels, got {x.channel_shape[0]}"
            )
        return super().layer(x, training=training, constants=constants)


class _Pooling1D(_WindowedLayer):
    """Windowed reduction over valid timesteps only."""

    kind = ""

    def __init__(self, window, stride=1, padding="causal", *, name=None):
        super().__init__(window, stride, 1, padding, name)
        self.window = int(window)


class MaxPooling1D(_Pooling1D):
    kind = "max"

    def _reduce_windows(self, wv, wm):
        wm = wm.reshape(wm.shape + (1,) * (wv.ndim - 3))
        lowest = (
            np.finfo(wv.dtype).min if wv.dtype.kind == "f" else np.iinfo(wv.dtype).min
        )
        masked = np.where(wm, wv, lowest)
        out = masked.max(axis=2)
        any_valid = wm.any(axis=2)
        return np.where(any_valid, out, np.zeros((), dtype=wv.dtype))


class MinPooling1D(_Pooling1D):
    kind = "min"

    def _reduce_windows(self, wv, wm):
        wm = wm.reshape(wm.shape + (1,) * (wv.ndim - 3))
        highest = (
            np.finfo(wv.dtype).max if wv.dtype.kind == "f" else np.iinfo(wv.dtype).max
        )
        masked = np.where(wm, wv, highest)
        out = masked.min(axis=2)
        any_valid = wm.any(axis=2)
        return np.where(any_valid, out, np.zeros((), dtype=wv.dtype))


class AveragePooling1D(_Pooling1D):
    kind = "avg"

    def _reduce_windows(self, wv, wm):
        # window values arrive pre-masked (zeros at invalid), so a plain sum
        # divided by the valid count is the mean over valid members
        wm = wm.reshape(wm.shape + (1,) * (wv.ndim - 3))
        total = wv.sum(axis=2, dtype=np.float32)
        count = wm.sum(axis=2, dtype=np.float32)
        return (total / np.maximum(count, 1.0)).astype(np.float32)


class Conv1DTranspose(SequenceLayer):
    """Stride-factor upsampling via transposed convolution.

    Each input step scatters kernel_size contributions onto the upsampled
    grid; ``same`` trimming removes max(kernel-stride, 0) // 2 leading
    positions, ``causal`` removes none (so no output precedes its anchor).
    """

    def __init__(
        self,
        in_channels,
        filters,
        kernel_size,
        stride=1,
        padding="causal",
        use_bias=True,
        *,
        params=None,
        rng=None,
        name=None,
    ):
        super().__init__(name)
        if kernel_size < 1 or stride < 1:
            raise ValueError(f"kernel_size/stride must be >= 1, got {(kernel_size, stride)}")
        if padding not in ("causal", "same"):
            raise ValueError(f"transpose padding must be 'causal' or 'same', got {padding!r}")
        self.in_channels = int(in_channels)
        self.filters = int(filters)
        self.kernel_size = int(kernel_size)
        self.stride = int(stride)
        self.padding = str(padding)
        self.use_bias = bool(use_bias)
        self.trim_left = (
            max(self.kernel_size - self.stride, 0) // 2 if padding == "same" else 0
        )
        spec = {"weight": (self.kernel_size, self.in_channels, self.filters)}
        if self.use_bias:
            spec["bias"] = (self.filters,)
        self._params = params_lib.materialize(spec, params, rng, self.name)

    @property
    def parameters(self):
        return dict(self._params)

    @property
    def output_ratio(self):
        return Fraction(self.stride)

    @property
    def output_latency(self):
        return self.trim_left

    @property
    def input_latency(self):
        return -(-self.trim_left // self.stride)

    @property
    def receptive_field_per_step(self):
        out = {}
        for o in range(self.stride):
            lo = math.ceil((o + self.trim_left - self.kernel_size + 1) / self.stride)
            hi = math.floor((o + self.trim_left) / self.stride)
            out[o] = (lo, hi) if lo <= hi else None
        return out

    def get_output_spec(self, input_spec, constants=None):
        if input_spec.shape != (self.in_channels,):
            raise SpecMismatchError(
                f"{self.name}: expected channel shape ({self.in_channels},), got {input_spec.shape}"
            )
        return ChannelSpec((self.filters,), np.float32)

    def _contrib(self, values):
        # [B, T, in] -> per-input scatter contributions [B, T, k, filters]
        return np.einsum("btc,kcf->btkf", values, self._params["weight"], optimize=False)

    def layer(self, x, *, training, constants=None):
        self._check_channel_rank(x, 1)
        xm = x.mask_invalid()
        batch, time = x.mask.shape
        out_len = time * self.stride
        full_len = max(out_len + self.trim_left, (time - 1) * self.stride + self.kernel_size if time else 0)
        full = np.zeros((batch, full_len, self.filters), dtype=np.float32)
        contrib = self._contrib(np.asarray(xm.values, dtype=np.float32))
        # accumulate in input order so layer and step sums associate identically
        for i in range(time):
            start = i * self.stride
            full[:, start : start + self.kernel_size] += contrib[:, i]
        out = full[:, self.trim_left : self.trim_left + out_len]
        if self.use_bias:
            out = out + self._params["bias"]
        out_mask = np.repeat(np.asarray(x.mask), self.stride, axis=1)
        return Sequence(out.astype(np.float32), out_mask)

    def get_initial_state(self, batch_size, input_spec, *, training, constants=None):
        acc_len = max(self.kernel_size, self.stride)
        acc = np.zeros((batch_size, acc_len, self.filters), dtype=np.float32)
        # validity of the last ceil(trim_left/stride) inputs, newest last
        hist = np.zeros((batch_size, self.input_latency), dtype=bool)
        return (acc, hist)

    def step(self, x, state, *, training, constants=None):
        self._check_block(x)
        acc, hist = state
        xm = x.mask_invalid()
        contrib = self._contrib(np.asarray(xm.values, dtype=np.float32))
        chunks = []
        mask_chunks = []
        k, s, tl = self.kernel_size, self.stride, self.trim_left
        for i in range(x.time):
            acc = acc.copy()
            acc[:, :k] += contrib[:, i]
            hist = np.concatenate([hist, np.asarray(x.mask)[:, i : i + 1]], axis=1)
            chunk = acc[:, :s]
            if self.use_bias:
                chunk = chunk + self._params["bias"]
            chunks.append(chunk)
            # emission e (within chunk position r) carries output o = e - tl,
            # anchored at input floor(o / s): delta steps behind the current one
            delta = [-(-(tl - r) // s) for r in range(s)]
            mask_chunks.append(np.stack([hist[:, -1 - d] for d in delta], axis=1))
            acc = np.concatenate(
                [acc[:, s:], np.zeros((acc.shape[0], s, self.filters), np.float32)], axis=1
            )
            hist = hist[:, -max(self.input_latency, 0) :] if self.input_latency else hist[:, :0]
        out = np.concatenate(chunks, axis=1)
        out_mask = np.concatenate(mask_chunks, axis=1)
        return Sequence(out, out_mask), (acc, hist)


class Downsample1D(StatelessLayer):
    """Keeps every rate-th timestep (phase 0)."""

    def __init__(self, rate, name=None):
        super().__init__(name)
        if rate < 1:
            raise ValueError(f"rate must be >= 1, got {rate}")
        self.rate = int(rate)

    @property
    def output_ratio(self):
        return Fraction(1, self.rate)

    @property
    def block_size(self):
        return self.rate

    def layer(self, x, *, training, constants=None):
        return Sequence(
            np.asarray(x.values)[:, :: self.rate],
            np.asarray(x.mask)[:, :: self.rate],
            masked=x.masked,
        )


class Upsample1D(StatelessLayer):
    """Repeats every timestep rate times."""

    def __init__(self, rate, name=None):
        super().__init__(name)
        if rate < 1:
            raise ValueError(f"rate must be >= 1, got {rate}")
        self.rate = int(rate)

    @property
    def output_ratio(self):
        return Fraction(self.rate)

    @property
    def receptive_field_per_step(self):
        return {o: (0, 0) for o in range(self.rate)}

    def layer(self, x, *, training, constants=None):
        return Sequence(
            np.repeat(np.asarray(x.values), self.rate, axis=1),
            np.repeat(np.asarray(x.mask), self.rate, axis=1),
            masked=x.masked,
        )


class Delay(SequenceLayer):
    """Shifts the stream later by ``length`` steps, entering invalid steps.

    The shift happens identically in layer and step mode, so the layer has
    no latency in the protocol sense.
    """

    def __init__(self, length, name=None):
        super().__init__(name)
        if length < 0:
            raise ValueError(f"delay length must be >= 0, got {length}")
        self.length = int(length)

    @property
    def receptive_field_per_step(self):
        return {0: (-self.length, -self.length)}

    def layer(self, x, *, training, constants=None):
        if self.length == 0:
            return x
        return x.mask_invalid().pad_time(self.length, 0, valid=False)[:, : x.time]

    def get_initial_state(self, batch_size, input_spec, *, training, constants=None):
        values = np.zeros((batch_size, self.length) + input_spec.shape, dtype=input_spec.dtype)
        return Sequence(values, np.zeros((batch_size, self.length), bool), masked=True)

    def step(self, x, state: Sequence, *, training, constants=None):
        self._check_block(x)
        if self.length == 0:
            return x, state
        combined = Sequence.concatenate_sequences([state, x.mask_invalid()])
        return combined[:, : x.time], combined[:, x.time :]


class StepDelay(SequenceLayer):
    """Delays the step-wise emission schedule without changing layer().

    layer() is the identity; step() holds ``length`` inputs back, so the
    layer's output latency is ``length``. Inserting one before a
    downsampling layer aligns an odd accumulated stream delay to the
    downsampler's stride without altering what the pipeline computes.
    """

    def __init__(self, length, name=None):
        super().__init__(name)
        if length < 0:
            raise ValueError(f"step delay length must be >= 0, got {length}")
        self.length = int(length)

    @property
    def input_latency(self):
        return self.length

    @property
    def output_latency(self):
        return self.length

    def layer(self, x, *, training, constants=None):
        return x

    def get_initial_state(self, batch_size, input_spec, *, training, constants=None):
        values = np.zeros((batch_size, self.length) + input_spec.shape, dtype=input_spec.dtype)
        return Sequence(values, np.zeros((batch_size, self.length), bool), masked=True)

    def step(self, x, state: Sequence, *, training, constants=None):
        self._check_block(x)
        if self.length == 0:
            return x, state
        combined = Sequence.concatenate_sequences([state, x.mask_invalid()])
        return combined[:, : x.time], combined[:, x.time :]


class Lookahead(SequenceLayer):
    """Drops the first ``length`` steps, shifting the stream earlier.

    Streaming cannot drop what has not arrived, so the step path emits
    ``length`` invalid placeholder steps and the flush protocol recovers the
    tail: input and output latency both equal ``length``.
    """

    def __init__(self, length, name=None):
        super().__init__(name)
        if length < 0:
            raise ValueError(f"lookahead length must be >= 0, got {length}")
        self.length = int(length)

    @property
    def input_latency(self):
        return self.length

    @property
    def output_latency(self):
        return self.length

    @property
    def receptive_field_per_step(self):
        return {0: (self.length, self.length)}

    def layer(self, x, *, training, constants=None):
        if self.length == 0:
            return x
        shifted = x.mask_invalid()[:, min(self.length, x.time) :]
        return shifted.pad_time(0, x.time - shifted.time, valid=False)

    def get_initial_state(self, batch_size, input_spec, *, training, constants=None):
        return 0

    def step(self, x, state: int, *, training, constants=None):
        self._check_block(x)
        xm = x.mask_invalid()
        position = state + np.arange(x.time)
        mask = np.logical_and(np.asarray(x.mask), (position >= self.length)[None, :])
        values = np.where(
            mask.reshape(mask.shape + (1,) * (x.ndim - 2)), np.asarray(xm.values), 0
        )
        return Sequence(values, mask, masked=True), state + x.time


class Frame(SequenceLayer):
    """Stacks sliding windows of the input as a new leading channel axis.

    Output step f holds inputs [f*hop, f*hop + frame_length); channel shape
    becomes (frame_length, *input_channels).
    """

    def __init__(self, frame_length, hop, name=None):
        super().__init__(name)
        if not 1 <= hop <= frame_length:
            raise ValueError(
                f"require frame_length >= hop >= 1, got {(frame_length, hop)}"
            )
        self.frame_length = int(frame_length)
        self.hop = int(hop)

    @property
    def output_ratio(self):
        return Fraction(1, self.hop)

    @property
    def block_size(self):
        return self.hop

    @property
    def input_latency(self):
        return self.frame_length - 1

    @property
    def output_latency(self):
        return -(-(self.frame_length - self.hop) // self.hop)

    @property
    def receptive_field_per_step(self):
        return {0: (0, self.frame_length - 1)}

    def get_output_spec(self, input_spec, constants=None):
        return ChannelSpec((self.frame_length,) + input_spec.shape, input_spec.dtype)

    def layer(self, x, *, training, constants=None):
        xm = x.mask_invalid()
        time = x.time
        out_len = self.output_time(time)
        needed = max(0, (out_len - 1) * self.hop + self.frame_length - time)
        ch_pads = [(0, 0)] * (x.ndim - 2)
        values = np.pad(np.asarray(xm.values), [(0, 0), (0, needed)] + ch_pads)
        idx = np.arange(out_len)[:, None] * self.hop + np.arange(self.frame_length)[None, :]
        frames = values[:, idx]
        out_mask = np.asarray(x.mask)[:, :: self.hop][:, :out_len]
        return Sequence(frames, out_mask, masked=False)

    def get_initial_state(self, batch_size, input_spec, *, training, constants=None):
        ctx = self.output_latency * self.hop
        values = np.zeros((batch_size, ctx) + input_spec.shape, dtype=input_spec.dtype)
        return Sequence(values, np.zeros((batch_size, ctx), bool), masked=True)

    def step(self, x, state: Sequence, *, training, constants=None):
        self._check_block(x)
        xm = x.mask_invalid()
        values = np.concatenate([np.asarray(state.values), np.asarray(xm.values)], axis=1)
        mask = np.concatenate([np.asarray(state.mask), np.asarray(x.mask)], axis=1)
        out_len = x.time // self.hop
        # each emitted frame starts at a hop boundary; frames that would
        # extend past the data seen so far are completed on later steps
        idx = np.arange(out_len)[:, None] * self.hop + np.arange(self.frame_length)[None, :]
        pad = max(0, (out_len - 1) * self.hop + self.frame_length - values.shape[1])
        ch_pads = [(0, 0)] * (values.ndim - 2)
        frames = np.pad(values, [(0, 0), (0, pad)] + ch_pads)[:, idx]
        out_mask = mask[:, :: self.hop][:, :out_len]
        ctx = self.output_latency * self.hop
        new_state = Sequence(
            values[:, values.shape[1] - ctx :], mask[:, mask.shape[1] - ctx :], masked=True
        )
        return Sequence(frames, out_mask, masked=False), new_state


_WINDOW_KINDS = ("hann", "hamming", "rectangular")


def window_curve(kind: str, length: int) -> np.ndarray:
    """Window samples, symmetric convention (endpoints of a Hann are zero)."""
    if kind == "rectangular":
        return np.ones(length, dtype=np.float32)
    n = np.arange(length, dtype=np.float64)
    if length == 1:
        return np.ones(1, dtype=np.float32)
    if kind == "hann":
        return (0.5 - 0.5 * np.cos(2 * np.pi * n / (length - 1))).astype(np.float32)
    if kind == "hamming":
        return (0.54 - 0.46 * np.cos(2 * np.pi * n / (length - 1))).astype(np.float32)
    raise ValueError(f"unknown window kind {kind!r}; expected one of {_WINDOW_KINDS}")


class Window(StatelessLayer):
    """Multiplies one channel axis by a window curve."""

    def __init__(self, kind="hann", axis=0, name=None):
        super().__init__(name)
        if kind not in _WINDOW_KINDS:
            raise ValueError(f"unknown window kind {kind!r}; expected one of {_WINDOW_KINDS}")
        self.kind = kind
        self.axis = int(axis)

    def layer(self, x, *, training, constants=None):
        if not x.channel_shape:
            raise SpecMismatchError(f"{self.name}: input must have channel dimensions")
        axis = self.axis % len(x.channel_shape)
        curve = window_curve(self.kind, x.channel_shape[axis])
        shape = [1] * x.ndim
        shape[2 + axis] = x.channel_shape[axis]
        curve = curve.reshape(shape)
        return x.apply_values(lambda v: (v * curve).astype(v.dtype), zero_preserving=True)


class OverlapAdd(SequenceLayer):
    """Reconstructs a signal from overlapping frames by summation.

    The inverse of :class:`Frame` for non-overlapping (rectangular) configs.
    Input channel shape (frame_length, ...); output drops the frame axis.
    A position is final only once every overlapping frame has arrived, so
    emission runs frame_length - hop output steps behind the input.
    """

    def __init__(self, frame_length, hop, name=None):
        super().__init__(name)
        if not 1 <= hop <= frame_length:
            raise ValueError(
                f"require frame_length >= hop >= 1, got {(frame_length, hop)}"
            )
        self.frame_length = int(frame_length)
        self.hop = int(hop)

    @property
    def output_ratio(self):
        return Fraction(self.hop)

    @property
    def output_latency(self):
        return self.frame_length - self.hop

    @property
    def input_latency(self):
        return -(-(self.frame_length - self.hop) // self.hop)

    @property
    def receptive_field_per_step(self):
        out = {}
        for o in range(self.hop):
            lo = math.ceil((o - self.frame_length + 1) / self.hop)
            out[o] = (lo, 0)
        return out

    def _check(self, x):
        if not x.channel_shape or x.channel_shape[0] != self.frame_length:
            raise SpecMismatchError(
                f"{self.name}: expected leading channel extent {self.frame_length}, "
                f"got {x.channel_shape}"
            )

    def get_output_spec(self, input_spec, constants=None):
        if not input_spec.shape or input_spec.shape[0] != self.frame_length:
            raise SpecMismatchError(
                f"{self.name}: expected leading channel extent {self.frame_length}, "
                f"got {input_spec.shape}"
            )
        return ChannelSpec(input_spec.shape[1:], input_spec.dtype)

    def layer(self, x, *, training, constants=None):
        self._check(x)
        xm = x.mask_invalid()
        batch, time = x.mask.shape
        rest = x.channel_shape[1:]
        out_len = time * self.hop
        full_len = max(out_len, (time - 1) * self.hop + self.frame_length if time else 0)
        full = np.zeros((batch, full_len) + rest, dtype=x.dtype)
        values = np.asarray(xm.values)
        for f in range(time):
            start = f * self.hop
            full[:, start : start + self.frame_length] += values[:, f]
        out_mask = np.repeat(np.asarray(x.mask), self.hop, axis=1)
        return Sequence(full[:, :out_len], out_mask, masked=True)

    def get_initial_state(self, batch_size, input_spec, *, training, constants=None):
        rest = input_spec.shape[1:]
        carry = np.zeros(
            (batch_size, self.frame_length - self.hop) + rest, dtype=input_spec.dtype
        )
        fifo_len = self.frame_length - self.hop
        fifo = Sequence(
            np.zeros((batch_size, fifo_len) + rest, dtype=input_spec.dtype),
            np.zeros((batch_size, fifo_len), bool),
            masked=True,
        )
        return (carry, fifo)

    def step(self, x, state, *, training, constants=None):
        self._check(x)
        self._check_block(x)
        carry, fifo = state
        xm = x.mask_invalid()
        values = np.asarray(xm.values)
        rest = x.channel_shape[1:]
        batch = x.batch_size
        chunks = []
        h, L = self.hop, self.frame_length
        for f in range(x.time):
            full = values[:, f].copy()
            full[:, : L - h] += carry
            finalized = Sequence(
                full[:, :h],
                np.repeat(np.asarray(x.mask)[:, f : f + 1], h, axis=1),
                masked=True,
            )
            carry = full[:, h:]
            combined = Sequence.concatenate_sequences([fifo, finalized])
            chunks.append(combined[:, :h])
            fifo = combined[:, h:]
        out = Sequence.concatenate_sequences(chunks) if chunks else x[:, 0:0]
        return out, (carry, fifo)
