"""The masked sequence data model.

A :class:`Sequence` pairs ``values`` of shape ``[batch, time, ...channel]``
with a boolean ``mask`` of shape ``[batch, time]`` marking valid timesteps.
The trailing ``...channel`` dimensions are the sequence's channel shape.

A sequence is *masked* when every invalid position holds exactly zero; this
is tracked by the ``masked`` flag (the analogue of a marker subclass) and
established by :meth:`Sequence.mask_invalid`. Operations document whether
they preserve the flag.

Validity is expected to be contiguous from t=0 per batch row (end-padding
convention). ``from_lengths`` enforces this by construction; arbitrary masks
are accepted elsewhere, but the library's guarantees only cover end padding.

Serialization uses the ``SLS1`` container: magic ``b"SLS1"`` followed by the
values tensor and the mask tensor, each in SLT1 format.
"""

from __future__ import annotations

import dataclasses
from typing import BinaryIO, Callable, Iterable

import numpy as np

from . import tensor
from .errors import ShapeMismatchError, SpecMismatchError

_MAGIC = b"SLS1"


@dataclasses.dataclass(frozen=True)
class ChannelSpec:
    """Shape and dtype of the per-timestep channel block (excludes batch/time)."""

    shape: tuple[int, ...]
    dtype: np.dtype = tensor.FLOAT32

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(d) for d in self.shape))
        object.__setattr__(self, "dtype", tensor.canonical_dtype(self.dtype))

    def __str__(self) -> str:
        names = {tensor.FLOAT32: "f32", tensor.INT32: "i32", tensor.BOOL: "bool"}
        return f"{names[self.dtype]}[{','.join(str(d) for d in self.shape)}]"


@dataclasses.dataclass(frozen=True)
class Sequence:
    """Batched values plus a per-timestep validity mask."""

    values: np.ndarray
    mask: np.ndarray
    masked: bool = False

    def __post_init__(self):
        values = tensor.tensor(self.values)
        mask = tensor.tensor(self.mask)
        if values.ndim < 2:
            raise ShapeMismatchError(
                f"sequence values must have rank >= 2 ([batch, time, ...]), got {values.shape}"
            )
        if mask.dtype != tensor.BOOL:
            raise TypeError(f"mask must be bool, got {mask.dtype}")
        if mask.shape != values.shape[:2]:
            raise ShapeMismatchError(
                f"mask shape {mask.shape} does not match values batch/time {values.shape[:2]}"
            )
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    # -- construction helpers --

    @staticmethod
    def from_values(values) -> "Sequence":
        """Wraps fully-valid values; the result is masked by construction."""
        values = tensor.tensor(values)
        if values.ndim < 2:
            raise ShapeMismatchError(f"rank >= 2 required, got shape {values.shape}")
        mask = tensor.ones(values.shape[:2], tensor.BOOL)
        return Sequence(values, mask, masked=True)

    @staticmethod
    def from_lengths(values, lengths) -> "Sequence":
        """Builds a sequence whose row b is valid for the first lengths[b] steps."""
        values = tensor.tensor(values)
        if values.ndim < 2:
            raise ShapeMismatchError(f"rank >= 2 required, got shape {values.shape}")
        lengths = np.asarray(lengths, dtype=np.int64)
        batch, time = values.shape[:2]
        if lengths.shape != (batch,):
            raise ShapeMismatchError(f"lengths shape {lengths.shape} != ({batch},)")
        if np.any(lengths < 0) or np.any(lengths > time):
            raise ValueError(f"lengths {lengths.tolist()} out of range [0, {time}]")
        mask = np.arange(time)[None, :] < lengths[:, None]
        return Sequence(values, tensor.tensor(mask, tensor.BOOL))

    # -- basic properties --

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def dtype(self) -> np.dtype:
        return self.values.dtype

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def batch_size(self) -> int:
        return self.values.shape[0]

    @property
    def time(self) -> int:
        return self.values.shape[1]

    @property
    def channel_shape(self) -> tuple[int, ...]:
        return self.values.shape[2:]

    @property
    def channel_spec(self) -> ChannelSpec:
        return ChannelSpec(self.channel_shape, self.dtype)

    def lengths(self) -> np.ndarray:
        """Count of valid timesteps per row (int32)."""
        return tensor.tensor(self.mask.sum(axis=1), tensor.INT32)

    # -- masking --

    def expanded_mask(self) -> np.ndarray:
        """Mask broadcast to the full values shape."""
        return self.mask.reshape(self.mask.shape + (1,) * (self.ndim - 2))

    def mask_invalid(self) -> "Sequence":
        """Zeroes values at invalid positions. No-op when already masked."""
        if self.masked:
            return self
        zero = np.zeros((), dtype=self.dtype)
        values = np.where(self.expanded_mask(), self.values, zero)
        return Sequence(values, self.mask, masked=True)

    def apply_values(self, fn: Callable[[np.ndarray], np.ndarray], zero_preserving: bool = False) -> "Sequence":
        """Applies fn to the values.

        The masked flag survives only when the caller declares fn
        zero-preserving (f(0) == 0); the function is never inspected.
        """
        values = np.asarray(fn(self.values))
        if values.shape[:2] != self.values.shape[:2]:
            raise ShapeMismatchError(
                f"apply_values must preserve batch/time, got {values.shape[:2]} "
                f"from {self.values.shape[:2]}"
            )
        return Sequence(values, self.mask, masked=self.masked and zero_preserving)

    # -- time manipulation --

    def pad_time(self, front: int, back: int, valid: bool) -> "Sequence":
        if front < 0 or back < 0:
            raise ValueError(f"pad counts must be >= 0, got {(front, back)}")
        if front == 0 and back == 0:
            return self
        pads = [(0, 0), (front, back)] + [(0, 0)] * (self.ndim - 2)
        values = tensor.pad(self.values, pads, fill=np.zeros((), dtype=self.dtype))
        mask = tensor.pad(self.mask, [(0, 0), (front, back)], fill=bool(valid))
        return Sequence(values, mask, masked=self.masked and not valid)

    def slice_time(self, start: int, stop: int) -> "Sequence":
        time = self.time
        start = max(0, start + time if start < 0 else start)
        stop = min(time, stop + time if stop < 0 else stop)
        stop = max(stop, start)
        values = tensor.slice_axis(self.values, 1, start, stop)
        mask = tensor.slice_axis(self.mask, 1, start, stop)
        return Sequence(values, mask, masked=self.masked)

    def __getitem__(self, key) -> "Sequence":
        """Supports the usual [batch, time] slicing shorthands, e.g. s[:, a:b]."""
        if not isinstance(key, tuple) or len(key) != 2:
            raise TypeError("sequence slicing takes a (batch, time) index pair")
        bkey, tkey = key
        if not isinstance(tkey, slice) or tkey.step not in (None, 1):
            raise TypeError("time index must be a unit-stride slice")
        start, stop, _ = tkey.indices(self.time)
        out = self.slice_time(start, stop)
        if isinstance(bkey, slice):
            if bkey == slice(None):
                return out
            values = out.values[bkey]
            mask = out.mask[bkey]
        else:
            idx = np.asarray(bkey)
            values = out.values[idx]
            mask = out.mask[idx]
        return Sequence(values, mask, masked=out.masked)

    def take_batch(self, indices) -> "Sequence":
        idx = np.asarray(indices)
        return Sequence(self.values[idx], self.mask[idx], masked=self.masked)

    @staticmethod
    def concatenate_sequences(seqs: Iterable["Sequence"]) -> "Sequence":
        """Concatenates along time. Batch and channel specs must agree."""
        seqs = list(seqs)
        if not seqs:
            raise ValueError("cannot concatenate zero sequences")
        first = seqs[0]
        for s in seqs[1:]:
            if s.batch_size != first.batch_size or s.channel_spec != first.channel_spec:
                raise SpecMismatchError(
                    f"cannot concatenate {s.batch_size}x{s.channel_spec} "
                    f"with {first.batch_size}x{first.channel_spec}"
                )
        values = tensor.concat([s.values for s in seqs], axis=1)
        mask = tensor.concat([s.mask for s in seqs], axis=1)
        return Sequence(values, mask, masked=all(s.masked for s in seqs))

    def reverse_time_valid(self) -> "Sequence":
        """Reverses each row's valid region in place; end padding stays at the end.

        Rows must be valid-contiguous from t=0 for this to be meaningful.
        """
        lengths = np.asarray(self.mask.sum(axis=1))
        t = np.arange(self.time)[None, :]
        src = np.where(t < lengths[:, None], lengths[:, None] - 1 - t, t)
        values = np.take_along_axis(
            np.asarray(self.values), src.reshape(src.shape + (1,) * (self.ndim - 2)), axis=1
        )
        mask = np.take_along_axis(np.asarray(self.mask), src, axis=1)
        return Sequence(values, mask, masked=self.masked)


def write_sequence(fp: BinaryIO, s: Sequence) -> None:
    fp.write(_MAGIC)
    tensor.write_tensor(fp, s.values)
    tensor.write_tensor(fp, s.mask)


def read_sequence(fp: BinaryIO) -> Sequence:
    magic = fp.read(4)
    if magic != _MAGIC:
        raise ValueError(f"bad SLS1 magic {magic!r}")
    values = tensor.read_tensor(fp)
    mask = tensor.read_tensor(fp)
    return Sequence(values, mask)


def save_sequence(path, s: Sequence) -> None:
    with open(path, "wb") as fp:
        write_sequence(fp, s)


def load_sequence(path) -> Sequence:
    with open(path, "rb") as fp:
        return read_sequence(fp)
