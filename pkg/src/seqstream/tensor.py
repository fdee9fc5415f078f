"""Dense n-dimensional arrays with the numeric behaviors the library relies on.

Tensors are plain numpy arrays restricted to three dtypes (float32, int32,
bool), made read-only at creation so they behave as immutable values. Shape
arithmetic lives in pure shape functions that are usable (and testable)
without any data. Arithmetic delegates to numpy; summations use numpy's
deterministic per-element accumulation order, which keeps layer-wise and
step-wise results of downstream code comparable at tight tolerances.

Binary serialization uses the ``SLT1`` format: magic ``b"SLT1"``, a dtype
code byte (0=float32, 1=int32, 2=bool), a rank byte, little-endian u64
extents, then the raw row-major payload (bool stored as u8 0/1).
"""

from __future__ import annotations

import struct
from typing import BinaryIO, Iterable, Sequence as Tup

import numpy as np

from .errors import ShapeMismatchError

FLOAT32 = np.dtype(np.float32)
INT32 = np.dtype(np.int32)
BOOL = np.dtype(np.bool_)

#: Supported dtypes in promotion order (bool < int32 < float32).
DTYPES = (BOOL, INT32, FLOAT32)

_DTYPE_CODES = {FLOAT32: 0, INT32: 1, BOOL: 2}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}

_MAGIC = b"SLT1"


def canonical_dtype(dtype) -> np.dtype:
    """Maps a dtype-like onto one of the three supported dtypes."""
    dt = np.dtype(dtype)
    if dt in DTYPES:
        return dt
    if dt.kind == "f":
        return FLOAT32
    if dt.kind in ("i", "u"):
        return INT32
    if dt.kind == "b":
        return BOOL
    raise TypeError(f"unsupported dtype {dt}; expected one of {[str(d) for d in DTYPES]}")


def promote(a, b) -> np.dtype:
    """Promoted dtype of two supported dtypes: bool < int32 < float32."""
    da, db = canonical_dtype(a), canonical_dtype(b)
    return max(da, db, key=DTYPES.index)


def freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def tensor(data, dtype=None) -> np.ndarray:
    """Creates an immutable tensor from array-like data.

    Copies unless ``data`` is already an immutable array of the target dtype.
    """
    if dtype is not None:
        dtype = canonical_dtype(dtype)
    if isinstance(data, np.ndarray) and not data.flags.writeable:
        if dtype is None and data.dtype in DTYPES:
            return data
        if data.dtype == dtype:
            return data
    arr = np.array(data, dtype=dtype)
    if arr.dtype not in DTYPES:
        arr = arr.astype(canonical_dtype(arr.dtype))
    return freeze(arr)


def zeros(shape, dtype=FLOAT32) -> np.ndarray:
    return freeze(np.zeros(shape, dtype=canonical_dtype(dtype)))


def ones(shape, dtype=FLOAT32) -> np.ndarray:
    return freeze(np.ones(shape, dtype=canonical_dtype(dtype)))


def full(shape, value, dtype=FLOAT32) -> np.ndarray:
    return freeze(np.full(shape, value, dtype=canonical_dtype(dtype)))


# --- pure shape functions -------------------------------------------------


def broadcast_shapes(a: Tup[int], b: Tup[int]) -> tuple[int, ...]:
    """Broadcast shape under trailing-dimension alignment.

    Shorter ranks are extended with 1s on the left; a dimension pair is
    compatible when equal or when either side is 1.
    """
    a, b = tuple(a), tuple(b)
    rank = max(len(a), len(b))
    ax = (1,) * (rank - len(a)) + a
    bx = (1,) * (rank - len(b)) + b
    out = []
    for da, db in zip(ax, bx):
        if da == db or db == 1:
            out.append(da)
        elif da == 1:
            out.append(db)
        else:
            raise ShapeMismatchError(f"shapes {a} and {b} are not broadcastable")
    return tuple(out)


def matmul_shape(a: Tup[int], b: Tup[int]) -> tuple[int, ...]:
    a, b = tuple(a), tuple(b)
    if len(a) < 2 or len(b) < 2:
        raise ShapeMismatchError(f"matmul requires rank >= 2 operands, got {a} and {b}")
    if a[-1] != b[-2]:
        raise ShapeMismatchError(
            f"matmul inner dimensions differ: {a} (k={a[-1]}) vs {b} (k={b[-2]})"
        )
    batch = broadcast_shapes(a[:-2], b[:-2])
    return batch + (a[-2], b[-1])


def reduce_shape(shape: Tup[int], axes: Iterable[int], keepdims: bool = False) -> tuple[int, ...]:
    shape = tuple(shape)
    rank = len(shape)
    norm = []
    for ax in axes:
        if not -rank <= ax < rank:
            raise ShapeMismatchError(f"axis {ax} out of range for shape {shape}")
        norm.append(ax % rank)
    if len(set(norm)) != len(norm):
        raise ShapeMismatchError(f"duplicate reduction axes {tuple(axes)} for shape {shape}")
    if keepdims:
        return tuple(1 if i in norm else d for i, d in enumerate(shape))
    return tuple(d for i, d in enumerate(shape) if i not in norm)


def concat_shape(shapes: Tup[Tup[int]], axis: int) -> tuple[int, ...]:
    if not shapes:
        raise ShapeMismatchError("concat of zero tensors")
    first = tuple(shapes[0])
    rank = len(first)
    if not -rank <= axis < rank:
        raise ShapeMismatchError(f"axis {axis} out of range for shape {first}")
    axis %= rank
    total = 0
    for s in shapes:
        s = tuple(s)
        if len(s) != rank or any(s[i] != first[i] for i in range(rank) if i != axis):
            raise ShapeMismatchError(
                f"concat extents incompatible along axis {axis}: {first} vs {s}"
            )
        total += s[axis]
    return first[:axis] + (total,) + first[axis + 1 :]


def pad_shape(shape: Tup[int], pads: Tup[tuple[int, int]]) -> tuple[int, ...]:
    shape = tuple(shape)
    if len(pads) != len(shape):
        raise ShapeMismatchError(f"pad spec {pads} does not match rank of {shape}")
    out = []
    for d, (lo, hi) in zip(shape, pads):
        if lo < 0 or hi < 0:
            raise ShapeMismatchError(f"negative padding {(lo, hi)}")
        out.append(d + lo + hi)
    return tuple(out)


def reshape_shape(shape: Tup[int], new_shape: Tup[int]) -> tuple[int, ...]:
    old_n = int(np.prod(shape, dtype=np.int64)) if shape else 1
    new_n = int(np.prod(new_shape, dtype=np.int64)) if new_shape else 1
    if old_n != new_n:
        raise ShapeMismatchError(f"cannot reshape {tuple(shape)} to {tuple(new_shape)}")
    return tuple(new_shape)


# --- operations -----------------------------------------------------------

_BINARY = {
    "add": np.add,
    "subtract": np.subtract,
    "multiply": np.multiply,
    "divide": np.true_divide,
    "maximum": np.maximum,
    "minimum": np.minimum,
}

_UNARY = {
    "negative": np.negative,
    "abs": np.abs,
    "exp": np.exp,
    "log": np.log,
}


def elementwise(kind: str, a: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Broadcasting elementwise op with dtype promotion."""
    if b is None:
        if kind not in _UNARY:
            raise ValueError(f"unknown unary op {kind!r}")
        return freeze(_UNARY[kind](a))
    if kind not in _BINARY:
        raise ValueError(f"unknown binary op {kind!r}")
    broadcast_shapes(np.shape(a), np.shape(b))
    dt = promote(np.asarray(a).dtype, np.asarray(b).dtype)
    if kind == "divide":
        dt = FLOAT32
    out = _BINARY[kind](np.asarray(a).astype(dt), np.asarray(b).astype(dt))
    return freeze(np.asarray(out, dtype=dt))


def add(a, b):
    return elementwise("add", a, b)


def subtract(a, b):
    return elementwise("subtract", a, b)


def multiply(a, b):
    return elementwise("multiply", a, b)


def divide(a, b):
    return elementwise("divide", a, b)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched matrix product, float32 only.

    Uses einsum so every output element is accumulated in the same order
    regardless of the batch extents.
    """
    a, b = np.asarray(a), np.asarray(b)
    if a.dtype != FLOAT32 or b.dtype != FLOAT32:
        raise TypeError(f"matmul is float32 only, got {a.dtype} and {b.dtype}")
    out_shape = matmul_shape(a.shape, b.shape)
    ax = np.broadcast_to(a, out_shape[:-2] + a.shape[-2:])
    bx = np.broadcast_to(b, out_shape[:-2] + b.shape[-2:])
    out = np.einsum("...mk,...kn->...mn", ax, bx, optimize=False)
    return freeze(np.asarray(out, dtype=FLOAT32))


_REDUCERS = {"sum": np.sum, "max": np.max, "min": np.min, "mean": np.mean}


def reduce(kind: str, x: np.ndarray, axes, keepdims: bool = False) -> np.ndarray:
    if kind not in _REDUCERS:
        raise ValueError(f"unknown reduction {kind!r}")
    x = np.asarray(x)
    if isinstance(axes, int):
        axes = (axes,)
    axes = tuple(axes)
    reduce_shape(x.shape, axes, keepdims)  # validates axes
    for ax in axes:
        if x.shape[ax % x.ndim] == 0 and kind in ("max", "min"):
            raise ValueError(f"{kind} over empty axis {ax} of shape {x.shape}")
    out = _REDUCERS[kind](x, axis=axes, keepdims=keepdims)
    dt = x.dtype if kind != "mean" else FLOAT32
    if kind in ("sum",) and x.dtype == BOOL:
        dt = INT32
    return freeze(np.asarray(out, dtype=dt))


def concat(tensors: Tup[np.ndarray], axis: int) -> np.ndarray:
    concat_shape([np.shape(t) for t in tensors], axis)
    return freeze(np.concatenate([np.asarray(t) for t in tensors], axis=axis))


def slice_axis(x: np.ndarray, axis: int, start: int, stop: int) -> np.ndarray:
    x = np.asarray(x)
    extent = x.shape[axis]
    if not (0 <= start <= stop <= extent):
        raise ShapeMismatchError(
            f"slice [{start}:{stop}] out of range for extent {extent} on axis {axis}"
        )
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    return freeze(np.ascontiguousarray(x[tuple(idx)]))


def pad(x: np.ndarray, pads: Tup[tuple[int, int]], fill=0) -> np.ndarray:
    x = np.asarray(x)
    pad_shape(x.shape, pads)
    out = np.pad(x, pads, mode="constant", constant_values=fill)
    return freeze(np.asarray(out, dtype=x.dtype))


def transpose(x: np.ndarray, perm: Tup[int]) -> np.ndarray:
    x = np.asarray(x)
    if sorted(perm) != list(range(x.ndim)):
        raise ShapeMismatchError(f"perm {tuple(perm)} is not a permutation of rank {x.ndim}")
    return freeze(np.ascontiguousarray(np.transpose(x, perm)))


def reshape(x: np.ndarray, new_shape: Tup[int]) -> np.ndarray:
    x = np.asarray(x)
    reshape_shape(x.shape, new_shape)
    return freeze(np.ascontiguousarray(x).reshape(tuple(new_shape)))


# --- SLT1 serialization ---------------------------------------------------


def write_tensor(fp: BinaryIO, x: np.ndarray) -> None:
    x = np.asarray(x)
    if x.dtype not in _DTYPE_CODES:
        raise TypeError(f"cannot serialize dtype {x.dtype}")
    if x.ndim > 255:
        raise ValueError("rank too large for SLT1")
    fp.write(_MAGIC)
    fp.write(struct.pack("<BB", _DTYPE_CODES[x.dtype], x.ndim))
    for extent in x.shape:
        fp.write(struct.pack("<Q", extent))
    payload = np.ascontiguousarray(x)
    if x.dtype == BOOL:
        payload = payload.astype(np.uint8)
    fp.write(payload.tobytes())


def read_tensor(fp: BinaryIO) -> np.ndarray:
    magic = fp.read(4)
    if magic != _MAGIC:
        raise ValueError(f"bad SLT1 magic {magic!r}")
    code, rank = struct.unpack("<BB", fp.read(2))
    if code not in _CODE_DTYPES:
        raise ValueError(f"bad SLT1 dtype code {code}")
    dtype = _CODE_DTYPES[code]
    shape = tuple(struct.unpack("<Q", fp.read(8))[0] for _ in range(rank))
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    raw_dtype = np.uint8 if dtype == BOOL else dtype
    nbytes = count * np.dtype(raw_dtype).itemsize
    buf = fp.read(nbytes)
    if len(buf) != nbytes:
        raise ValueError("truncated SLT1 payload")
    arr = np.frombuffer(buf, dtype=raw_dtype).reshape(shape)
    if dtype == BOOL:
        arr = arr.astype(np.bool_)
    return freeze(np.array(arr))
