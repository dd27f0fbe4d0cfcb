"""Dense 3rd-order tensor storage, mode slicing, block distribution and the MSC3 file format."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

MAGIC = b"MSC3"
_HEADER = struct.Struct("<4s3Q")
MODES = (1, 2, 3)


class FormatError(ValueError):
    """Raised when an MSC3 file is malformed."""


@dataclass(frozen=True)
class Tensor3:
    """Immutable dense real tensor of shape ``(m1, m2, m3)``.

    Entry ``(i, j, k)`` lives at linear offset ``(i*m2 + j)*m3 + k``, which is
    exactly C order, so mode-1 slices are contiguous.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, order="C", copy=True)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValueError(f"expected a non-empty 3-d array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor entries must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_flat(cls, dims, values) -> "Tensor3":
        dims = tuple(int(m) for m in dims)
        values = np.asarray(values, dtype=np.float64)
        if values.size != dims[0] * dims[1] * dims[2]:
            raise ValueError(f"{values.size} values do not fill dims {dims}")
        return cls(values.reshape(dims))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    def mode_size(self, mode: int) -> int:
        _check_mode(mode)
        return self.dims[mode - 1]

    def slice(self, mode: int, index: int) -> np.ndarray:
        return mode_slice(self.data, mode, index)


def _check_mode(mode: int) -> None:
    if mode not in MODES:
        raise ValueError(f"mode must be 1, 2 or 3, got {mode!r}")


def slice_shape(dims, mode: int) -> tuple[int, int]:
    """Shape of a slice of ``mode``; rows follow the first remaining mode."""
    _check_mode(mode)
    rest = [m for n, m in enumerate(dims, start=1) if n != mode]
    return rest[0], rest[1]


def mode_slice(t, mode: int, index: int) -> np.ndarray:
    """Return an owned, contiguous copy of slice ``index`` of ``mode``.

    ``t`` may be a :class:`Tensor3` or any 3-d array (including a memmap).
    """
    data = t.data if isinstance(t, Tensor3) else t
    _check_mode(mode)
    m = data.shape[mode - 1]
    if not 0 <= index < m:
        raise IndexError(f"slice index {index} out of range for mode {mode} of size {m}")
    if mode == 1:
        view = data[index, :, :]
    elif mode == 2:
        view = data[:, index, :]
    else:
        view = data[:, :, index]
    return np.array(view, dtype=np.float64, order="C", copy=True)


class BlockRange(NamedTuple):
    start: int
    count: int

    @property
    def stop(self) -> int:
        return self.start + self.count

    def indices(self) -> range:
        return range(self.start, self.stop)


def block_range(m: int, parts: int, rank: int) -> BlockRange:
    """Contiguous block of ``m`` items owned by ``rank`` out of ``parts``.

    The first ``m % parts`` ranks get one extra item. ``parts > m`` is allowed
    and leaves the trailing ranks empty.
    """
    if parts < 1:
        raise ValueError("parts must be >= 1")
    if not 0 <= rank < parts:
        raise ValueError(f"rank {rank} out of range for {parts} parts")
    if m < 0:
        raise ValueError("m must be non-negative")
    base, extra = divmod(m, parts)
    count = base + (1 if rank < extra else 0)
    start = rank * base + min(rank, extra)
    return BlockRange(start, count)


def save_tensor(t: Tensor3, path) -> None:
    m1, m2, m3 = t.dims
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, m1, m2, m3))
        fh.write(t.data.astype("<f8", copy=False).tobytes(order="C"))


def read_header(path) -> tuple[int, int, int]:
    """Validate an MSC3 file header against the file size and return the dims."""
    path = Path(path)
    size = path.stat().st_size
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file too short for an MSC3 header")
    magic, m1, m2, m3 = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if min(m1, m2, m3) < 1:
        raise FormatError(f"{path}: zero dimension in header ({m1}, {m2}, {m3})")
    n = m1 * m2 * m3
    if n * 8 > 2**63 - 1:
        raise FormatError(f"{path}: dimensions ({m1}, {m2}, {m3}) overflow")
    if size - _HEADER.size != n * 8:
        raise FormatError(
            f"{path}: header declares {n} values but payload holds {(size - _HEADER.size) / 8:g}"
        )
    return m1, m2, m3


def load_tensor(path) -> Tensor3:
    dims = read_header(path)
    values = np.fromfile(path, dtype="<f8", offset=_HEADER.size)
    return Tensor3(values.reshape(dims))


def open_tensor(path) -> np.memmap:
    """Read-only memory map of an MSC3 payload; slicing it reads only the touched pages."""
    dims = read_header(path)
    return np.memmap(path, dtype="<f8", mode="r", offset=_HEADER.size, shape=dims)
