"""Real-valued buffers with per-element read counters and write flags.

Both array classes keep their data in one flat float64 vector (row-major for
2D), so every region maps to a half-open span of flat indices.  Read locks
count, write locks are exclusive; a write-locked element has no readers.
"""

from __future__ import annotations

import io
import struct
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from typing import Union

import numpy as np


class LockError(Exception):
    pass


class OutOfBounds(LockError, IndexError):
    pass


class ReadWhileWriteLocked(LockError):
    pass


class WriteWhileLocked(LockError):
    pass


class AcquireOnWriteLocked(LockError):
    pass


class AcquireConflict(LockError):
    pass


class ReleaseUnheld(LockError):
    pass


class ShapeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Range1D:
    start: int
    len: int


@dataclass(frozen=True)
class RowBlock:
    first_row: int
    n_rows: int


@dataclass(frozen=True)
class RowSegment:
    row: int
    start_col: int
    len: int


Region = Union[Range1D, RowBlock, RowSegment]

_MAGIC = b"LKA1"


class _LockedBase:
    data: np.ndarray
    read_count: np.ndarray
    write_locked: np.ndarray

    def _init_storage(self, flat: np.ndarray) -> None:
        self.data = np.ascontiguousarray(flat, dtype=np.float64).copy()
        self.read_count = np.zeros(self.data.size, dtype=np.int64)
        self.write_locked = np.zeros(self.data.size, dtype=bool)

    # subclasses map regions and indices to flat positions
    def span(self, region: Region) -> slice:
        raise NotImplementedError

    def _flat(self, index) -> int:
        raise NotImplementedError

    def __len__(self) -> int:
        return self.data.size

    @property
    def size(self) -> int:
        return self.data.size

    # -- element access -----------------------------------------------------

    def get(self, index) -> float:
        k = self._flat(index)
        if self.write_locked[k]:
            raise ReadWhileWriteLocked(f"element {index} is write-locked")
        return float(self.data[k])

    def set(self, index, v: float):
        k = self._flat(index)
        if self.write_locked[k] or self.read_count[k]:
            raise WriteWhileLocked(f"element {index} is locked")
        self.data[k] = v
        return self

    # -- region locks -------------------------------------------------------

    def acquire_read(self, region: Region) -> None:
        sl = self.span(region)
        if self.write_locked[sl].any():
            raise AcquireOnWriteLocked(f"{region} overlaps a write lock")
        self.read_count[sl] += 1

    def release_read(self, region: Region) -> None:
        sl = self.span(region)
        if (self.read_count[sl] < 1).any():
            raise ReleaseUnheld(f"{region} has no read lock to release")
        self.read_count[sl] -= 1

    def acquire_write(self, region: Region) -> None:
        sl = self.span(region)
        if self.write_locked[sl].any() or self.read_count[sl].any():
            raise AcquireConflict(f"{region} is already locked")
        self.write_locked[sl] = True

    def release_write(self, region: Region) -> None:
        sl = self.span(region)
        if not self.write_locked[sl].all():
            raise ReleaseUnheld(f"{region} is not write-locked")
        self.write_locked[sl] = False

    def invariant_holds(self) -> bool:
        return not (self.write_locked & (self.read_count != 0)).any() and not (self.read_count < 0).any()

    def lock_state(self) -> tuple[bytes, bytes]:
        return self.read_count.tobytes(), self.write_locked.tobytes()

    # -- bulk access --------------------------------------------------------

    def read(self, region: Region | None = None) -> np.ndarray:
        """Copy of the values in ``region`` (default: everything)."""
        sl = self.span(region) if region is not None else slice(0, self.data.size)
        if self.write_locked[sl].any():
            raise ReadWhileWriteLocked(f"{region} overlaps a write lock")
        return self.data[sl].copy()

    def write(self, region: Region | None, values) -> None:
        sl = self.span(region) if region is not None else slice(0, self.data.size)
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if values.size != sl.stop - sl.start:
            raise ShapeMismatch(f"{values.size} values for a region of {sl.stop - sl.start}")
        if self.write_locked[sl].any() or self.read_count[sl].any():
            raise WriteWhileLocked(f"{region} is locked")
        self.data[sl] = values

    def fill(self, v: float) -> None:
        self.write(None, np.full(self.data.size, v))

    def slice(self, region: Region) -> LockedArray1D:
        return LockedArray1D(self.read(region))

    def _binary(self, other, fn):
        b = other.read() if isinstance(other, _LockedBase) else np.asarray(other, dtype=np.float64)
        a = self.read()
        if b.size != a.size:
            raise ShapeMismatch(f"{a.size} vs {b.size}")
        out = self.copy()
        out.data[:] = fn(a, b.reshape(-1))
        return out

    def add(self, other):
        return self._binary(other, np.add)

    def mul(self, other):
        return self._binary(other, np.multiply)

    def scale(self, s: float):
        out = self.copy()
        out.data[:] = self.read() * s
        return out

    def to_bytes(self) -> bytes:
        dims = self.shape
        head = _MAGIC + struct.pack("<I", len(dims)) + struct.pack(f"<{len(dims)}Q", *dims)
        return head + self.data.astype("<f8").tobytes()

    def to_csv(self) -> str:
        buf = io.StringIO()
        np.savetxt(buf, self.data.reshape(self.shape if len(self.shape) == 2 else (1, -1)), delimiter=",", fmt="%.17g")
        return buf.getvalue()


class LockedArray1D(_LockedBase):
    def __init__(self, values: Iterable[float] | int):
        if isinstance(values, (int, np.integer)):
            values = np.zeros(int(values))
        self._init_storage(np.asarray(values, dtype=np.float64).reshape(-1))

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.data.size,)

    def _flat(self, index) -> int:
        if not isinstance(index, (int, np.integer)) or not 0 <= index < self.data.size:
            raise OutOfBounds(f"index {index} outside [0, {self.data.size})")
        return int(index)

    def span(self, region: Region) -> slice:
        if not isinstance(region, Range1D):
            raise TypeError(f"1D arrays take Range1D regions, got {region!r}")
        if region.len < 1 or region.start < 0 or region.start + region.len > self.data.size:
            raise OutOfBounds(f"{region} outside length {self.data.size}")
        return slice(region.start, region.start + region.len)

    def copy(self) -> LockedArray1D:
        return LockedArray1D(self.data)

    def roll(self, shift: int) -> LockedArray1D:
        return LockedArray1D(np.roll(self.read(), shift))

    def values(self) -> list[float]:
        return [float(x) for x in self.data]


class LockedArray2D(_LockedBase):
    def __init__(self, rows: int, cols: int, values=None):
        if rows < 1 or cols < 1:
            raise ValueError("rows and cols must be positive")
        self.rows, self.cols = rows, cols
        flat = np.zeros(rows * cols) if values is None else np.asarray(values, dtype=np.float64).reshape(-1)
        if flat.size != rows * cols:
            raise ShapeMismatch(f"{flat.size} values for a {rows}x{cols} array")
        self._init_storage(flat)

    @classmethod
    def from_grid(cls, grid) -> LockedArray2D:
        g = np.asarray(grid, dtype=np.float64)
        return cls(g.shape[0], g.shape[1], g)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def grid(self) -> np.ndarray:
        """Checked copy of the whole array as a rows x cols matrix."""
        return self.read().reshape(self.rows, self.cols)

    def _flat(self, index) -> int:
        r, c = index
        if not (0 <= r < self.rows and 0 <= c < self.cols):
            raise OutOfBounds(f"index {index} outside {self.rows}x{self.cols}")
        return r * self.cols + c

    def span(self, region: Region) -> slice:
        match region:
            case RowBlock(first, n):
                if n < 1 or first < 0 or first + n > self.rows:
                    raise OutOfBounds(f"{region} outside {self.rows} rows")
                return slice(first * self.cols, (first + n) * self.cols)
            case RowSegment(row, start, n):
                if n < 1 or not 0 <= row < self.rows or start < 0 or start + n > self.cols:
                    raise OutOfBounds(f"{region} outside {self.rows}x{self.cols}")
                k = row * self.cols + start
                return slice(k, k + n)
            case Range1D(start, n):
                if n < 1 or start < 0 or start + n > self.data.size:
                    raise OutOfBounds(f"{region} outside {self.data.size} elements")
                return slice(start, start + n)
        raise TypeError(f"not a region: {region!r}")

    def copy(self) -> LockedArray2D:
        return LockedArray2D(self.rows, self.cols, self.data)

    def roll(self, shift: int, axis: int = 0) -> LockedArray2D:
        return LockedArray2D.from_grid(np.roll(self.grid(), shift, axis=axis))


def check_contiguous(a: _LockedBase, region: Region | Sequence[Region]) -> bool:
    """Whether the region (or union of regions) occupies one unbroken run of
    the row-major storage."""
    regions = [region] if not isinstance(region, (list, tuple)) else list(region)
    if not regions:
        return False
    spans = sorted((s.start, s.stop) for s in (a.span(r) for r in regions))
    end = spans[0][1]
    for start, stop in spans[1:]:
        if start > end:
            return False
        end = max(end, stop)
    return True


def axpy(alpha: float, x, y) -> LockedArray1D:
    """alpha * x + y as a new 1D array."""
    xs = x.read() if isinstance(x, _LockedBase) else np.asarray(x, dtype=np.float64)
    ys = y.read() if isinstance(y, _LockedBase) else np.asarray(y, dtype=np.float64)
    if xs.shape != ys.shape:
        raise ShapeMismatch(f"{xs.shape} vs {ys.shape}")
    return LockedArray1D(alpha * xs + ys)


def from_bytes(blob: bytes) -> _LockedBase:
    if blob[:4] != _MAGIC:
        raise ValueError("not a locked-array blob")
    (ndim,) = struct.unpack_from("<I", blob, 4)
    dims = struct.unpack_from(f"<{ndim}Q", blob, 8)
    values = np.frombuffer(blob, dtype="<f8", offset=8 + 8 * ndim)
    if ndim == 1:
        return LockedArray1D(values)
    return LockedArray2D(dims[0], dims[1], values)
