from __future__ import annotations

import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpicheck.arrays import (
    AcquireConflict,
    AcquireOnWriteLocked,
    LockedArray1D,
    LockedArray2D,
    OutOfBounds,
    Range1D,
    ReadWhileWriteLocked,
    ReleaseUnheld,
    RowBlock,
    RowSegment,
    ShapeMismatch,
    WriteWhileLocked,
    axpy,
    check_contiguous,
    from_bytes,
)
from lockmodel import Outcome, new_array, random_steps, run_sequence


def test_get_and_write_lock():
    a = LockedArray1D(4)
    assert a.get(2) == 0.0
    a.acquire_write(Range1D(0, 1))
    with pytest.raises(ReadWhileWriteLocked):
        a.get(0)
    assert a.get(2) == 0.0
    with pytest.raises(OutOfBounds):
        a.get(4)


def test_set_and_read_lock():
    a = LockedArray1D(4)
    a.set(1, 3.5)
    assert a.data[1] == 3.5
    a.acquire_read(Range1D(1, 1))
    with pytest.raises(WriteWhileLocked):
        a.set(1, 0.0)
    a.release_read(Range1D(1, 1))
    a.set(1, 0.0)
    assert a.get(1) == 0.0


def test_overlapping_reads_count_up():
    a = LockedArray1D(6)
    a.acquire_read(Range1D(0, 4))
    a.acquire_read(Range1D(2, 4))
    assert list(a.read_count) == [1, 1, 2, 2, 1, 1]
    a.release_read(Range1D(0, 4))
    a.release_read(Range1D(2, 4))
    assert not a.read_count.any()
    a.fill(1.0)


def test_read_on_write_locked():
    a = LockedArray1D(3)
    a.acquire_write(Range1D(1, 2))
    with pytest.raises(AcquireOnWriteLocked):
        a.acquire_read(Range1D(0, 2))


def test_write_locks_are_exclusive():
    a = LockedArray2D(4, 4)
    a.acquire_write(RowBlock(0, 2))
    assert a.write_locked[:8].all() and not a.write_locked[8:].any()
    a.set((2, 0), 1.0)
    with pytest.raises(AcquireConflict):
        a.acquire_write(RowSegment(1, 2, 2))
    b = LockedArray1D(2)
    b.acquire_read(Range1D(0, 1))
    with pytest.raises(AcquireConflict):
        b.acquire_write(Range1D(0, 2))


def test_release_unheld():
    a = LockedArray1D(2)
    with pytest.raises(ReleaseUnheld):
        a.release_read(Range1D(0, 1))
    with pytest.raises(ReleaseUnheld):
        a.release_write(Range1D(0, 1))


@pytest.mark.parametrize(
    "shape, region, expected",
    [
        ((4, 4), RowBlock(1, 2), True),
        ((4, 4), [RowSegment(r, 1, 1) for r in range(4)], False),
        ((4, 1), RowBlock(0, 4), True),
        ((4, 1), [RowSegment(r, 0, 1) for r in range(4)], True),
        ((4, 4), RowSegment(2, 1, 3), True),
        ((4, 4), [RowSegment(1, 2, 2), RowSegment(2, 0, 1)], True),
    ],
)
def test_contiguity(shape, region, expected):
    assert check_contiguous(LockedArray2D(*shape), region) is expected


def test_helpers():
    assert LockedArray1D([1, 2, 3, 4]).roll(1).values() == [4, 1, 2, 3]
    assert axpy(2, [1, 1], [3, 4]).values() == [5, 6]
    a = LockedArray2D(4, 4)
    a.write(RowBlock(1, 1), [9, 8, 7, 6])
    assert a.slice(RowSegment(1, 0, 4)).values() == [9, 8, 7, 6]
    b = LockedArray1D([1.0, 2.0])
    assert b.add([1, 1]).values() == [2, 3]
    assert b.mul(b).values() == [1, 4]
    assert b.scale(0.5).values() == [0.5, 1.0]
    assert a.copy().grid().tolist() == a.grid().tolist()
    with pytest.raises(ShapeMismatch):
        b.add([1, 2, 3])
    with pytest.raises(ShapeMismatch):
        a.write(RowBlock(0, 1), [1, 2])


def test_helpers_respect_locks():
    a = LockedArray1D(3)
    a.acquire_write(Range1D(0, 1))
    with pytest.raises(ReadWhileWriteLocked):
        a.roll(1)
    with pytest.raises(ReadWhileWriteLocked):
        a.slice(Range1D(0, 2))


def test_binary_round_trip():
    a = LockedArray2D(2, 3, np.arange(6) * 0.1)
    b = from_bytes(a.to_bytes())
    assert isinstance(b, LockedArray2D) and b.shape == (2, 3)
    assert b.data.tobytes() == a.data.tobytes()
    assert "0.10000000000000001" in a.to_csv()
    c = from_bytes(LockedArray1D([-0.0, 1e300]).to_bytes())
    assert c.data.tobytes() == np.array([-0.0, 1e300]).tobytes()


def test_round_trip_restores_lock_state():
    a = LockedArray2D(3, 3)
    before = a.lock_state()
    a.acquire_read(RowBlock(0, 2))
    a.acquire_read(RowSegment(1, 0, 3))
    a.release_read(RowSegment(1, 0, 3))
    a.release_read(RowBlock(0, 2))
    a.acquire_write(Range1D(2, 5))
    a.release_write(Range1D(2, 5))
    assert a.lock_state() == before


@settings(max_examples=300, deadline=None)
@given(st.sampled_from(["1d", "2d"]), st.integers(0, 2**32 - 1))
def test_random_lock_sequences(kind, seed):
    rng = random.Random(seed)
    a = new_array(kind, rng)
    out = Outcome()
    run_sequence(a, random_steps(rng, a, 40), out)
    assert out.violations == 0
