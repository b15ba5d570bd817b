"""Tag layouts and domain partitioning shared by the benchmarks."""

from __future__ import annotations


class ConfigError(ValueError):
    """An invalid benchmark configuration (maps to CLI exit code 2)."""


def stripe(n_items: int, size: int, rank: int) -> tuple[int, int]:
    """Half-open index range owned by ``rank`` when ``n_items`` is divisible
    by ``size``."""
    h = n_items // size
    return rank * h, (rank + 1) * h


def block(n_items: int, size: int, rank: int) -> tuple[int, int]:
    """Block distribution that tolerates remainders (first ranks get one
    extra item).  Only the calculus models use it."""
    q, rem = divmod(n_items, size)
    lo = rank * q + min(rank, rem)
    return lo, lo + q + (1 if rank < rem else 0)


# -- chain layout: one message per step from rank r to r+1 ------------------
# step n uses tags n*(N-1) .. n*(N-1)+N-2; tag n*(N-1)+r goes r -> r+1


def chain_sender(tag: int, size: int) -> int:
    return tag % (size - 1)


def chain_receiver(tag: int, size: int) -> int:
    return tag % (size - 1) + 1


def chain_barrier_tag(steps: int) -> callable:
    def barrier_tag(index: int, size: int) -> int:
        return min(index, steps) * (size - 1)

    return barrier_tag


# -- halo layout: one message each way between neighbours per step ----------
# step n has base n*2(N-1); tag base+r goes r -> r+1 ("down"),
# tag base+(N-1)+r goes r+1 -> r ("up")


def halo_base(step: int, size: int) -> int:
    return step * 2 * (size - 1)


def halo_down(step: int, size: int, rank: int) -> int:
    return halo_base(step, size) + rank


def halo_up(step: int, size: int, rank: int) -> int:
    """Tag of the message from ``rank + 1`` to ``rank``."""
    return halo_base(step, size) + (size - 1) + rank


def halo_decode(tag: int, size: int) -> tuple[int, str, int]:
    """(step, direction, lower rank of the pair) for a halo tag."""
    step, k = divmod(tag, 2 * (size - 1))
    if k < size - 1:
        return step, "down", k
    return step, "up", k - (size - 1)


def halo_sender(tag: int, size: int) -> int:
    _, direction, r = halo_decode(tag, size)
    return r if direction == "down" else r + 1


def halo_receiver(tag: int, size: int) -> int:
    _, direction, r = halo_decode(tag, size)
    return r + 1 if direction == "down" else r


def halo_barrier_tag(steps: int) -> callable:
    def barrier_tag(index: int, size: int) -> int:
        return min(index, steps) * 2 * (size - 1)

    return barrier_tag
