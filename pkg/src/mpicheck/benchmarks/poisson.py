"""2D Poisson equation by Jacobi iteration on horizontal stripes.

The grid is indexed ``u[i, j]`` with ``i`` the row (the y direction, which is
what gets striped) and ``j`` the column.  Neighbours along a row direction
are weighted by dx**2 and neighbours along a column by dy**2, i.e. the
standard five-point formula with x along the columns.  Boundary values are
fixed at zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..arrays import LockedArray2D, RowBlock
from ..calculus import AllReduce, Gather, PlainBarrier, ReduceOp, TopologySpec
from ..runtime.world import Payload, World
from .layout import (
    ConfigError,
    halo_barrier_tag,
    halo_decode,
    halo_down,
    halo_receiver,
    halo_sender,
    halo_up,
    stripe,
)


@dataclass(frozen=True)
class PoissonConfig:
    nx: int = 64
    ny: int = 64
    iters: int = 100
    tol: float | None = None  # residual threshold mode when set

    @property
    def dx(self) -> float:
        return 1.0 / (self.nx - 1)

    @property
    def dy(self) -> float:
        return 1.0 / (self.ny - 1)

    def validate(self, size: int = 1) -> None:
        if self.nx < 3 or self.ny < 3:
            raise ConfigError("grid must be at least 3x3")
        if self.iters < 0:
            raise ConfigError("iters must be non-negative")
        if size < 1:
            raise ConfigError("need at least one process")
        if self.ny % size:
            raise ConfigError(f"ny = {self.ny} is not divisible by {size} processes")


def source(cfg: PoissonConfig) -> np.ndarray:
    """f = sin(2 pi x) sin(2 pi y), precomputed once with the host math library."""
    f = np.empty((cfg.ny, cfg.nx))
    for i in range(cfg.ny):
        sy = math.sin(2 * math.pi * i * cfg.dy)
        for j in range(cfg.nx):
            f[i, j] = math.sin(2 * math.pi * j * cfg.dx) * sy
    return f


def jacobi_rows(up: np.ndarray, mid: np.ndarray, down: np.ndarray, f: np.ndarray, cfg: PoissonConfig) -> np.ndarray:
    """New interior-column values for a block of rows given the rows above
    and below it.  Shared by the sequential and striped solvers."""
    dx2, dy2 = cfg.dx**2, cfg.dy**2
    out = mid.copy()
    out[:, 1:-1] = (
        (up[:, 1:-1] + down[:, 1:-1]) * dx2
        + (mid[:, 2:] + mid[:, :-2]) * dy2
        - f[:, 1:-1] * dx2 * dy2
    ) / (2 * (dx2 + dy2))
    return out


def jacobi_step(u: np.ndarray, f: np.ndarray, cfg: PoissonConfig) -> np.ndarray:
    out = u.copy()
    out[1:-1] = jacobi_rows(u[:-2], u[1:-1], u[2:], f[1:-1], cfg)
    return out


def squared_change(new_rows: np.ndarray, old_rows: np.ndarray) -> float:
    """Sum of squared differences over a block of rows, computed on a fresh
    contiguous array so the summation order depends only on the shape."""
    d = np.ascontiguousarray(new_rows - old_rows)
    return float(np.sum(d * d))


def _stripe_contributions(new: np.ndarray, old: np.ndarray, ny: int, size: int) -> list[float]:
    return [squared_change(new[lo:hi], old[lo:hi]) for lo, hi in (stripe(ny, size, r) for r in range(size))]


@dataclass
class PoissonResult:
    grid: np.ndarray
    residual: float
    iterations: int
    residuals: list[float] = field(default_factory=list)


def poisson_sequential(cfg: PoissonConfig) -> PoissonResult:
    cfg.validate()
    f = source(cfg)
    u = np.zeros((cfg.ny, cfg.nx))
    residuals = []
    for _ in range(_max_iters(cfg)):
        new = jacobi_step(u, f, cfg)
        residuals.append(math.sqrt(float(np.sum((new - u) ** 2))))
        u = new
        if cfg.tol is not None and residuals[-1] < cfg.tol:
            break
    return PoissonResult(u, residuals[-1] if residuals else 0.0, len(residuals), residuals)


def _max_iters(cfg: PoissonConfig) -> int:
    return cfg.iters


class _Oracle:
    """Grid history of the sequential iteration, used to derive payloads and
    reduction contributions for any process count."""

    def __init__(self, cfg: PoissonConfig):
        self.cfg = cfg
        self.f = source(cfg)
        u = np.zeros((cfg.ny, cfg.nx))
        self.grids = [u]
        for _ in range(_max_iters(cfg)):
            u = jacobi_step(u, self.f, cfg)
            self.grids.append(u)
        self._iters: dict[int, int] = {}

    def iterations(self, size: int) -> int:
        """Iterations the striped solver performs with ``size`` processes
        (threshold mode depends on the reduction order)."""
        if self.cfg.tol is None:
            return self.cfg.iters
        if size not in self._iters:
            count = self.cfg.iters
            for n in range(self.cfg.iters):
                parts = _stripe_contributions(self.grids[n + 1], self.grids[n], self.cfg.ny, size)
                total = parts[0]
                for p in parts[1:]:
                    total = total + p
                if math.sqrt(total) < self.cfg.tol:
                    count = n + 1
                    break
            self._iters[size] = count
        return self._iters[size]

    def contribution(self, n: int, rank: int, size: int) -> float:
        lo, hi = stripe(self.cfg.ny, size, rank)
        return squared_change(self.grids[n + 1][lo:hi], self.grids[n][lo:hi])


def poisson_spec(cfg: PoissonConfig, oracle: _Oracle | None = None) -> TopologySpec:
    oracle = oracle or _Oracle(cfg)

    def message(tag: int, size: int) -> Payload:
        n, direction, r = halo_decode(tag, size)
        _, hi = stripe(cfg.ny, size, r)
        row = hi - 1 if direction == "down" else hi
        return Payload.of(oracle.grids[n][row])

    def collectives(index: int, size: int):
        iters = oracle.iterations(size)
        if index < iters:
            return AllReduce(ReduceOp.SUM, lambda rank, size, n=index: oracle.contribution(n, rank, size))
        if index == iters:
            final = oracle.grids[iters]

            def segment(rank: int, size: int) -> Payload:
                lo, hi = stripe(cfg.ny, size, rank)
                return Payload.of(final[lo:hi].reshape(-1))

            return Gather(0, lambda rank, size: (cfg.ny // size) * cfg.nx, segment)
        return PlainBarrier()

    def barrier_tag(index: int, size: int) -> int:
        return halo_barrier_tag(oracle.iterations(size))(index, size)

    return TopologySpec(
        sender=halo_sender,
        receiver=halo_receiver,
        message=message,
        barrier_tag=barrier_tag,
        barrier_count=lambda size: oracle.iterations(size) + 1,
        collectives=collectives,
    )


def poisson_program(cfg: PoissonConfig):
    """Rank program: halo rows each way, Jacobi update of the owned rows,
    AllReduce of the squared change, and a final Gather at rank 0.

    Returns ``(grid, residual, iterations)`` at rank 0 and ``None`` elsewhere.
    """
    f_all = source(cfg)

    def program(w: World):
        rank, size = w.rank, w.size
        lo, hi = stripe(cfg.ny, size, rank)
        h = hi - lo
        # local rows: ghost above, h owned rows, ghost below
        local = LockedArray2D(h + 2, cfg.nx)
        f = f_all[lo:hi]
        first_interior = max(lo, 1) - lo  # owned rows that are not boundary rows
        last_interior = min(hi, cfg.ny - 1) - lo
        residual = 0.0
        iterations = 0
        for n in range(cfg.iters):
            reqs = []
            if rank > 0:
                reqs.append((yield from w.irecv(local, RowBlock(0, 1), halo_down(n, size, rank - 1), src=rank - 1)))
            if rank < size - 1:
                reqs.append((yield from w.isend(local, RowBlock(h, 1), halo_down(n, size, rank), dest=rank + 1)))
            if rank > 0:
                reqs.append((yield from w.isend(local, RowBlock(1, 1), halo_up(n, size, rank - 1), dest=rank - 1)))
            if rank < size - 1:
                reqs.append((yield from w.irecv(local, RowBlock(h + 1, 1), halo_up(n, size, rank), src=rank + 1)))
            for req in reqs:
                yield from w.wait(req)
            g = local.grid()
            old = g[1 : h + 1]
            new = old.copy()
            a, b = first_interior, last_interior
            if b > a:
                new[a:b] = jacobi_rows(g[a : b], g[a + 1 : b + 1], g[a + 2 : b + 2], f[a:b], cfg)
            local.write(RowBlock(1, h), new)
            total = yield from w.allreduce(squared_change(new, old), ReduceOp.SUM)
            residual = math.sqrt(total)
            iterations += 1
            if cfg.tol is not None and residual < cfg.tol:
                break
        out = LockedArray2D(cfg.ny, cfg.nx) if rank == 0 else None
        yield from w.gather(local, RowBlock(1, h), out, root=0)
        if out is None:
            return None
        return out.grid(), residual, iterations

    return program
