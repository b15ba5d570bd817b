"""2D heat equation, classic RK4 in time, five-point Laplacian in space.

One RK4 step reads neighbours up to four rows away, so each stripe works on a
window of its owned rows plus four halo rows on each side.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..arrays import LockedArray2D, RowBlock
from ..calculus import Gather, TopologySpec
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

HALO = 4


@dataclass(frozen=True)
class HeatConfig:
    nx: int = 32
    ny: int = 32
    nt: int = 10
    alpha: float = 1.0
    cfl: float = 0.2

    @property
    def dx(self) -> float:
        return 1.0 / (self.nx - 1)

    @property
    def dy(self) -> float:
        return 1.0 / (self.ny - 1)

    @property
    def dt(self) -> float:
        return self.cfl * self.dx**2 / self.alpha

    def validate(self, size: int = 1) -> None:
        if self.nx < 3 or self.ny < 3:
            raise ConfigError("grid must be at least 3x3")
        if self.nt < 0:
            raise ConfigError("nt must be non-negative")
        if size < 1:
            raise ConfigError("need at least one process")
        if self.ny % size:
            raise ConfigError(f"ny = {self.ny} is not divisible by {size} processes")
        if size > 1 and self.ny // size < HALO:
            raise ConfigError(f"stripes of {self.ny // size} rows are thinner than the {HALO}-row halo")
        if self.alpha <= 0 or self.cfl <= 0:
            raise ConfigError("alpha and cfl must be positive")
        dx2, dy2 = self.dx**2, self.dy**2
        limit = dx2 * dy2 / (2 * self.alpha * (dx2 + dy2))
        if self.dt > limit:
            raise ConfigError(f"dt = {self.dt:g} exceeds the explicit stability limit {limit:g}")


def initial_condition(cfg: HeatConfig) -> np.ndarray:
    """A hot square in the middle of a cold plate."""
    u = np.zeros((cfg.ny, cfg.nx))
    u[cfg.ny // 4 : 3 * cfg.ny // 4, cfg.nx // 4 : 3 * cfg.nx // 4] = 1.0
    return u


def laplacian(u: np.ndarray, cfg: HeatConfig) -> np.ndarray:
    """Five-point Laplacian on the interior; zero on the array's edges."""
    out = np.zeros_like(u)
    out[1:-1, 1:-1] = (u[2:, 1:-1] - 2 * u[1:-1, 1:-1] + u[:-2, 1:-1]) / cfg.dy**2 + (
        u[1:-1, 2:] - 2 * u[1:-1, 1:-1] + u[1:-1, :-2]
    ) / cfg.dx**2
    return out


def periodic_laplacian(u: np.ndarray, cfg: HeatConfig) -> np.ndarray:
    return (np.roll(u, 1, 0) - 2 * u + np.roll(u, -1, 0)) / cfg.dy**2 + (
        np.roll(u, 1, 1) - 2 * u + np.roll(u, -1, 1)
    ) / cfg.dx**2


def rk4_step(u: np.ndarray, cfg: HeatConfig, lap=laplacian) -> np.ndarray:
    dt, a = cfg.dt, cfg.alpha
    k1 = a * lap(u, cfg)
    k2 = a * lap(u + 0.5 * dt * k1, cfg)
    k3 = a * lap(u + 0.5 * dt * k2, cfg)
    k4 = a * lap(u + dt * k3, cfg)
    return u + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _window(ny: int, size: int, rank: int) -> tuple[int, int]:
    lo, hi = stripe(ny, size, rank)
    return max(lo - HALO, 0), min(hi + HALO, ny)


def _boundary_fixed(new: np.ndarray, old: np.ndarray, top: bool, bottom: bool) -> np.ndarray:
    """Restore the Dirichlet rows and columns of a window."""
    new[:, 0] = old[:, 0]
    new[:, -1] = old[:, -1]
    if top:
        new[0] = old[0]
    if bottom:
        new[-1] = old[-1]
    return new


def step_window(win: np.ndarray, cfg: HeatConfig) -> np.ndarray:
    """One RK4 step of a window; rows within four of a cut edge are garbage
    but the owned rows come out exactly as in the full-grid step."""
    return rk4_step(win, cfg)


def history(cfg: HeatConfig) -> list[np.ndarray]:
    u = initial_condition(cfg)
    out = [u]
    for _ in range(cfg.nt):
        u = rk4_step(u, cfg)
        out.append(u)
    return out


def heat_sequential(cfg: HeatConfig) -> np.ndarray:
    cfg.validate()
    return history(cfg)[-1]


def heat_periodic(cfg: HeatConfig, steps: int | None = None) -> np.ndarray:
    """Periodic-boundary run, used to check conservation of total heat."""
    u = initial_condition(cfg)
    for _ in range(cfg.nt if steps is None else steps):
        u = rk4_step(u, cfg, periodic_laplacian)
    return u


def heat_spec(cfg: HeatConfig) -> TopologySpec:
    hist = history(cfg)
    final = hist[-1]

    def message(tag: int, size: int) -> Payload:
        n, direction, r = halo_decode(tag, size)
        _, cut = stripe(cfg.ny, size, r)
        rows = hist[n][cut - HALO : cut] if direction == "down" else hist[n][cut : cut + HALO]
        return Payload.of(rows.reshape(-1))

    def segment(rank: int, size: int) -> Payload:
        lo, hi = stripe(cfg.ny, size, rank)
        return Payload.of(final[lo:hi].reshape(-1))

    return TopologySpec(
        sender=halo_sender,
        receiver=halo_receiver,
        message=message,
        barrier_tag=halo_barrier_tag(cfg.nt),
        barrier_count=lambda size: cfg.nt + 1,
        collectives={cfg.nt: Gather(0, lambda rank, size: (cfg.ny // size) * cfg.nx, segment)},
    )


def heat_program(cfg: HeatConfig):
    """Rank program; returns the gathered grid at rank 0."""
    u0 = initial_condition(cfg)

    def program(w: World):
        rank, size = w.rank, w.size
        lo, hi = stripe(cfg.ny, size, rank)
        wlo, whi = _window(cfg.ny, size, rank)
        own = RowBlock(lo - wlo, hi - lo)
        win = LockedArray2D.from_grid(u0[wlo:whi])
        for n in range(cfg.nt):
            reqs = []
            if rank > 0:
                reqs.append((yield from w.irecv(win, RowBlock(0, HALO), halo_down(n, size, rank - 1), src=rank - 1)))
            if rank < size - 1:
                send_down = RowBlock(own.first_row + own.n_rows - HALO, HALO)
                reqs.append((yield from w.isend(win, send_down, halo_down(n, size, rank), dest=rank + 1)))
            if rank > 0:
                reqs.append((yield from w.isend(win, RowBlock(own.first_row, HALO), halo_up(n, size, rank - 1), dest=rank - 1)))
            if rank < size - 1:
                below = RowBlock(own.first_row + own.n_rows, HALO)
                reqs.append((yield from w.irecv(win, below, halo_up(n, size, rank), src=rank + 1)))
            for req in reqs:
                yield from w.wait(req)
            g = win.grid()
            new = _boundary_fixed(step_window(g, cfg), g, wlo == 0, whi == cfg.ny)
            win.write(own, new[own.first_row : own.first_row + own.n_rows])
            yield from w.barrier()
        out = LockedArray2D(cfg.ny, cfg.nx) if rank == 0 else None
        yield from w.gather(win, own, out, root=0)
        return out.grid() if out is not None else None

    return program
