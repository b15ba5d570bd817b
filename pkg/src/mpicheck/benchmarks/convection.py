"""1D linear convection with the first-order upwind scheme."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..arrays import LockedArray1D, Range1D
from ..calculus import Gather, TopologySpec
from ..runtime.world import Payload, World
from .layout import ConfigError, chain_barrier_tag, chain_receiver, chain_sender, stripe


@dataclass(frozen=True)
class ConvectionConfig:
    nx: int = 40
    nt: int = 25
    dx: float = 0.05
    dt: float = 0.025
    c: float = 1.0

    @property
    def courant(self) -> float:
        return self.c * self.dt / self.dx

    def validate(self, size: int = 1) -> None:
        if self.nx < 2 or self.nt < 0:
            raise ConfigError("need nx >= 2 and nt >= 0")
        if size < 1:
            raise ConfigError("need at least one process")
        if self.nx % size:
            raise ConfigError(f"nx = {self.nx} is not divisible by {size} processes")
        if not 0 <= self.courant <= 1:
            raise ConfigError(f"CFL number {self.courant} outside [0, 1]")


def initial_condition(cfg: ConvectionConfig) -> np.ndarray:
    """Square wave: 2 on x in [0.5, 1.0], 1 elsewhere."""
    x = np.arange(cfg.nx) * cfg.dx
    eps = 1e-12
    return np.where((x >= 0.5 - eps) & (x <= 1.0 + eps), 2.0, 1.0)


def upwind_step(u, u_left, cfg: ConvectionConfig):
    return u - cfg.c * cfg.dt / cfg.dx * (u - u_left)


def history(cfg: ConvectionConfig) -> list[np.ndarray]:
    """States at the start of every step, followed by the final state."""
    u = initial_condition(cfg)
    out = [u.copy()]
    for _ in range(cfg.nt):
        un = u.copy()
        u[1:] = upwind_step(un[1:], un[:-1], cfg)
        out.append(u.copy())
    return out


def convection_sequential(cfg: ConvectionConfig) -> np.ndarray:
    cfg.validate()
    return history(cfg)[-1]


def convection_spec(cfg: ConvectionConfig) -> TopologySpec:
    """Topology of the upwind solver; payloads come from the sequential run."""
    hist = history(cfg)
    final = hist[-1]

    def message(tag: int, size: int) -> Payload:
        n, r = divmod(tag, size - 1)
        _, hi = stripe(cfg.nx, size, r)
        return Payload.of(hist[n][hi - 1 : hi])

    def segment(rank: int, size: int) -> Payload:
        lo, hi = stripe(cfg.nx, size, rank)
        return Payload.of(final[lo:hi])

    gather = Gather(0, lambda rank, size: cfg.nx // size, segment)
    return TopologySpec(
        sender=chain_sender,
        receiver=chain_receiver,
        message=message,
        barrier_tag=chain_barrier_tag(cfg.nt),
        barrier_count=lambda size: cfg.nt + 1,
        collectives={cfg.nt: gather},
    )


def convection_program(cfg: ConvectionConfig):
    """The rank program: exchange one boundary value per step, barrier,
    then gather at rank 0."""
    u0 = initial_condition(cfg)

    def program(w: World):
        rank, size = w.rank, w.size
        lo, hi = stripe(cfg.nx, size, rank)
        width = hi - lo
        u = LockedArray1D(u0[lo:hi])
        tail = Range1D(width - 1, 1)
        head = Range1D(0, 1)
        for n in range(cfg.nt):
            un = u.copy()
            old = un.read()
            new = u.read()
            new[1:] = upwind_step(old[1:], old[:-1], cfg)
            u.write(None, new)
            bt = n * (size - 1)
            if size == 1:
                pass
            elif rank == 0:
                yield from w.send(un, tail, bt, dest=rank + 1)
            elif rank == size - 1:
                yield from w.recv(u, head, bt + rank - 1, src=rank - 1)
                u.set(0, upwind_step(un.get(0), u.get(0), cfg))
            else:
                req = yield from w.isend(un, tail, bt + rank, dest=rank + 1)
                yield from w.recv(u, head, bt + rank - 1, src=rank - 1)
                u.set(0, upwind_step(un.get(0), u.get(0), cfg))
                yield from w.wait(req)
            yield from w.barrier()
        out = LockedArray1D(cfg.nx) if rank == 0 else None
        yield from w.gather(u, None, out, root=0)
        return out.read() if out is not None else None

    return program
