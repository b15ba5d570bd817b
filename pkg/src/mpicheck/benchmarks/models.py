"""Integer versions of the three benchmarks written in the core calculus.

These keep each benchmark's communication skeleton (tags, ordering of
sends, receives and waits, one barrier per step and a final collective)
while replacing the floating-point numerics with small integer updates that
the calculus can evaluate.  Every payload is predicted by a plain Python
oracle running the same integer update on the whole domain, so the axiom
monitor checks message contents as well as the protocol.

Domains are block distributed, so process counts that do not divide the
domain size (N = 3 on 8 cells, say) are covered too.  Each program is built
for a particular N: the code for rank r sits under ``if rank = r``.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..calculus import (
    BARRIER,
    Add,
    Command,
    Div,
    Eq,
    Expr,
    If,
    IntLit,
    IRecv,
    ISend,
    Mul,
    Neg,
    Set,
    TopologySpec,
    Var,
    Wait,
    While,
    seq,
)
from .layout import (
    ConfigError,
    block,
    chain_barrier_tag,
    chain_receiver,
    chain_sender,
    halo_barrier_tag,
    halo_decode,
    halo_receiver,
    halo_sender,
)

# -- expression helpers -----------------------------------------------------


def _e(x: Expr | int | str) -> Expr:
    if isinstance(x, int):
        return IntLit(x)
    if isinstance(x, str):
        return Var(x)
    return x


def _add(*xs) -> Expr:
    out = _e(xs[0])
    for x in xs[1:]:
        out = Add(out, _e(x))
    return out


def _sub(a, b) -> Expr:
    return Add(_e(a), Neg(_e(b)))


def _mul(a, b) -> Expr:
    return Mul(_e(a), _e(b))


def _div(a, b) -> Expr:
    return Div(_e(a), _e(b))


def _set(x: str, e) -> Command:
    return Set(x, _e(e))


def _by_rank(n: int, body) -> Command:
    """``if rank = 0 {body(0)} {if rank = 1 {...} ...}``."""
    out = body(n - 1)
    for r in range(n - 2, -1, -1):
        out = If(Eq(Var("rank"), IntLit(r)), body(r), out)
    return out


def _loop(steps: int, body: Command) -> Command:
    """Run ``body`` ``steps`` times with ``n`` bound to the step index."""
    return seq(
        _set("k", steps),
        While(Var("k"), seq(_set("n", _sub(steps, "k")), body, BARRIER, _set("k", _sub("k", 1)))),
    )


@dataclass(frozen=True)
class Model:
    name: str
    n: int
    program: Command
    spec: TopologySpec
    final: list[int]  # oracle's final global state


# -- integer kernels shared by the programs and the oracles -------------------


def upwind_int(u: int, u_left: int) -> int:
    return u - (u - u_left) // 2


def jacobi_int(up: int, down: int, f: int) -> int:
    return (up + down - f) // 2


def smooth_int(a: int, b: int, c: int) -> int:
    return (a + 2 * b + c) // 4


HEAT_BASE = 128
HEAT_SWEEPS = 4


def pack(values: list[int]) -> int:
    out = 0
    for v in reversed(values):
        if not 0 <= v < HEAT_BASE:
            raise ValueError(f"{v} does not fit a base-{HEAT_BASE} digit")
        out = out * HEAT_BASE + v
    return out


def unpack(p: int, count: int) -> list[int]:
    out = []
    for _ in range(count):
        p, d = divmod(p, HEAT_BASE)
        out.append(d)
    return out


# -- convection -------------------------------------------------------------


def convection_history(nx: int, steps: int) -> list[list[int]]:
    u = [200 if nx // 4 <= j < nx // 2 else 100 for j in range(nx)]
    hist = [u[:]]
    for _ in range(steps):
        u = [u[0]] + [upwind_int(u[j], u[j - 1]) for j in range(1, nx)]
        hist.append(u[:])
    return hist


def convection_model(n: int, nx: int = 8, steps: int = 3) -> Model:
    """Chain exchange: rank r sends its last cell to r + 1 with tag
    n(N-1) + r; middle ranks post the send before receiving."""
    if n < 2 or nx < n:
        raise ConfigError("need 2 <= N <= nx")
    hist = convection_history(nx, steps)

    def rank_code(r: int) -> Command:
        lo, hi = block(nx, n, r)
        w = hi - lo
        init = [_set(f"u{i}", hist[0][lo + i]) for i in range(w)]
        snap = [_set(f"o{i}", f"u{i}") for i in range(w)]
        bt = _mul("n", _sub("size", 1))
        interior = [_set(f"u{i}", _sub(f"o{i}", _div(_sub(f"o{i}", f"o{i - 1}"), 2))) for i in range(1, w)]
        first = _set("u0", _sub("o0", _div(_sub("o0", "h"), 2)))
        send_tag = _add(bt, "rank")
        recv_tag = _add(bt, _sub("rank", 1))
        if r == 0:
            step = seq(*snap, ISend(send_tag, f"o{w - 1}"), Wait(send_tag), *interior)
        elif r == n - 1:
            step = seq(*snap, IRecv(recv_tag, "h"), Wait(recv_tag), first, *interior)
        else:
            step = seq(
                *snap,
                ISend(send_tag, f"o{w - 1}"),
                IRecv(recv_tag, "h"),
                Wait(recv_tag),
                first,
                *interior,
                Wait(send_tag),
            )
        return seq(*init, _loop(steps, step))

    def message(tag: int, size: int) -> int:
        step, r = divmod(tag, size - 1)
        _, hi = block(nx, size, r)
        return hist[step][hi - 1]

    spec = TopologySpec(
        sender=chain_sender,
        receiver=chain_receiver,
        message=message,
        barrier_tag=chain_barrier_tag(steps),
        barrier_count=lambda size: steps + 1,
    )
    return Model("convection", n, _by_rank(n, rank_code), spec, hist[-1])


# -- halo helpers -------------------------------------------------------------


def _halo_exchange(r: int, n: int, send_down: str, send_up: str, recv_above: str, recv_below: str) -> Command:
    """Post irecv above, isend down, isend up, irecv below; wait in tag order."""
    base = _mul(_mul("n", 2), _sub("size", 1))
    down_in = _add(base, _sub("rank", 1))
    down_out = _add(base, "rank")
    up_out = _add(base, _sub("size", 1), _sub("rank", 1))
    up_in = _add(base, _sub("size", 1), "rank")
    posts, waits = [], []
    if r > 0:
        posts.append(IRecv(down_in, recv_above))
        waits.append(Wait(down_in))
    if r < n - 1:
        posts.append(ISend(down_out, send_down))
        waits.append(Wait(down_out))
    if r > 0:
        posts.append(ISend(up_out, send_up))
        waits.append(Wait(up_out))
    if r < n - 1:
        posts.append(IRecv(up_in, recv_below))
        waits.append(Wait(up_in))
    return seq(*posts, *waits)


# -- Poisson ----------------------------------------------------------------


def poisson_source(ny: int) -> list[int]:
    return [0] + [((7 * i) % 9) - 4 for i in range(1, ny - 1)] + [0]


def poisson_history(ny: int, iters: int) -> list[list[int]]:
    f = poisson_source(ny)
    u = [0] * ny
    hist = [u[:]]
    for _ in range(iters):
        u = [u[0]] + [jacobi_int(u[i - 1], u[i + 1], f[i]) for i in range(1, ny - 1)] + [u[-1]]
        hist.append(u[:])
    return hist


def poisson_model(n: int, ny: int = 8, iters: int = 3) -> Model:
    """Rows collapsed to one integer each; one row goes each way between
    neighbours every iteration, then a barrier stands in for the residual
    reduction.  The appended final barrier stands in for the gather."""
    if n < 2 or ny < n:
        raise ConfigError("need 2 <= N <= ny")
    hist = poisson_history(ny, iters)
    f = poisson_source(ny)

    def rank_code(r: int) -> Command:
        lo, hi = block(ny, n, r)
        h = hi - lo
        init = [_set(f"u{i}", 0) for i in range(h)] + [_set("hu", 0), _set("hd", 0)]

        def row(i: int) -> str:
            return "hu" if i < 0 else "hd" if i >= h else f"u{i}"

        update = []
        for i in range(h):
            g = lo + i
            if 0 < g < ny - 1:
                update.append(_set(f"v{i}", _div(_sub(_add(row(i - 1), row(i + 1)), f[g]), 2)))
        update += [_set(f"u{i}", f"v{i}") for i in range(h) if 0 < lo + i < ny - 1]
        exchange = _halo_exchange(r, n, f"u{h - 1}", "u0", "hu", "hd")
        return seq(*init, _loop(iters, seq(exchange, *update)))

    def message(tag: int, size: int) -> int:
        step, direction, r = halo_decode(tag, size)
        _, cut = block(ny, size, r)
        return hist[step][cut - 1] if direction == "down" else hist[step][cut]

    spec = TopologySpec(
        sender=halo_sender,
        receiver=halo_receiver,
        message=message,
        barrier_tag=halo_barrier_tag(iters),
        barrier_count=lambda size: iters + 1,
    )
    return Model("poisson", n, _by_rank(n, rank_code), spec, hist[-1])


# -- heat -------------------------------------------------------------------


def heat_initial(ny: int) -> list[int]:
    return [100 if ny // 4 <= i < 3 * ny // 4 else 0 for i in range(ny)]


def heat_history(ny: int, steps: int) -> list[list[int]]:
    u = heat_initial(ny)
    hist = [u[:]]
    for _ in range(steps):
        for _ in range(HEAT_SWEEPS):
            u = [u[0]] + [smooth_int(u[i - 1], u[i], u[i + 1]) for i in range(1, ny - 1)] + [u[-1]]
        hist.append(u[:])
    return hist


def heat_model(n: int, ny: int = 16, steps: int = 2) -> Model:
    """Rows collapsed to one integer each; four rows travel each way per
    step packed into a single base-128 integer, matching the four sweeps
    of the three-point smoother done between exchanges."""
    halo = HEAT_SWEEPS
    if n < 2:
        raise ConfigError("need at least two processes")
    for r in range(n):
        lo, hi = block(ny, n, r)
        if hi - lo < halo:
            raise ConfigError(f"rank {r} owns {hi - lo} rows, fewer than the {halo}-row halo")
    hist = heat_history(ny, steps)

    def rank_code(r: int) -> Command:
        lo, hi = block(ny, n, r)
        h = hi - lo
        wlo = lo - halo if r > 0 else lo
        whi = hi + halo if r < n - 1 else hi
        # window cells w{j} for global rows wlo..whi-1
        name = {g: f"w{g - wlo}" for g in range(wlo, whi)}
        init = [_set(name[g], hist[0][g]) for g in range(lo, hi)]
        init += [_set(name[g], 0) for g in range(wlo, whi) if not lo <= g < hi]

        def packed(rows: list[int]) -> Expr:
            e = _e(name[rows[-1]])
            for g in reversed(rows[:-1]):
                e = _add(_mul(e, HEAT_BASE), name[g])
            return e

        prep = []
        if r < n - 1:
            prep.append(_set("pd", packed(list(range(hi - halo, hi)))))
        if r > 0:
            prep.append(_set("pu", packed(list(range(lo, lo + halo)))))
        exchange = _halo_exchange(r, n, "pd", "pu", "qa", "qb")

        def unpack_into(var: str, rows: list[int]) -> list[Command]:
            out = [_set("t", var)]
            for g in rows:
                out.append(_set(name[g], _sub("t", _mul(_div("t", HEAT_BASE), HEAT_BASE))))
                out.append(_set("t", _div("t", HEAT_BASE)))
            return out

        recv = []
        if r > 0:
            recv += unpack_into("qa", list(range(lo - halo, lo)))
        if r < n - 1:
            recv += unpack_into("qb", list(range(hi, hi + halo)))
        sweeps = []
        for _ in range(HEAT_SWEEPS):
            inner = [g for g in range(wlo + 1, whi - 1) if 0 < g < ny - 1]
            sweeps += [
                _set(f"s{g - wlo}", _div(_add(name[g - 1], _mul(2, name[g]), name[g + 1]), 4)) for g in inner
            ]
            sweeps += [_set(name[g], f"s{g - wlo}") for g in inner]
        del h
        return seq(*init, _loop(steps, seq(*prep, exchange, *recv, *sweeps)))

    def message(tag: int, size: int) -> int:
        step, direction, r = halo_decode(tag, size)
        _, cut = block(ny, size, r)
        rows = hist[step][cut - halo : cut] if direction == "down" else hist[step][cut : cut + halo]
        return pack(rows)

    spec = TopologySpec(
        sender=halo_sender,
        receiver=halo_receiver,
        message=message,
        barrier_tag=halo_barrier_tag(steps),
        barrier_count=lambda size: steps + 1,
    )
    return Model("heat", n, _by_rank(n, rank_code), spec, hist[-1])


MODELS = {"convection": convection_model, "poisson": poisson_model, "heat": heat_model}


def final_cells(model: Model, state) -> list[int]:
    """Reassemble the global state from a terminal calculus state."""
    out = []
    for r, p in enumerate(state.procs):
        env = p.env
        if model.name == "heat":
            ny = len(model.final)
            lo, hi = block(ny, model.n, r)
            wlo = lo - HEAT_SWEEPS if r > 0 else lo
            out += [env[f"w{g - wlo}"] for g in range(lo, hi)]
        else:
            i = 0
            while f"u{i}" in env:
                out.append(env[f"u{i}"])
                i += 1
    return out
