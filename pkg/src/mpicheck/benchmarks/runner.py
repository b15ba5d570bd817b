"""Run a benchmark in parallel, compare with its sequential reference."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..explorer import ExploreBounds, Ok, explore_system, run_system_schedule
from ..runtime.sim import RuntimeSystem
from ..runtime.workers import DEFAULT_EAGER_BYTES, run_workers
from .convection import ConvectionConfig, convection_program, convection_sequential, convection_spec
from .equivalence import Exact, RelTol, Report, equivalence_check
from .heat import HeatConfig, heat_program, heat_sequential, heat_spec
from .poisson import PoissonConfig, poisson_program, poisson_sequential, poisson_spec

RESIDUAL_RTOL = 1e-9


@dataclass(frozen=True)
class Benchmark:
    name: str
    config: type
    program: Any
    spec: Any
    sequential: Any


BENCHMARKS: dict[str, Benchmark] = {
    "convection": Benchmark("convection", ConvectionConfig, convection_program, convection_spec, convection_sequential),
    "poisson": Benchmark("poisson", PoissonConfig, poisson_program, poisson_spec, poisson_sequential),
    "heat": Benchmark("heat", HeatConfig, heat_program, heat_spec, heat_sequential),
}


def output_digest(out: Any) -> str:
    """Digest of a root output (an array, or a tuple holding arrays and numbers)."""
    h = hashlib.blake2b(digest_size=16)
    parts = out if isinstance(out, tuple) else (out,)
    for p in parts:
        a = np.ascontiguousarray(np.asarray(p, dtype="<f8"))
        h.update(repr(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


@dataclass
class BenchResult:
    name: str
    n: int
    mode: str
    verdict: str  # "ok", "violation" or "deadlock"
    root_output: Any = None
    reports: dict[str, Report] = field(default_factory=dict)
    detail: Any = None

    @property
    def equivalent(self) -> bool:
        return self.verdict == "ok" and bool(self.reports) and all(r.passed for r in self.reports.values())

    @property
    def digest(self) -> str | None:
        return output_digest(self.root_output) if self.root_output is not None else None

    def to_json(self) -> dict[str, Any]:
        return {
            "benchmark": self.name,
            "n": self.n,
            "mode": self.mode,
            "verdict": self.verdict,
            "equivalent": self.equivalent,
            "root_digest": self.digest,
            "reports": {k: r.to_json() for k, r in self.reports.items()},
            "detail": self.detail,
        }


def compare(name: str, root_output: Any, seq: Any) -> dict[str, Report]:
    if name == "poisson":
        grid, residual, iterations = root_output
        return {
            "grid": equivalence_check(grid, seq.grid, Exact()),
            "residual": equivalence_check([residual], [seq.residual], RelTol(RESIDUAL_RTOL)),
            "iterations": equivalence_check([iterations], [seq.iterations], Exact()),
        }
    return {"solution": equivalence_check(root_output, seq, Exact())}


def run_benchmark(
    name: str,
    cfg: Any,
    n: int,
    mode: str = "sim",
    seed: int = 0,
    monitor: bool = True,
    eager_bytes: int = DEFAULT_EAGER_BYTES,
    sequential: Any = None,
    spec: Any = None,
) -> BenchResult:
    """Run ``name`` with ``n`` ranks and check it against the sequential solver.

    ``sequential`` and ``spec`` may be passed in to reuse them across runs.
    """
    bench = BENCHMARKS[name]
    cfg.validate(n)
    spec = spec or bench.spec(cfg)
    program = bench.program(cfg)
    if mode == "sim":
        system = RuntimeSystem(program, spec, n)
        _, verdict = run_system_schedule(system, seed, monitor=monitor)
        if not isinstance(verdict, Ok):
            return BenchResult(name, n, mode, verdict.kind, detail=verdict.to_json())
        root = system.result(verdict.terminals[0], 0)
    elif mode == "workers":
        outcome = run_workers(program, spec, n, eager_bytes=eager_bytes)
        if outcome.violations:
            return BenchResult(name, n, mode, "violation", detail=[v.to_json() for v in outcome.violations])
        if outcome.deadlock:
            return BenchResult(name, n, mode, "deadlock", detail=outcome.deadlock)
        root = outcome.results[0]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    seq = sequential if sequential is not None else bench.sequential(cfg)
    return BenchResult(name, n, mode, "ok", root, compare(name, root, seq))


def explore_benchmark(name: str, cfg: Any, n: int, bounds: ExploreBounds | None = None, monitor: bool = True):
    """Exhaustive exploration of a benchmark's runtime model."""
    bench = BENCHMARKS[name]
    cfg.validate(n)
    system = RuntimeSystem(bench.program(cfg), bench.spec(cfg), n)
    return system, explore_system(system, bounds, monitor=monitor)
