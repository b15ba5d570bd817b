"""Comparison of a parallel result against its sequential reference."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from ..arrays import ShapeMismatch


@dataclass(frozen=True)
class Exact:
    """Bitwise equality of every element."""

    def __str__(self) -> str:
        return "Exact"


@dataclass(frozen=True)
class RelTol:
    eps: float

    def __str__(self) -> str:
        return f"RelTol({self.eps:g})"


Mode = Exact | RelTol


@dataclass(frozen=True)
class Report:
    mode: str
    passed: bool
    max_abs_deviation: float
    max_rel_deviation: float
    first_mismatch: tuple[int, ...] | None
    n_elements: int

    def to_json(self) -> dict[str, Any]:
        return {
            "mode": self.mode,
            "passed": self.passed,
            "max_abs_deviation": self.max_abs_deviation,
            "max_rel_deviation": self.max_rel_deviation,
            "first_mismatch": list(self.first_mismatch) if self.first_mismatch is not None else None,
            "n_elements": self.n_elements,
        }


def equivalence_check(parallel_out, sequential_out, mode: Mode = Exact()) -> Report:
    par = np.asarray(parallel_out, dtype=np.float64)
    seq = np.asarray(sequential_out, dtype=np.float64)
    if par.shape != seq.shape:
        raise ShapeMismatch(f"parallel shape {par.shape} != sequential shape {seq.shape}")
    diff = np.abs(par - seq)
    scale = np.abs(seq)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(diff == 0, 0.0, diff / np.where(scale == 0, 1.0, scale))
    max_abs = float(diff.max()) if diff.size else 0.0
    max_rel = float(rel.max()) if rel.size else 0.0
    if isinstance(mode, Exact):
        # compare bit patterns so that -0.0 vs 0.0 and NaN payloads count too
        bad = par.view(np.uint64) != seq.view(np.uint64)
    else:
        bad = ~(rel <= mode.eps)
    idx = np.argwhere(bad)
    first = tuple(int(i) for i in idx[0]) if len(idx) else None
    return Report(str(mode), first is None, max_abs, max_rel, first, int(par.size))
