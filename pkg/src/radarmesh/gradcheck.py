"""Finite-difference verification of reverse-mode gradients.

The checker replays the graph-building function in float64 (the ops follow
their input dtype) and compares the autodiff gradient of a scalar output
against central differences, entry by entry. Large parameter arrays are
probed on a deterministic random subset of entries; small ones exhaustively.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Array, backward

DEFAULT_H = 1e-4
DEFAULT_RTOL = 1e-4
EXHAUSTIVE_LIMIT = 64


@dataclass
class GradCheckResult:
    name: str
    max_rel_err: float
    worst_entry: tuple
    checked: int

    @property
    def ok(self) -> bool:
        return self.max_rel_err < DEFAULT_RTOL


def _rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-12)


def check_gradients(build, leaves: dict[str, np.ndarray], *, h: float = DEFAULT_H,
                    entries_per_array: int = 4, seed: int = 0,
                    wrt: list[str] | None = None) -> list[GradCheckResult]:
    """Compare autodiff and central-difference gradients of ``build``.

    ``build`` maps a dict of named :class:`Array` leaves to a scalar Array.
    Both sides run in float64 so the comparison isolates the calculus from
    float32 rounding. Returns one result per checked leaf.
    """
    rng = np.random.default_rng(seed)
    base = {k: v.astype(np.float64) for k, v in leaves.items()}
    names = wrt if wrt is not None else sorted(base)

    arrays = {k: Array(v.copy(), requires_grad=(k in names)) for k, v in base.items()}
    loss = build(arrays)
    backward(loss)

    results = []
    for name in names:
        auto = arrays[name].grad
        if auto is None:
            auto = np.zeros_like(base[name])
        flat = base[name].reshape(-1)
        if flat.size <= EXHAUSTIVE_LIMIT:
            picks = np.arange(flat.size)
        else:
            picks = rng.choice(flat.size, size=min(entries_per_array, flat.size), replace=False)
        worst = (name, -1)
        max_err = 0.0
        for idx in picks:
            fd = _central_diff(build, base, name, int(idx), h)
            err = _rel_err(float(auto.reshape(-1)[idx]), fd)
            if err > max_err:
                max_err = err
                worst = (name, int(idx))
        results.append(GradCheckResult(name, max_err, worst, len(picks)))
    return results


def _central_diff(build, base: dict[str, np.ndarray], name: str, idx: int, h: float) -> float:
    vals = []
    for delta in (h, -h):
        probe = {k: (v.copy() if k == name else v) for k, v in base.items()}
        probe[name].reshape(-1)[idx] += delta
        arrays = {k: Array(v, requires_grad=False) for k, v in probe.items()}
        vals.append(float(build(arrays).data.reshape(-1)[0]))
    return (vals[0] - vals[1]) / (2.0 * h)


def max_rel_err(results: list[GradCheckResult]) -> float:
    return max((r.max_rel_err for r in results), default=0.0)
