"""G-expectation of cylinder functionals by backward recursion.

For ``X = phi(B_t1, B_t2 - B_t1, ..., B_tn - B_t(n-1))`` the value is built
from the innermost increment outwards: the payoff is tabulated on a
tensor grid, and each recursion step runs one batched 1-D G-heat solve
along the last axis over the increment's duration and reads the result at
the origin.  Because the tabulation axis of increment k is also the solve
grid for increment k, no interpolation between prefix nodes is needed
unless the origin falls between nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from ._parallel import ordered_map
from .errors import DimensionError, OrderViolationError, PreconditionError
from .gheat import DEFAULT_CFL, TAIL_WIDTHS, GridSpec, VolatilityBand, march, payoff_radius
from .payoff import PayoffExpr, eval_payoff_batch, parse_payoff

__all__ = [
    "CylinderFunctional",
    "PrefixGrid",
    "MAX_INCREMENTS",
    "evaluate_cylinder",
    "evaluate_pair",
    "tabulate",
]

MAX_INCREMENTS = 3
DEFAULT_PREFIX_N = {1: 401, 2: 201, 3: 81}
CHUNK_ROWS = 64


@dataclass(frozen=True)
class CylinderFunctional:
    """``payoff(x1..xn)`` with ``xk`` bound to ``B_tk - B_t(k-1)``.

    A payoff that ignores trailing increments may be given with a smaller
    arity; it is widened to ``n``.
    """

    times: tuple[float, ...]
    payoff: PayoffExpr

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        if not times:
            raise PreconditionError("a cylinder functional needs at least one time")
        if times[0] <= 0 or any(b <= a for a, b in zip(times, times[1:])):
            raise PreconditionError(f"times must be positive and strictly increasing, got {times}")
        if not all(math.isfinite(t) for t in times):
            raise PreconditionError(f"times must be finite, got {times}")
        if self.payoff.arity > len(times):
            raise DimensionError(f"payoff uses x{self.payoff.arity} but only {len(times)} increments are defined")
        object.__setattr__(self, "times", times)
        if self.payoff.arity < len(times):
            object.__setattr__(self, "payoff", self.payoff.with_arity(len(times)))

    @classmethod
    def parse(cls, times: Sequence[float], src: str) -> "CylinderFunctional":
        return cls(tuple(times), parse_payoff(src))

    @property
    def n(self) -> int:
        return len(self.times)

    @property
    def increments(self) -> tuple[float, ...]:
        return tuple(b - a for a, b in zip((0.0,) + self.times[:-1], self.times))

    def with_payoff(self, payoff: PayoffExpr) -> "CylinderFunctional":
        return CylinderFunctional(self.times, payoff)


@dataclass(frozen=True)
class PrefixGrid:
    """One solve/tabulation grid per increment; ``axes[k].t_final`` is that increment's duration."""

    axes: tuple[GridSpec, ...]

    @classmethod
    def auto(
        cls,
        f: CylinderFunctional,
        band: VolatilityBand,
        n_space: int | None = None,
        radius: float | None = None,
        cfl_safety: float = DEFAULT_CFL,
        extra: Sequence[PayoffExpr] = (),
    ) -> "PrefixGrid":
        if f.n > MAX_INCREMENTS:
            raise PreconditionError(f"at most {MAX_INCREMENTS} increments are supported, got {f.n}")
        m = int(n_space or DEFAULT_PREFIX_N[f.n]) | 1
        axes = []
        for k, dt in enumerate(f.increments):
            if radius is None:
                r = max(payoff_radius(p, axis=k) for p in (f.payoff, *extra))
            else:
                r = radius
            half = TAIL_WIDTHS * band.sigma_high * math.sqrt(dt) + r
            axes.append(GridSpec(-half, half, m, dt, cfl_safety))
        return cls(tuple(axes))

    def for_functional(self, f: CylinderFunctional) -> "PrefixGrid":
        if len(self.axes) != f.n:
            raise DimensionError(f"grid has {len(self.axes)} axes, functional has {f.n} increments")
        return PrefixGrid(tuple(
            ax if ax.t_final == dt else replace(ax, t_final=dt) for ax, dt in zip(self.axes, f.increments)
        ))

    def widened(self, band: VolatilityBand) -> "PrefixGrid":
        """Extend any axis that does not cover the origin, keeping its spacing."""
        axes = []
        for ax in self.axes:
            if ax.x_min <= 0.0 <= ax.x_max:
                axes.append(ax)
                continue
            half = TAIL_WIDTHS * band.sigma_high * math.sqrt(ax.t_final) + 1.0
            lo, hi = min(ax.x_min, -half), max(ax.x_max, half)
            n = max(ax.n_space, int(math.ceil((hi - lo) / ax.dx)) + 1)
            axes.append(replace(ax, x_min=lo, x_max=hi, n_space=n))
        return PrefixGrid(tuple(axes))

    def refined(self) -> "PrefixGrid":
        return PrefixGrid(tuple(ax.refined() for ax in self.axes))

    def coarsened(self) -> "PrefixGrid":
        return PrefixGrid(tuple(ax.coarsened() for ax in self.axes))

    def mesh_points(self) -> np.ndarray:
        nodes = [ax.nodes for ax in self.axes]
        mesh = np.meshgrid(*nodes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(ax.n_space for ax in self.axes)

    def to_dict(self) -> dict:
        return {"axes": [ax.to_dict() for ax in self.axes]}


def tabulate(payoff: PayoffExpr, grid: PrefixGrid) -> np.ndarray:
    """Payoff values on the tensor grid, shaped ``grid.shape``."""
    return eval_payoff_batch(payoff, grid.mesh_points()).reshape(grid.shape)


def _origin_weights(ax: GridSpec) -> tuple[int, float]:
    if not ax.x_min <= 0.0 <= ax.x_max:
        raise PreconditionError(f"origin outside prefix axis [{ax.x_min}, {ax.x_max}]")
    x = ax.nodes
    j = int(np.searchsorted(x, 0.0, side="right")) - 1
    j = min(max(j, 0), ax.n_space - 2)
    w = (0.0 - x[j]) / (x[j + 1] - x[j])
    return j, float(w)


def _contract_last_axis(values: np.ndarray, ax: GridSpec, band: VolatilityBand, workers: int | None) -> np.ndarray:
    lead = values.shape[:-1]
    rows = values.reshape(-1, values.shape[-1])
    n_steps, dt = ax.steps_for(ax.t_final, band)
    chunks = [rows[i:i + CHUNK_ROWS] for i in range(0, rows.shape[0], CHUNK_ROWS)]
    solved = np.concatenate(ordered_map(lambda c: march(c, band, ax.dx, dt, n_steps), chunks, workers))
    j, w = _origin_weights(ax)
    if w == 0.0:
        out = solved[:, j]
    else:
        out = (1.0 - w) * solved[:, j] + w * solved[:, j + 1]
    return out.reshape(lead)


def _recurse(values: np.ndarray, grid: PrefixGrid, band: VolatilityBand, workers: int | None) -> float:
    for ax in reversed(grid.axes):
        values = _contract_last_axis(values, ax, band, workers)
    return float(values)


def _prepare(f: CylinderFunctional, band: VolatilityBand, grid: PrefixGrid | None) -> PrefixGrid:
    if f.n > MAX_INCREMENTS:
        raise PreconditionError(f"at most {MAX_INCREMENTS} increments are supported, got {f.n}")
    if grid is None:
        return PrefixGrid.auto(f, band)
    grid = grid.for_functional(f).widened(band)
    for ax in grid.axes:
        ax.steps_for(ax.t_final, band)  # CFL check up front
    return grid


def evaluate_cylinder(
    f: CylinderFunctional,
    band: VolatilityBand,
    grid: PrefixGrid | None = None,
    workers: int | None = None,
) -> float:
    """G-expectation of a cylinder functional of at most three increments."""
    grid = _prepare(f, band, grid)
    return _recurse(tabulate(f.payoff, grid), grid, band, workers)


def evaluate_pair(
    f_lo: CylinderFunctional,
    f_hi: CylinderFunctional,
    band: VolatilityBand,
    grid: PrefixGrid | None = None,
    workers: int | None = None,
) -> tuple[float, float]:
    """Evaluate two ordered functionals on one shared discretization.

    Raises :class:`OrderViolationError` if ``f_lo > f_hi`` at any tensor node.
    """
    if f_lo.times != f_hi.times:
        raise PreconditionError(f"time partitions differ: {f_lo.times} vs {f_hi.times}")
    if grid is None:
        grid = PrefixGrid.auto(f_lo, band, extra=(f_hi.payoff,))
    grid = _prepare(f_lo, band, grid)
    lo = tabulate(f_lo.payoff, grid)
    hi = tabulate(f_hi.payoff, grid)
    bad = lo > hi
    if bad.any():
        idx = np.unravel_index(int(np.argmax(bad)), grid.shape)
        node = tuple(float(ax.nodes[i]) for ax, i in zip(grid.axes, idx))
        raise OrderViolationError(node, float(lo[idx]), float(hi[idx]))
    return _recurse(lo, grid, band, workers), _recurse(hi, grid, band, workers)
