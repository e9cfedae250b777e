"""Explicit monotone finite differences for the G-heat equation.

Solves ``u_t = G(u_xx)`` with ``G(a) = (s_hi^2 a^+ - s_lo^2 a^-) / 2`` on a
truncated interval.  The update is

    u[i] <- u[i] + dt * G((u[i+1] - 2 u[i] + u[i-1]) / dx^2)

applied at interior nodes.  Picking the volatility by the sign of the
discrete second difference is the bang-bang control, and the scheme is
monotone whenever ``s_hi^2 dt <= dx^2``.  Boundary nodes are given a zero
second difference, so they keep their initial values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import CFLError, DimensionError, NonFiniteError, PreconditionError
from .payoff import PayoffExpr, eval_payoff_batch

__all__ = [
    "VolatilityBand",
    "GridSpec",
    "SolutionField",
    "g_function",
    "march",
    "solve_gheat",
    "g_expectation_terminal",
    "payoff_radius",
    "auto_grid",
    "DEFAULT_N_SPACE",
]

DEFAULT_N_SPACE = 401
DEFAULT_CFL = 0.9
TAIL_WIDTHS = 6.0


@dataclass(frozen=True)
class VolatilityBand:
    sigma_low: float
    sigma_high: float

    def __post_init__(self):
        lo, hi = float(self.sigma_low), float(self.sigma_high)
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise PreconditionError(f"volatility band must be finite, got ({lo}, {hi})")
        if not 0.0 <= lo <= hi or hi <= 0.0:
            raise PreconditionError(f"need 0 <= sigma_low <= sigma_high and sigma_high > 0, got ({lo}, {hi})")
        object.__setattr__(self, "sigma_low", lo)
        object.__setattr__(self, "sigma_high", hi)

    @property
    def var_low(self) -> float:
        return self.sigma_low * self.sigma_low

    @property
    def var_high(self) -> float:
        return self.sigma_high * self.sigma_high

    @property
    def degenerate(self) -> bool:
        return self.sigma_low == 0.0

    def contains(self, sigma) -> np.ndarray:
        s = np.asarray(sigma, dtype=float)
        return (s >= self.sigma_low) & (s <= self.sigma_high)

    def to_dict(self) -> dict:
        return {"sigma_low": self.sigma_low, "sigma_high": self.sigma_high}


def g_function(alpha, band: VolatilityBand):
    """``(s_hi^2 max(a, 0) - s_lo^2 max(-a, 0)) / 2``, scalar or elementwise."""
    a = np.asarray(alpha, dtype=float)
    out = 0.5 * (band.var_high * np.maximum(a, 0.0) - band.var_low * np.maximum(-a, 0.0))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class GridSpec:
    """Uniform space grid plus time horizon.

    ``n_time`` optionally fixes the step count over ``t_final``; it is
    checked against the CFL bound rather than adjusted.
    """

    x_min: float
    x_max: float
    n_space: int
    t_final: float
    cfl_safety: float = DEFAULT_CFL
    n_time: int | None = None

    def __post_init__(self):
        if not (math.isfinite(self.x_min) and math.isfinite(self.x_max)) or not self.x_min < self.x_max:
            raise PreconditionError(f"need finite x_min < x_max, got [{self.x_min}, {self.x_max}]")
        if int(self.n_space) != self.n_space or self.n_space < 3:
            raise PreconditionError(f"n_space must be an integer >= 3, got {self.n_space}")
        if not (self.t_final > 0 and math.isfinite(self.t_final)):
            raise PreconditionError(f"t_final must be positive, got {self.t_final}")
        if not 0.0 < self.cfl_safety <= 1.0:
            raise PreconditionError(f"cfl_safety must lie in (0, 1], got {self.cfl_safety}")
        if self.n_time is not None and (int(self.n_time) != self.n_time or self.n_time < 1):
            raise PreconditionError(f"n_time must be a positive integer, got {self.n_time}")
        object.__setattr__(self, "n_space", int(self.n_space))

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n_space - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_space)

    def dt_max(self, band: VolatilityBand) -> float:
        return self.cfl_safety * self.dx**2 / band.var_high

    def steps_for(self, duration: float, band: VolatilityBand) -> tuple[int, float]:
        """Step count and step size covering ``duration`` under the CFL cap."""
        cap = self.dt_max(band)
        if self.n_time is not None:
            target = self.t_final / self.n_time
            if target > cap * (1.0 + 1e-12):
                raise CFLError(
                    f"dt={target!r} exceeds the CFL bound {cap!r} "
                    f"(cfl_safety={self.cfl_safety}, dx={self.dx!r}, sigma_high={band.sigma_high})"
                )
            cap = target
        n = max(1, math.ceil(duration / cap * (1.0 - 1e-12)))
        return n, duration / n

    def refined(self) -> "GridSpec":
        """Same domain with dx halved."""
        return replace(self, n_space=2 * self.n_space - 1, n_time=None if self.n_time is None else 4 * self.n_time)

    def coarsened(self) -> "GridSpec":
        """Same domain with dx doubled (n_space rounded down to keep nodes)."""
        return replace(self, n_space=(self.n_space - 1) // 2 + 1, n_time=None if self.n_time is None else max(1, self.n_time // 4))

    def to_dict(self) -> dict:
        return {
            "x_min": self.x_min,
            "x_max": self.x_max,
            "n_space": self.n_space,
            "t_final": self.t_final,
            "cfl_safety": self.cfl_safety,
            "n_time": self.n_time,
        }


@dataclass(frozen=True)
class SolutionField:
    grid: GridSpec
    times: np.ndarray
    values: np.ndarray  # shape (len(times), n_space)
    steps: tuple[int, ...] = field(default=())  # time steps taken to reach each snapshot

    @property
    def x(self) -> np.ndarray:
        return self.grid.nodes

    def at(self, x: float, index: int = -1) -> float:
        """Linear interpolation of snapshot ``index`` at ``x``."""
        if not self.grid.x_min <= x <= self.grid.x_max:
            raise PreconditionError(f"x={x!r} outside grid [{self.grid.x_min}, {self.grid.x_max}]")
        return float(np.interp(x, self.x, self.values[index]))


def march(u: np.ndarray, band: VolatilityBand, dx: float, dt: float, n_steps: int, t0: float = 0.0, step0: int = 0) -> np.ndarray:
    """Advance ``u`` (last axis = space) by ``n_steps`` explicit steps.

    Leading axes are independent problems sharing one grid.  Returns a new
    array; the input is untouched.
    """
    u = np.array(u, dtype=float, copy=True)
    inv_dx2 = 1.0 / (dx * dx)
    hi = 0.5 * band.var_high * dt
    lo = 0.5 * band.var_low * dt
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_steps):
            d2 = (u[..., 2:] - 2.0 * u[..., 1:-1] + u[..., :-2]) * inv_dx2
            u[..., 1:-1] += hi * np.maximum(d2, 0.0) - lo * np.maximum(-d2, 0.0)
            if not np.isfinite(u).all():
                raise NonFiniteError(step0 + k + 1, t0 + (k + 1) * dt)
    return u


def solve_gheat(
    phi: PayoffExpr,
    band: VolatilityBand,
    grid: GridSpec,
    snapshot_times: Sequence[float] | None = None,
    full_history: bool = False,
) -> SolutionField:
    """March the G-heat equation from ``phi`` up to ``grid.t_final``.

    Snapshots default to ``(0, t_final)``.  With ``full_history`` every
    time step is kept instead.
    """
    if phi.arity > 1:
        raise DimensionError(f"solve_gheat needs a one-variable payoff, got arity {phi.arity}")
    grid.steps_for(grid.t_final, band)  # reject CFL violations before any work

    x = grid.nodes
    u = eval_payoff_batch(phi.with_arity(1), x)
    if not np.isfinite(u).all():
        raise NonFiniteError(0, 0.0)

    if full_history:
        n, dt = grid.steps_for(grid.t_final, band)
        times = [0.0]
        values = [u]
        for k in range(n):
            u = march(u, band, grid.dx, dt, 1, t0=k * dt, step0=k)
            times.append(grid.t_final if k == n - 1 else (k + 1) * dt)
            values.append(u)
        return SolutionField(grid, np.array(times), np.array(values), tuple(range(n + 1)))

    ts = sorted({0.0, float(grid.t_final), *(float(t) for t in (snapshot_times or ()))})
    if ts[0] < 0 or ts[-1] > grid.t_final:
        raise PreconditionError(f"snapshot times must lie in [0, {grid.t_final}]")
    values = [u]
    steps = [0]
    for t_prev, t_next in zip(ts[:-1], ts[1:]):
        n, dt = grid.steps_for(t_next - t_prev, band)
        u = march(u, band, grid.dx, dt, n, t0=t_prev, step0=steps[-1])
        values.append(u)
        steps.append(steps[-1] + n)
    return SolutionField(grid, np.array(ts), np.array(values), tuple(steps))


def payoff_radius(phi: PayoffExpr, axis: int = 0, probe: float = 50.0, n_probe: int = 20001, default: float = 1.0) -> float:
    """Heuristic radius beyond which ``phi`` is affine along ``axis``.

    Looks for kinks/curvature on a probe line through the origin.  When
    curvature reaches the probe edge (polynomials, exp) the payoff has no
    compact "interesting" region and ``default`` is returned.
    """
    xs = np.linspace(-probe, probe, n_probe)
    pts = np.zeros((n_probe, max(phi.arity, axis + 1)))
    pts[:, axis] = xs
    with np.errstate(all="ignore"):
        v = eval_payoff_batch(phi, pts)
    if not np.isfinite(v).all():
        return default
    d2 = v[2:] - 2.0 * v[1:-1] + v[:-2]
    scale = max(1.0, float(np.max(np.abs(v))))
    curved = np.abs(d2) > 1e-9 * scale
    if not curved.any():
        return default
    where = np.abs(xs[1:-1][curved])
    r = float(where.max())
    if r >= probe * 0.99:
        return default
    step = xs[1] - xs[0]
    return max(default, r + step)


def auto_grid(
    phi: PayoffExpr,
    band: VolatilityBand,
    t: float,
    radius: float | None = None,
    n_space: int = DEFAULT_N_SPACE,
    cfl_safety: float = DEFAULT_CFL,
    axis: int = 0,
) -> GridSpec:
    """Symmetric grid of half-width ``6 s_hi sqrt(t) + radius``.

    ``n_space`` is forced odd so the origin is a node.
    """
    if radius is None:
        radius = payoff_radius(phi, axis=axis)
    half = TAIL_WIDTHS * band.sigma_high * math.sqrt(t) + radius
    n = int(n_space) | 1
    return GridSpec(-half, half, n, float(t), cfl_safety)


def g_expectation_terminal(
    phi: PayoffExpr,
    band: VolatilityBand,
    t: float,
    grid: GridSpec | None = None,
    radius: float | None = None,
) -> float:
    """``E[phi(B_t)]`` under the G-expectation, read off as ``u(t, 0)``."""
    if grid is None:
        grid = auto_grid(phi, band, t, radius)
    elif grid.t_final != t:
        grid = replace(grid, t_final=float(t))
    return solve_gheat(phi, band, grid).at(0.0)
