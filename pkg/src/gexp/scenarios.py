"""Monte Carlo scenario engine: the dual side of the G-expectation.

Each volatility control ``sigma_t in [s_lo, s_hi]`` induces one classical
law for ``B``; maximizing a classical expectation over a finite family of
controls gives a lower bound for the G-expectation, and maximizing an
event frequency gives a lower bound for the capacity.

Paths are generated with an Euler scheme on a uniform time grid.  Path
``i`` draws its normals from its own stream ``SeedSequence(seed,
spawn_key=(i,))``, so an ensemble does not depend on block size, worker
count, or on which policy is being simulated (policies share draws).

Quadratic variation is accumulated as integer step counts per volatility
level, ``qv = sum_l var_l * (count_l * T / n_steps)``.  A constant control
therefore yields ``qv(T) == sigma**2 * T`` exactly, without summation drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Sequence, Union

import numpy as np

from ._parallel import ordered_map
from .cylinder import CylinderFunctional
from .errors import DimensionError, PolicyError, PreconditionError
from .gheat import DEFAULT_CFL, GridSpec, VolatilityBand, auto_grid, g_expectation_terminal
from .payoff import Binary, Const, EventPredicate, Extremum, PayoffExpr, Var, eval_payoff_batch, parse_event, parse_payoff

__all__ = [
    "ControlPolicy",
    "PathEnsemble",
    "MCConfig",
    "TerminalFunctional",
    "LowerBound",
    "simulate",
    "simulate_family",
    "lower_bound_expectation",
    "best_mean",
    "capacity_lower_bound",
    "event_frequency",
    "capacity_complement_upper",
    "mollified_indicator",
    "extreme_policies",
]

BLOCK = 1024
CI_LEVEL = 0.99


@dataclass(frozen=True)
class ControlPolicy:
    """Volatility control.

    kinds:
      ``constant``  -- ``sigmas=(s,)``
      ``piecewise`` -- ``sigmas[k]`` on ``[breakpoints[k-1], breakpoints[k])``
      ``bangbang``  -- ``s_hi`` where ``predicate(t, B_t)`` holds (``x1=t``,
                       ``x2=B_t``), ``s_lo`` elsewhere
    """

    kind: str
    sigmas: tuple[float, ...] = ()
    breakpoints: tuple[float, ...] = ()
    predicate: EventPredicate | None = None
    name: str | None = None

    def __post_init__(self):
        if self.kind not in ("constant", "piecewise", "bangbang"):
            raise PreconditionError(f"unknown policy kind {self.kind!r}")
        if self.kind == "constant" and len(self.sigmas) != 1:
            raise PreconditionError("constant policy needs exactly one sigma")
        if self.kind == "piecewise":
            if len(self.sigmas) != len(self.breakpoints) + 1:
                raise PreconditionError("piecewise policy needs len(sigmas) == len(breakpoints) + 1")
            if any(b <= a for a, b in zip(self.breakpoints, self.breakpoints[1:])):
                raise PreconditionError("breakpoints must be strictly increasing")
        if self.kind == "bangbang":
            if self.predicate is None:
                raise PreconditionError("bang-bang policy needs a predicate")
            if self.predicate.arity > 2:
                raise DimensionError("bang-bang predicate may only use x1 (time) and x2 (B_t)")

    @classmethod
    def constant(cls, sigma: float) -> "ControlPolicy":
        return cls("constant", (float(sigma),))

    @classmethod
    def piecewise(cls, breakpoints: Sequence[float], sigmas: Sequence[float]) -> "ControlPolicy":
        return cls("piecewise", tuple(float(s) for s in sigmas), tuple(float(b) for b in breakpoints))

    @classmethod
    def bangbang(cls, predicate: EventPredicate | str) -> "ControlPolicy":
        if isinstance(predicate, str):
            predicate = parse_event(predicate)
        return cls("bangbang", predicate=predicate)

    def levels(self, band: VolatilityBand) -> tuple[float, ...]:
        if self.kind == "bangbang":
            return (band.sigma_low, band.sigma_high)
        return self.sigmas

    def level_index(self, t: float, b: np.ndarray) -> np.ndarray | int:
        """Index into :meth:`levels` for each path at time ``t``."""
        if self.kind == "constant":
            return 0
        if self.kind == "piecewise":
            return int(np.searchsorted(self.breakpoints, t, side="right"))
        pts = np.empty((b.shape[0], 2))
        pts[:, 0] = t
        pts[:, 1] = b
        return self.predicate.evaluate_batch(pts).astype(np.intp)

    def check(self, band: VolatilityBand) -> None:
        if self.kind == "bangbang":
            return
        starts = (0.0,) + self.breakpoints
        for s, t in zip(self.sigmas, starts):
            if not band.sigma_low <= s <= band.sigma_high:
                raise PolicyError(s, 0, t)

    def describe(self) -> str:
        if self.name:
            return self.name
        if self.kind == "constant":
            return f"constant({self.sigmas[0]!r})"
        if self.kind == "piecewise":
            return f"piecewise({list(self.breakpoints)!r}, {list(self.sigmas)!r})"
        return f"bangbang({self.predicate})"

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.kind == "constant":
            d["sigma"] = self.sigmas[0]
        elif self.kind == "piecewise":
            d["breakpoints"] = list(self.breakpoints)
            d["sigmas"] = list(self.sigmas)
        else:
            d["predicate"] = str(self.predicate)
        if self.name:
            d["name"] = self.name
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ControlPolicy":
        kind = d.get("kind")
        name = d.get("name")
        if kind == "constant":
            p = cls.constant(d["sigma"])
        elif kind == "piecewise":
            p = cls.piecewise(d["breakpoints"], d["sigmas"])
        elif kind == "bangbang":
            p = cls.bangbang(d["predicate"])
        else:
            raise PreconditionError(f"unknown policy kind {kind!r}")
        return p if name is None else ControlPolicy(p.kind, p.sigmas, p.breakpoints, p.predicate, name)


def extreme_policies(band: VolatilityBand) -> list[ControlPolicy]:
    """The two constant controls at the ends of the band."""
    return [ControlPolicy.constant(band.sigma_low), ControlPolicy.constant(band.sigma_high)]


@dataclass(frozen=True)
class MCConfig:
    n_paths: int
    seed: int
    n_steps: int = 1000

    def __post_init__(self):
        if self.n_paths < 1 or self.n_steps < 1:
            raise PreconditionError("n_paths and n_steps must be >= 1")
        if int(self.seed) != self.seed or self.seed < 0:
            raise PreconditionError(f"seed must be a non-negative integer, got {self.seed!r}")

    def to_dict(self) -> dict:
        return {"n_paths": self.n_paths, "n_steps": self.n_steps, "seed": self.seed}


@dataclass
class PathEnsemble:
    policy: ControlPolicy
    band: VolatilityBand
    horizon: float
    n_paths: int
    n_steps: int
    seed: int
    terminal_b: np.ndarray
    terminal_qv: np.ndarray
    record_times: tuple[float, ...] = ()
    recorded_b: np.ndarray | None = None  # (n_paths, len(record_times))
    paths_b: np.ndarray | None = None  # (n_paths, n_steps + 1) when kept
    paths_qv: np.ndarray | None = None

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    def state(self) -> np.ndarray:
        """Terminal state columns ``(B_T, qv_T)``."""
        return np.column_stack([self.terminal_b, self.terminal_qv])

    def increments(self) -> np.ndarray:
        if self.recorded_b is None:
            raise PreconditionError("ensemble was simulated without record times")
        prev = np.zeros((self.n_paths, 1))
        return np.diff(np.hstack([prev, self.recorded_b]), axis=1)

    def summary_rows(self):
        for i in range(self.n_paths):
            yield i, float(self.terminal_b[i]), float(self.terminal_qv[i])


def _path_normals(seed: int, start: int, stop: int, n_steps: int) -> np.ndarray:
    out = np.empty((stop - start, n_steps))
    for row, i in enumerate(range(start, stop)):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(i,))))
        out[row] = rng.standard_normal(n_steps)
    return out


def _step_index(t: float, horizon: float, n_steps: int) -> int:
    j = round(t / horizon * n_steps)
    if not 0 <= j <= n_steps or abs(j * horizon / n_steps - t) > 1e-9 * max(1.0, horizon):
        raise PreconditionError(f"record time {t!r} is not on the simulation grid (T={horizon}, n_steps={n_steps})")
    return j


def _march_block(policy, band, xi, horizon, record_steps, keep_paths):
    n_rows, n_steps = xi.shape
    dt = horizon / n_steps
    sqdt = math.sqrt(dt)
    levels = np.asarray(policy.levels(band))
    variances = levels * levels
    b = np.zeros(n_rows)
    counts = np.zeros((n_rows, len(levels)), dtype=np.int64)
    rec = np.empty((n_rows, len(record_steps)))
    for r, j in enumerate(record_steps):
        if j == 0:
            rec[:, r] = 0.0
    paths_b = paths_qv = None
    if keep_paths:
        paths_b = np.zeros((n_rows, n_steps + 1))
        paths_qv = np.zeros((n_rows, n_steps + 1))
    for j in range(n_steps):
        idx = policy.level_index(j * dt, b)
        b = b + levels[idx] * sqdt * xi[:, j]
        if np.ndim(idx) == 0:
            counts[:, idx] += 1
        else:
            counts[np.arange(n_rows), idx] += 1
        for r, s in enumerate(record_steps):
            if s == j + 1:
                rec[:, r] = b
        if keep_paths:
            paths_b[:, j + 1] = b
            paths_qv[:, j + 1] = _qv(counts, variances, horizon, n_steps, band, j + 1)
    return b, _qv(counts, variances, horizon, n_steps, band, n_steps), rec, paths_b, paths_qv


def _qv(counts, variances, horizon, n_steps, band, j):
    qv = np.zeros(counts.shape[0])
    for l, v in enumerate(variances):
        c = counts[:, l]
        qv += v * np.where(c == n_steps, horizon, c * horizon / n_steps)
    t = horizon if j == n_steps else j * horizon / n_steps
    # clip only absorbs last-ulp rounding when several levels are mixed
    return np.clip(qv, band.var_low * t, band.var_high * t)


def simulate_family(
    policies: Sequence[ControlPolicy],
    band: VolatilityBand,
    horizon: float,
    mc: MCConfig,
    record_times: Sequence[float] = (),
    keep_paths: bool = False,
    workers: int | None = None,
) -> list[PathEnsemble]:
    """Simulate several policies on common random numbers."""
    if not policies:
        raise PreconditionError("policy family is empty")
    if not horizon > 0:
        raise PreconditionError(f"horizon must be positive, got {horizon}")
    for p in policies:
        p.check(band)
    record_times = tuple(float(t) for t in record_times)
    record_steps = [_step_index(t, horizon, mc.n_steps) for t in record_times]
    starts = list(range(0, mc.n_paths, BLOCK))

    def run_block(start):
        stop = min(start + BLOCK, mc.n_paths)
        xi = _path_normals(mc.seed, start, stop, mc.n_steps)
        return [_march_block(p, band, xi, horizon, record_steps, keep_paths) for p in policies]

    blocks = ordered_map(run_block, starts, workers)
    out = []
    for k, p in enumerate(policies):
        parts = [blk[k] for blk in blocks]
        out.append(PathEnsemble(
            policy=p,
            band=band,
            horizon=float(horizon),
            n_paths=mc.n_paths,
            n_steps=mc.n_steps,
            seed=mc.seed,
            terminal_b=np.concatenate([q[0] for q in parts]),
            terminal_qv=np.concatenate([q[1] for q in parts]),
            record_times=record_times,
            recorded_b=np.concatenate([q[2] for q in parts]) if record_times else None,
            paths_b=np.concatenate([q[3] for q in parts]) if keep_paths else None,
            paths_qv=np.concatenate([q[4] for q in parts]) if keep_paths else None,
        ))
    return out


def simulate(
    policy: ControlPolicy,
    band: VolatilityBand,
    horizon: float,
    n_paths: int,
    n_steps: int = 1000,
    seed: int = 0,
    record_times: Sequence[float] = (),
    keep_paths: bool = False,
    workers: int | None = None,
) -> PathEnsemble:
    return simulate_family([policy], band, horizon, MCConfig(n_paths, seed, n_steps), record_times, keep_paths, workers)[0]


@dataclass(frozen=True)
class TerminalFunctional:
    """Payoff of the terminal state: ``x1 = B_T``, ``x2 = <B>_T``."""

    horizon: float
    payoff: PayoffExpr

    def __post_init__(self):
        if self.payoff.arity > 2:
            raise DimensionError("terminal functionals may only use x1 (B_T) and x2 (<B>_T)")

    @classmethod
    def parse(cls, horizon: float, src: str) -> "TerminalFunctional":
        return cls(float(horizon), parse_payoff(src))


Functional = Union[CylinderFunctional, TerminalFunctional]


@dataclass
class LowerBound:
    value: float
    ci_halfwidth: float
    policy: ControlPolicy
    means: list[float] = field(default_factory=list)
    halfwidths: list[float] = field(default_factory=list)


def _mean_ci(samples: np.ndarray) -> tuple[float, float]:
    n = samples.shape[0]
    mean = math.fsum(samples) / n
    if n < 2:
        return mean, math.inf
    var = math.fsum((samples - mean) ** 2) / (n - 1)
    z = NormalDist().inv_cdf(0.5 + CI_LEVEL / 2)
    return mean, z * math.sqrt(var / n)


def _samples(f: Functional, ens: PathEnsemble) -> np.ndarray:
    if isinstance(f, CylinderFunctional):
        return eval_payoff_batch(f.payoff, ens.increments())
    return eval_payoff_batch(f.payoff.with_arity(2), ens.state())


def lower_bound_expectation(
    f: Functional,
    band: VolatilityBand,
    policies: Sequence[ControlPolicy],
    mc: MCConfig,
    workers: int | None = None,
) -> LowerBound:
    """Best Monte Carlo mean over ``policies``, with its 99% CI half-width."""
    if isinstance(f, CylinderFunctional):
        horizon, record = f.times[-1], f.times
    else:
        horizon, record = f.horizon, ()
    return best_mean(f, simulate_family(policies, band, horizon, mc, record, workers=workers))


def best_mean(f: Functional, ensembles: Sequence[PathEnsemble]) -> LowerBound:
    """Maximize the Monte Carlo mean of ``f`` over already simulated ensembles."""
    stats = [_mean_ci(_samples(f, e)) for e in ensembles]
    best = max(range(len(stats)), key=lambda k: stats[k][0])
    return LowerBound(
        value=stats[best][0],
        ci_halfwidth=stats[best][1],
        policy=ensembles[best].policy,
        means=[s[0] for s in stats],
        halfwidths=[s[1] for s in stats],
    )


def event_frequency(event: EventPredicate, ens: PathEnsemble) -> float:
    """Empirical probability of an event of the terminal state (``x1=B_T``, ``x2=<B>_T``)."""
    if event.arity > 2:
        raise DimensionError("events may only use x1 (B_T) and x2 (<B>_T)")
    hits = event.evaluate_batch(ens.state())
    return int(np.count_nonzero(hits)) / ens.n_paths


def capacity_lower_bound(
    event: EventPredicate,
    band: VolatilityBand,
    policies: Sequence[ControlPolicy],
    horizon: float,
    mc: MCConfig,
    workers: int | None = None,
) -> float:
    """Largest empirical event frequency over ``policies``."""
    ensembles = simulate_family(policies, band, horizon, mc, workers=workers)
    return max(event_frequency(event, e) for e in ensembles)


def mollified_indicator(a: float, b: float, epsilon: float) -> PayoffExpr:
    """Piecewise-linear ``g <= 1_[a,b]``: one on ``[a+eps, b-eps]``, zero outside ``(a, b)``.

    Infinite ends drop the corresponding ramp.
    """
    if not epsilon > 0:
        raise PreconditionError(f"epsilon must be positive, got {epsilon}")
    if not a < b:
        raise PreconditionError(f"need a < b, got ({a}, {b})")
    if b - a <= 2 * epsilon:
        raise PreconditionError(f"b - a = {b - a} leaves no support after mollification with epsilon={epsilon}")
    slope = Const(1.0 / epsilon)
    x = Var(1)
    terms = [Const(1.0)]
    if math.isfinite(a):
        terms.append(Binary("*", Binary("-", x, Const(float(a))), slope))
    if math.isfinite(b):
        terms.append(Binary("*", Binary("-", Const(float(b)), x), slope))
    ramp = Extremum("min", tuple(terms)) if len(terms) > 1 else terms[0]
    return PayoffExpr(Extremum("max", (Const(0.0), ramp)), 1)


def capacity_complement_upper(
    a: float,
    b: float,
    t: float,
    band: VolatilityBand,
    epsilon: float,
    grid: GridSpec | None = None,
) -> float:
    """PDE lower bound for ``inf_P P(a <= B_t <= b)``.

    Computed as ``-E[-g(B_t)]`` with ``g`` the mollified sub-indicator; the
    default grid resolves the ramp (``dx <= epsilon``).
    """
    g = mollified_indicator(a, b, epsilon)
    neg = -g
    if grid is None:
        lo = a if math.isfinite(a) else 0.0
        hi = b if math.isfinite(b) else 0.0
        radius = max(1.0, abs(lo), abs(hi))
        grid = auto_grid(neg, band, t, radius=radius)
        width = grid.x_max - grid.x_min
        need = int(math.ceil(width / epsilon)) + 1
        if need > grid.n_space:
            grid = GridSpec(grid.x_min, grid.x_max, need | 1, grid.t_final, DEFAULT_CFL)
    return -g_expectation_terminal(neg, band, t, grid)
