"""Strict comparison checks for G-expectations.

Wraps the PDE and scenario engines into verdicts:

* ``check_strict``: is ``E[X] < E[Y]`` for ordered cylinder payoffs, and is
  there a grid node where the payoffs differ?  Both directions of the
  equivalence are visible at grid resolution.
* ``check_negativity``: the single-time special case against zero.
* ``check_mean_certainty``: does ``E[X] == -E[-X]``?
* ``run_qv_counterexample``: quadratic variation below its ceiling with
  capacity one, yet no strict gap in expectation.

With ``sigma_low == 0`` the strict guarantee genuinely fails (e.g.
``min(x, 0)`` is a fixed point of the degenerate equation), so verdicts are
still computed but flagged as downgraded.  The degenerate case is the
vanishing *lower* volatility; ``sigma_high = 0`` is rejected by
:class:`~gexp.gheat.VolatilityBand` outright.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from ._parallel import ordered_map
from .cylinder import CylinderFunctional, PrefixGrid, evaluate_cylinder, evaluate_pair, tabulate
from .errors import DimensionError, OrderViolationError, PreconditionError
from .gheat import GridSpec, VolatilityBand
from .payoff import Const, EventPredicate, PayoffExpr, Var
from .scenarios import ControlPolicy, LowerBound, MCConfig, TerminalFunctional, best_mean, event_frequency, simulate_family

__all__ = [
    "Verdict",
    "ComparisonVerdict",
    "StrictComparison",
    "MeanCertainty",
    "QVCounterexample",
    "DegenerateBandWarning",
    "classify",
    "scheme_error",
    "check_strict",
    "check_negativity",
    "check_mean_certainty",
    "run_qv_counterexample",
    "MIN_TOLERANCE",
]

MIN_TOLERANCE = 1e-4


class DegenerateBandWarning(UserWarning):
    """sigma_low == 0: strict comparison is not guaranteed."""


class Verdict(str, enum.Enum):
    STRICT_LESS = "StrictLess"
    EQUAL_WITHIN_TOL = "EqualWithinTol"
    ORDER_VIOLATION = "OrderViolation"


@dataclass(frozen=True)
class ComparisonVerdict:
    value_lo: float
    value_hi: float
    gap: float
    tolerance: float
    verdict: Verdict

    def to_dict(self) -> dict:
        return {
            "value_lo": self.value_lo,
            "value_hi": self.value_hi,
            "gap": self.gap,
            "tolerance": self.tolerance,
            "verdict": self.verdict.value,
        }


def classify(value_lo: float, value_hi: float, tolerance: float) -> ComparisonVerdict:
    gap = value_hi - value_lo
    if gap > tolerance:
        v = Verdict.STRICT_LESS
    elif gap < -tolerance:
        v = Verdict.ORDER_VIOLATION
    else:
        v = Verdict.EQUAL_WITHIN_TOL
    return ComparisonVerdict(value_lo, value_hi, gap, tolerance, v)


@dataclass(frozen=True)
class StrictComparison:
    verdict: ComparisonVerdict
    witness: tuple[float, ...] | None  # grid node where the payoffs differ by more than the tolerance
    witness_gap: float
    downgraded: bool  # sigma_low == 0: strictness is reported, not guaranteed
    error_estimate: float
    grid: PrefixGrid

    @property
    def consistent(self) -> bool:
        """Whether value order and grid witness agree (only meaningful when not downgraded)."""
        return (self.witness is not None) == (self.verdict.verdict is Verdict.STRICT_LESS)

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.to_dict(),
            "witness": None if self.witness is None else list(self.witness),
            "witness_gap": self.witness_gap,
            "downgraded": self.downgraded,
            "error_estimate": self.error_estimate,
        }


def _as_prefix(grid: Union[PrefixGrid, GridSpec, None]) -> PrefixGrid | None:
    if isinstance(grid, GridSpec):
        return PrefixGrid((grid,))
    return grid


def scheme_error(f: CylinderFunctional, band: VolatilityBand, grid: PrefixGrid, value: float | None = None, workers=None) -> float:
    """Change in value when dx is doubled: a cheap one-step refinement estimate."""
    if value is None:
        value = evaluate_cylinder(f, band, grid, workers)
    return abs(value - evaluate_cylinder(f, band, grid.coarsened(), workers))


def _warn_degenerate(band: VolatilityBand) -> bool:
    if band.degenerate:
        warnings.warn(
            "sigma_low = 0: strict comparison is not guaranteed; verdict is reported only",
            DegenerateBandWarning,
            stacklevel=3,
        )
        return True
    return False


def check_strict(
    f_lo: CylinderFunctional,
    f_hi: CylinderFunctional,
    band: VolatilityBand,
    grid: Union[PrefixGrid, GridSpec, None] = None,
    tolerance: float | None = None,
    workers: int | None = None,
) -> StrictComparison:
    """Compare ``E[f_lo]`` and ``E[f_hi]`` for payoffs ordered on the grid.

    The default tolerance is ``max(1e-4, 3 * e)`` where ``e`` is the larger
    of the two values' change under one coarsening of the grid.
    """
    downgraded = _warn_degenerate(band)
    grid = _as_prefix(grid)
    if grid is None:
        grid = PrefixGrid.auto(f_lo, band, extra=(f_hi.payoff,))
    lo, hi = evaluate_pair(f_lo, f_hi, band, grid, workers)
    grid = grid.for_functional(f_lo).widened(band)

    if lo == hi and f_lo.payoff == f_hi.payoff:
        err = 0.0
    else:
        err = max(scheme_error(f_lo, band, grid, lo, workers), scheme_error(f_hi, band, grid, hi, workers))
    if tolerance is None:
        tolerance = max(MIN_TOLERANCE, 3.0 * err)

    diff = tabulate(f_hi.payoff, grid) - tabulate(f_lo.payoff, grid)
    k = int(np.argmax(diff))
    best = float(diff.ravel()[k])
    witness = None
    if best > tolerance:
        idx = np.unravel_index(k, grid.shape)
        witness = tuple(float(ax.nodes[i]) for ax, i in zip(grid.axes, idx))
    return StrictComparison(classify(lo, hi, tolerance), witness, best, downgraded, err, grid)


def check_negativity(
    phi: PayoffExpr,
    band: VolatilityBand,
    grid: Union[PrefixGrid, GridSpec, None] = None,
    t: float = 1.0,
    tolerance: float | None = None,
) -> StrictComparison:
    """Is ``E[phi(B_t)] < 0`` for ``phi <= 0`` negative somewhere?

    Order violations (``phi > 0`` at a node) raise; a missing negative
    node or ``sigma_low == 0`` is reported in the result instead.
    """
    if phi.arity > 1:
        raise DimensionError(f"check_negativity needs a one-variable payoff, got arity {phi.arity}")
    f = CylinderFunctional((float(t),), phi)
    zero = CylinderFunctional((float(t),), PayoffExpr(Const(0.0), 1))
    if grid is None:
        grid = PrefixGrid.auto(f, band)
    grid = _as_prefix(grid).for_functional(f).widened(band)
    values = tabulate(f.payoff, grid)
    if (values > 0).any():
        i = int(np.argmax(values))
        raise OrderViolationError((float(grid.axes[0].nodes[i]),), float(values[i]), 0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateBandWarning)
        res = check_strict(f, zero, band, grid, tolerance)
    _warn_degenerate(band)
    # a strictly negative node is the witness here, independent of the tolerance
    i = int(np.argmin(values))
    witness = (float(grid.axes[0].nodes[i]),) if values[i] < 0 else None
    return StrictComparison(res.verdict, witness, float(0.0 - values[i]), res.downgraded, res.error_estimate, grid)


@dataclass(frozen=True)
class MeanCertainty:
    is_certain: bool
    e_plus: float  # E[X]
    e_minus: float  # E[-X]
    tolerance: float

    def to_dict(self) -> dict:
        return {"is_certain": self.is_certain, "e_plus": self.e_plus, "e_minus": self.e_minus, "tolerance": self.tolerance}


def check_mean_certainty(
    f: CylinderFunctional,
    band: VolatilityBand,
    grid: PrefixGrid | None = None,
    tol: float = MIN_TOLERANCE,
    workers: int | None = None,
) -> MeanCertainty:
    neg = f.with_payoff(-f.payoff)
    if grid is None:
        grid = PrefixGrid.auto(f, band)
    e_plus, e_minus = ordered_map(lambda g: evaluate_cylinder(g, band, grid, 1), [f, neg], workers)
    return MeanCertainty(abs(e_plus + e_minus) <= tol, e_plus, e_minus, tol)


@dataclass(frozen=True)
class QVCounterexample:
    horizon: float
    threshold: float  # sigma_high^2 * T
    capacity_leg: float  # frequency of <B>_T < threshold under constant sigma_low
    expectation_leg: LowerBound  # best mean of <B>_T over {sigma_low, sigma_high}
    refutation_leg: float  # frequency of <B>_T < threshold under constant sigma_high
    frequencies: dict[str, float] = field(default_factory=dict)
    band_has_gap: bool = True
    mc: MCConfig | None = None

    @property
    def expectation_matches(self) -> bool:
        return abs(self.expectation_leg.value - self.threshold) <= self.expectation_leg.ci_halfwidth + 1e-3

    @property
    def conclusion(self) -> str:
        if not self.band_has_gap:
            return (
                "sigma_low == sigma_high: <B>_T equals the ceiling on every path, "
                "the event has probability 0 under every control and there is nothing to compare"
            )
        return (
            f"<B>_T <= {self.threshold!r} q.s. and the event <B>_T < {self.threshold!r} has capacity "
            f"{self.capacity_leg!r} (constant sigma_low), yet E[<B>_T] = {self.expectation_leg.value!r} "
            f"matches E[{self.threshold!r}]: no strict gap. The infimum hypothesis fails: under constant "
            f"sigma_high the event has probability {self.refutation_leg!r}. Not refuted by "
            f"{len(self.frequencies)} policies is the most a finite family can say about an infimum."
        )

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "threshold": self.threshold,
            "capacity_leg": self.capacity_leg,
            "expectation_leg": {
                "value": self.expectation_leg.value,
                "ci_halfwidth": self.expectation_leg.ci_halfwidth,
                "argmax_policy": self.expectation_leg.policy.to_dict(),
            },
            "refutation_leg": self.refutation_leg,
            "frequencies": dict(self.frequencies),
            "band_has_gap": self.band_has_gap,
            "expectation_matches": self.expectation_matches,
            "conclusion": self.conclusion,
        }


def run_qv_counterexample(band: VolatilityBand, horizon: float, mc: MCConfig, workers: int | None = None) -> QVCounterexample:
    """Quadratic-variation counterexample to strict comparison under positive capacity."""
    if band.sigma_low <= 0:
        raise PreconditionError("the quadratic variation counterexample needs sigma_low > 0")
    if not horizon > 0:
        raise PreconditionError(f"horizon must be positive, got {horizon}")
    threshold = band.var_high * horizon
    event = EventPredicate(PayoffExpr(Var(2)), "<", PayoffExpr(Const(threshold)))
    low = ControlPolicy("constant", (band.sigma_low,), name="constant_low")
    high = ControlPolicy("constant", (band.sigma_high,), name="constant_high")
    ens_low, ens_high = simulate_family([low, high], band, horizon, mc, workers=workers)
    lb = best_mean(TerminalFunctional(horizon, PayoffExpr(Var(2), 2)), [ens_low, ens_high])
    freqs = {e.policy.describe(): event_frequency(event, e) for e in (ens_low, ens_high)}
    return QVCounterexample(
        horizon=float(horizon),
        threshold=threshold,
        capacity_leg=event_frequency(event, ens_low),
        expectation_leg=lb,
        refutation_leg=event_frequency(event, ens_high),
        frequencies=freqs,
        band_has_gap=band.sigma_low < band.sigma_high,
        mc=mc,
    )
