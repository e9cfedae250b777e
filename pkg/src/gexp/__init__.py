"""Numerical laboratory for G-expectations.

PDE side: :mod:`gexp.gheat` (G-heat equation) and :mod:`gexp.cylinder`
(multi-time functionals).  Dual side: :mod:`gexp.scenarios` (volatility
controlled Monte Carlo, capacities, quadratic variation).  Verdicts:
:mod:`gexp.comparison`.
"""

__version__ = "0.1.0"

from .payoff import EventPredicate, PayoffExpr, eval_payoff, eval_payoff_batch, parse_event, parse_payoff  # noqa: E402
from .gheat import GridSpec, SolutionField, VolatilityBand, g_expectation_terminal, g_function, solve_gheat  # noqa: E402
from .cylinder import CylinderFunctional, PrefixGrid, evaluate_cylinder, evaluate_pair  # noqa: E402
from .scenarios import (  # noqa: E402
    ControlPolicy,
    MCConfig,
    PathEnsemble,
    TerminalFunctional,
    capacity_complement_upper,
    capacity_lower_bound,
    lower_bound_expectation,
    simulate,
)
from .comparison import (  # noqa: E402
    ComparisonVerdict,
    Verdict,
    check_mean_certainty,
    check_negativity,
    check_strict,
    run_qv_counterexample,
)

__all__ = [
    "EventPredicate", "PayoffExpr", "eval_payoff", "eval_payoff_batch", "parse_event", "parse_payoff",
    "GridSpec", "SolutionField", "VolatilityBand", "g_expectation_terminal", "g_function", "solve_gheat",
    "CylinderFunctional", "PrefixGrid", "evaluate_cylinder", "evaluate_pair",
    "ControlPolicy", "MCConfig", "PathEnsemble", "TerminalFunctional",
    "capacity_complement_upper", "capacity_lower_bound", "lower_bound_expectation", "simulate",
    "ComparisonVerdict", "Verdict", "check_mean_certainty", "check_negativity", "check_strict",
    "run_qv_counterexample",
]
