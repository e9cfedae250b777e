import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gexp.errors import CFLError, DimensionError, NonFiniteError, PreconditionError
from gexp.gheat import (
    GridSpec,
    VolatilityBand,
    auto_grid,
    g_expectation_terminal,
    g_function,
    march,
    payoff_radius,
    solve_gheat,
)
from gexp.payoff import Binary, PayoffExpr, Unary, eval_payoff_batch, parse_payoff
from gexp.scenarios import ControlPolicy, simulate

from strategies import payoffs


def classical_expectation(src, sigma, t, x=0.0):
    """E[phi(x + sigma sqrt(t) Z)] by a fine trapezoid rule (independent of the scheme)."""
    z = np.linspace(-12, 12, 400_001)
    w = np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    vals = eval_payoff_batch(parse_payoff(src), x + sigma * math.sqrt(t) * z)
    return float(np.trapezoid(vals * w, z))


@pytest.mark.parametrize("alpha,band,expected", [
    (2.0, (0.5, 1.0), 1.0),
    (0.0, (0.5, 1.0), 0.0),
    (0.0, (0.0, 3.0), 0.0),
    (-2.0, (0.5, 1.0), -0.25),
])
def test_g_function(alpha, band, expected):
    assert g_function(alpha, VolatilityBand(*band)) == expected


def test_g_function_vectorized(band):
    np.testing.assert_array_equal(g_function(np.array([2.0, 0.0, -2.0]), band), [1.0, 0.0, -0.25])


@pytest.mark.parametrize("lo,hi", [(-0.1, 1.0), (1.0, 0.5), (0.0, 0.0), (0.2, math.inf)])
def test_band_invalid(lo, hi):
    with pytest.raises(PreconditionError):
        VolatilityBand(lo, hi)


def test_gridspec_invariants():
    with pytest.raises(PreconditionError):
        GridSpec(1.0, 0.0, 11, 1.0)
    with pytest.raises(PreconditionError):
        GridSpec(0.0, 1.0, 2, 1.0)
    with pytest.raises(PreconditionError):
        GridSpec(0.0, 1.0, 11, 1.0, cfl_safety=1.5)
    g = GridSpec(-1.0, 1.0, 21, 1.0)
    assert g.dx == pytest.approx(0.1)


def test_time_step_respects_cfl(band):
    g = GridSpec(-7.0, 7.0, 401, 1.0)
    n, dt = g.steps_for(1.0, band)
    assert dt <= g.cfl_safety * g.dx**2 / band.var_high
    assert n * dt == pytest.approx(1.0)


def test_cfl_violation_rejected(band):
    g = GridSpec(-7.0, 7.0, 401, 1.0, n_time=10)
    with pytest.raises(CFLError):
        solve_gheat(parse_payoff("pow(x1,2)"), band, g)


def test_constant_exact(band):
    f = solve_gheat(parse_payoff("3.25"), band, GridSpec(-5, 5, 101, 1.0), full_history=True)
    assert (f.values == 3.25).all()


def test_linear_preserved(band):
    f = solve_gheat(parse_payoff("x1"), band, GridSpec(-5, 5, 101, 1.0))
    np.testing.assert_allclose(f.values[-1], f.x, atol=1e-12)


def test_moments(band):
    assert g_expectation_terminal(parse_payoff("pow(x1,2)"), band, 1.0) == pytest.approx(1.0, abs=1e-9)
    assert g_expectation_terminal(parse_payoff("-pow(x1,2)"), band, 1.0) == pytest.approx(-0.25, abs=1e-9)


def test_degenerate_kink_is_fixed(degenerate_band):
    grid = auto_grid(parse_payoff("min(x1,0)"), degenerate_band, 1.0)
    f = solve_gheat(parse_payoff("min(x1,0)"), degenerate_band, grid, full_history=True)
    np.testing.assert_allclose(f.values, np.broadcast_to(np.minimum(f.x, 0), f.values.shape), atol=1e-12)
    assert abs(f.at(0.0)) <= 1e-12


def test_second_moment_t2_against_mc(band):
    value = g_expectation_terminal(parse_payoff("pow(x1,2)"), band, 2.0)
    assert value == pytest.approx(2.0, abs=1e-9)
    ens = simulate(ControlPolicy.constant(1.0), band, 2.0, n_paths=20_000, n_steps=20, seed=5)
    x = ens.terminal_b**2
    se = x.std(ddof=1) / math.sqrt(x.size)
    assert abs(x.mean() - value) < 3 * se


def test_linear_expectation_zero(band):
    for t in (0.3, 1.0, 2.5):
        assert abs(g_expectation_terminal(parse_payoff("x1"), band, t)) < 1e-12


@pytest.mark.parametrize("src,sigma", [
    ("abs(x1)", 1.0),                  # convex: the high volatility is optimal
    ("exp(x1)", 1.0),
    ("max(x1 - 0.5, 0)", 1.0),
    ("-abs(x1)", 0.5),                 # concave: the low volatility is optimal
    ("min(x1, 0.3)", 0.5),
])
def test_convex_concave_match_classical(band, src, sigma):
    value = g_expectation_terminal(parse_payoff(src), band, 1.0)
    assert value == pytest.approx(classical_expectation(src, sigma, 1.0), abs=2e-4)


def test_closed_form_exp(band):
    assert g_expectation_terminal(parse_payoff("exp(x1)"), band, 1.0) == pytest.approx(math.exp(0.5), abs=1e-3)
    assert g_expectation_terminal(parse_payoff("-exp(x1)"), band, 1.0) == pytest.approx(-math.exp(0.125), abs=1e-3)


@pytest.mark.parametrize("src", ["max(0, 1 - abs(x1 - 0.5))", "pow(x1, 2) - abs(x1)", "min(max(x1, -1), 1)"])
def test_equal_band_is_heat_equation(src):
    # sigma_low == sigma_high: no special case in the code, the classical expectation is the oracle
    band = VolatilityBand(0.8, 0.8)
    value = g_expectation_terminal(parse_payoff(src), band, 1.0)
    assert value == pytest.approx(classical_expectation(src, 0.8, 1.0), abs=2e-4)


def test_snapshots(band):
    f = solve_gheat(parse_payoff("pow(x1,2)"), band, GridSpec(-7, 7, 201, 1.0), snapshot_times=[0.25, 0.5])
    np.testing.assert_allclose(f.times, [0.0, 0.25, 0.5, 1.0])
    for t, row in zip(f.times, f.values):
        i = np.searchsorted(f.x, 0.0)
        assert row[i] == pytest.approx(t, abs=1e-9)
    assert f.steps[0] == 0 and list(f.steps) == sorted(f.steps)


def test_snapshot_out_of_range(band):
    with pytest.raises(PreconditionError):
        solve_gheat(parse_payoff("x1"), band, GridSpec(-1, 1, 11, 1.0), snapshot_times=[2.0])


def test_arity_checked(band):
    with pytest.raises(DimensionError):
        solve_gheat(parse_payoff("x1 + x2"), band, GridSpec(-1, 1, 11, 1.0))


def test_non_finite_initial(band):
    with pytest.raises(NonFiniteError) as ei:
        solve_gheat(parse_payoff("exp(pow(x1, 3))"), band, GridSpec(-10, 10, 101, 1.0))
    assert ei.value.step == 0


def test_non_finite_during_march(band):
    u = np.array([0.0, 1e308, -1e308, 1e308, 0.0])
    with pytest.raises(NonFiniteError) as ei:
        march(u, band, 1.0, 0.5, 10)
    assert ei.value.step == 1


def test_payoff_radius():
    assert payoff_radius(parse_payoff("pow(x1,2)")) == 1.0
    assert payoff_radius(parse_payoff("min(x1,0)")) == 1.0
    assert 3.0 <= payoff_radius(parse_payoff("max(0, 1 - abs(x1 - 2))")) <= 3.01
    assert payoff_radius(parse_payoff("x1")) == 1.0


def test_auto_grid(band):
    g = auto_grid(parse_payoff("pow(x1,2)"), band, 4.0)
    assert g.x_max == pytest.approx(6 * 2 + 1) and g.x_min == -g.x_max
    assert g.n_space >= 401 and g.n_space % 2 == 1


def test_kink_convergence(band):
    # E|B_1| = sqrt(2/pi) for a convex payoff; a second-order signal through the kink
    exact = math.sqrt(2 / math.pi)
    g = GridSpec(-7, 7, 51, 1.0)
    errs = []
    for _ in range(4):
        errs.append(abs(solve_gheat(parse_payoff("abs(x1)"), band, g).at(0.0) - exact))
        g = g.refined()
    assert all(a / b >= 3.0 for a, b in zip(errs, errs[1:]))


# -- sublinear-expectation properties on the grid ---------------------------

SMALL = GridSpec(-4.0, 4.0, 81, 0.5)


def _solve(expr, band):
    return solve_gheat(expr, band, SMALL, snapshot_times=[0.1, 0.25]).values


@settings(max_examples=40, deadline=None)
@given(payoffs(), payoffs())
def test_monotone(phi, psi):
    band = VolatilityBand(0.5, 1.0)
    upper = PayoffExpr(Binary("+", phi.root, Unary("abs", psi.root)), 1)
    u1, u2 = _solve(phi, band), _solve(upper, band)
    scale = 1.0 + np.abs(u2).max()
    assert (u1 <= u2 + 1e-12 * scale).all()


@settings(max_examples=40, deadline=None)
@given(payoffs())
def test_maximum_principle(phi):
    band = VolatilityBand(0.5, 1.0)
    u = _solve(phi, band)
    scale = 1.0 + np.abs(u[0]).max()
    assert (u.max(axis=1) <= u[0].max() + 1e-12 * scale).all()
    assert (u.min(axis=1) >= u[0].min() - 1e-12 * scale).all()


@settings(max_examples=40, deadline=None)
@given(payoffs(), st.sampled_from([0.0, 0.5, 2.0]))
def test_positive_homogeneity(phi, lam):
    band = VolatilityBand(0.5, 1.0)
    np.testing.assert_array_equal(_solve(phi.scaled(lam), band), lam * _solve(phi, band))
