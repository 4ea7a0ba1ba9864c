import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmauction.errors import (
    ConfigurationError,
    InconsistentStateError,
    InvalidParameterError,
    InvalidScheduleError,
    NoEquilibriumError,
    UnsupportedDistributionError,
    WrongRegimeError,
)
from mmauction.static_auction import (
    DemandSchedule,
    FlowDistribution,
    GridSpec,
    StaticParams,
    SupplyCurve,
    best_response_quantity,
    brute_force_verify,
    candidate_strategy,
    clear_auction,
    degenerate_equilibrium_price,
    degenerate_supply_curve,
    expected_utility,
    inventory_equilibrium,
    inventory_equilibrium_price,
    inventory_equilibrium_quantities,
    pareto_contraction,
    post_trade_price,
    symmetric_equilibrium,
    symmetric_equilibrium_price,
)

TWO_POINT = FlowDistribution.two_point(-1.0, 0.5, 1.0)


def params(n=3, gamma=1.0, sigma=1.0, mu=0.0, s=0.0, flow=TWO_POINT):
    return StaticParams(n, gamma, sigma, mu, s, flow)


# -- clearing -------------------------------------------------------------

@pytest.mark.parametrize(
    "schedules, u, price, q",
    [
        ([(10, 1), (10, 1)], 0.0, 10.0, [0.0, 0.0]),
        ([(10, 1), (14, 1)], 0.0, 12.0, [-2.0, 2.0]),
        ([(10, 1), (10, 1)], 2.0, 9.0, [1.0, 1.0]),
    ],
)
def test_clear_auction_examples(schedules, u, price, q):
    out = clear_auction([DemandSchedule(a, b) for a, b in schedules], u)
    assert out.price == pytest.approx(price, abs=1e-12)
    np.testing.assert_allclose(out.quantities, q, atol=1e-12)


def test_clear_auction_rejects_bad_schedules():
    with pytest.raises(InvalidScheduleError):
        clear_auction([DemandSchedule(1, 1)], 0.0)
    with pytest.raises(InvalidScheduleError):
        clear_auction([DemandSchedule(1, 1), DemandSchedule(1, 0)], 0.0)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(
        st.tuples(st.floats(-100, 100), st.floats(0.01, 50)), min_size=2, max_size=12
    ),
    st.floats(-100, 100),
)
def test_market_clears(raw, u):
    out = clear_auction([DemandSchedule(a, b) for a, b in raw], u)
    scale = max(1.0, abs(u), float(np.abs(out.quantities).max()))
    assert abs(out.quantities.sum() - u) <= 1e-12 * scale * len(raw)


# -- symmetric equilibria without inventories ----------------------------

@pytest.mark.parametrize(
    "mu, gamma, u, n, lam, expected",
    [(10, 1, 0, 2, 1, 10.0), (10, 1, 1, 2, 1, 9.0), (0, 2, -1, 4, 2, 1.0)],
)
def test_degenerate_price(mu, gamma, u, n, lam, expected):
    p = params(n=n, gamma=gamma, mu=mu, flow=FlowDistribution.degenerate(u))
    assert degenerate_equilibrium_price(p, lam) == pytest.approx(expected, abs=1e-12)


def test_degenerate_price_errors():
    with pytest.raises(WrongRegimeError):
        degenerate_equilibrium_price(params(), 1.0)
    with pytest.raises(InvalidParameterError):
        degenerate_equilibrium_price(params(flow=FlowDistribution.degenerate(1.0)), 0.0)


def test_degenerate_curve_reproduces_price():
    # F from the degenerate equilibrium condition, then p = F - (N-1)/N lam u
    p = params(n=4, gamma=2, mu=3.0, flow=FlowDistribution.degenerate(1.5))
    for lam in (0.1, 1.0, 7.0):
        curve = degenerate_supply_curve(p, lam)
        price = curve.level - 3 / 4 * lam * 1.5
        assert price == pytest.approx(degenerate_equilibrium_price(p, lam), abs=1e-12)


def test_symmetric_equilibrium():
    p = params(n=3)
    assert symmetric_equilibrium(params(n=3, mu=2.5)) == (2.5, 1.0)
    p = params(n=4, gamma=2.0, mu=0.0)
    assert symmetric_equilibrium_price(p, 1.0) == pytest.approx(-0.75, abs=1e-12)
    with pytest.raises(NoEquilibriumError):
        symmetric_equilibrium(params(n=2))
    with pytest.raises(WrongRegimeError):
        symmetric_equilibrium(params(flow=FlowDistribution.degenerate(1.0)))


# -- linear equilibria with inventories ----------------------------------

def test_inventory_equilibrium_examples():
    c = inventory_equilibrium(params(n=3, mu=1.25))
    assert (c.level, c.inventory_coef, c.impact) == pytest.approx((1.25, -0.5, 1.0))
    assert inventory_equilibrium_price(params(s=3.0), 0.0) == pytest.approx(-1.0)
    q = inventory_equilibrium_quantities(params(s=3.0), [2, 1, 0], 0.0)
    np.testing.assert_allclose(q, [-0.5, 0.0, 0.5], atol=1e-12)
    with pytest.raises(NoEquilibriumError):
        inventory_equilibrium(params(n=2))


@pytest.mark.parametrize("n", [3, 4, 7])
@pytest.mark.parametrize("s, u", [(0.0, 1.0), (3.0, -2.0), (-1.5, 0.3), (10.0, 0.0)])
def test_unified_price_identity(n, s, u):
    p = params(n=n, gamma=1.7, sigma=0.6, mu=0.4, s=s)
    assert inventory_equilibrium_price(p, u) == pytest.approx(post_trade_price(p, s + u, u), abs=1e-12)
    p0 = params(n=n, gamma=1.7, sigma=0.6, mu=0.4, s=0.0)
    assert symmetric_equilibrium_price(p0, u) == pytest.approx(post_trade_price(p0, u, u), abs=1e-12)


def test_best_response_examples():
    p = params(n=3, s=3.0)
    curve = inventory_equilibrium(p)
    assert best_response_quantity(curve, p, 1.0, 0.0) == pytest.approx(0.0, abs=1e-12)
    assert best_response_quantity(curve, p, 2.0, 0.0) == pytest.approx(-0.5, abs=1e-12)
    assert best_response_quantity(curve, p, 1.0, 3.0) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(
    st.integers(3, 10),
    st.floats(0.1, 5),
    st.floats(0.1, 3),
    st.floats(-5, 5),
    st.lists(st.floats(-10, 10), min_size=10, max_size=10),
    st.floats(-5, 5),
)
def test_best_response_consistency(n, gamma, sigma, mu, raw, u):
    x = np.array(raw[:n])
    p = params(n=n, gamma=gamma, sigma=sigma, mu=mu, s=float(x.sum()))
    curve = inventory_equilibrium(p)
    q_eq = inventory_equilibrium_quantities(p, x, u)
    q_br = np.array([best_response_quantity(curve, p, xi, u) for xi in x])
    np.testing.assert_allclose(q_br, q_eq, atol=1e-12 * (1 + np.abs(x).max() + abs(u)) * gamma * sigma**2 * n)


# -- expected utility and grid verification -------------------------------

def test_expected_utility_zero_trade():
    p = params(flow=FlowDistribution.degenerate(0.0))
    curve = SupplyCurve(0.0, 0.0, 1.0)
    assert expected_utility(0.0, 0.5, curve, 0.0, p) == pytest.approx(-1.0, abs=1e-15)


def test_expected_utility_against_direct_mgf_sum():
    # independent route: integrate the payoff by Gauss-Hermite, sum the flow
    p = params(n=3, gamma=0.8, sigma=1.3, mu=0.4, s=3.0)
    curve = inventory_equilibrium(p)
    A, B, x = 0.2, 0.4, 1.5
    nodes, weights = np.polynomial.hermite_e.hermegauss(80)
    weights = weights / weights.sum()
    total = 0.0
    for u, w in zip(*p.flow.support()):
        q = A + B * u
        price = curve.price(q, u, p.total_shares, x)
        payoff = p.mu + p.sigma * nodes
        total += w * np.sum(weights * -np.exp(-p.gamma * ((x + q) * payoff - price * q)))
    assert expected_utility(A, B, curve, x, p) == pytest.approx(total, rel=1e-10)


def test_expected_utility_rejects_gaussian():
    p = params(flow=FlowDistribution.gaussian(0.0, 1.0))
    with pytest.raises(UnsupportedDistributionError):
        expected_utility(0.0, 0.5, inventory_equilibrium(p), 0.0, p)


def test_candidate_beats_shifted_strategies():
    p = params(n=3, s=3.0)
    curve = inventory_equilibrium(p)
    for x in (0.0, 1.0, 2.0):
        a_star, b_star = candidate_strategy(curve, p, x)
        best = expected_utility(a_star, b_star, curve, x, p)
        assert expected_utility(a_star + 0.5, b_star, curve, x, p) < best
        assert expected_utility(a_star - 0.5, b_star, curve, x, p) < best


def test_utility_unimodal_in_intercept():
    p = params(n=4, gamma=0.7, mu=0.3, s=2.0)
    curve = inventory_equilibrium(p)
    a_axis = np.linspace(-4, 4, 801)
    for b in (0.05, 0.25, 0.6, 0.95):
        for x in (-1.0, 0.5, 3.0):
            diffs = np.sign(np.diff(expected_utility(a_axis, b, curve, x, p)))
            diffs = diffs[diffs != 0]
            assert np.count_nonzero(np.diff(diffs) != 0) <= 1
            assert diffs[0] >= diffs[-1]  # rises then falls, never the reverse


def test_brute_force_confirms_equilibrium():
    p = params(n=3, s=3.0)
    res = brute_force_verify(p, GridSpec(), inventories=(0.0, 1.0, 2.0))
    assert res.confirmed, res


def test_brute_force_rejects_perturbed_impact():
    p = params(n=3, s=3.0)
    eq = inventory_equilibrium(p)
    bad = SupplyCurve(eq.level, eq.inventory_coef, 1.5 * eq.impact)
    assert not brute_force_verify(p, GridSpec(), curve=bad, inventories=(0.0, 1.0, 2.0)).confirmed


@pytest.mark.parametrize("lam", [0.3, 1.0, 4.0])
def test_brute_force_degenerate_continuum(lam):
    p = params(n=3, flow=FlowDistribution.degenerate(1.0))
    assert brute_force_verify(p, GridSpec(), lam=lam).confirmed


def test_argmax_invariance_random_perturbations():
    rng = np.random.default_rng(7)
    p = params(n=3, gamma=1.0, sigma=1.0, mu=0.2, s=1.0)
    eq = inventory_equilibrium(p)
    xs = tuple(rng.uniform(-1, 2, size=4))
    grid = GridSpec(a_range=(-4, 4))
    assert brute_force_verify(p, grid, curve=eq, inventories=xs).confirmed
    for _ in range(5):
        f, c, lam = np.array([eq.level, eq.inventory_coef, eq.impact]) * (1 + rng.choice([-1, 1], 3) * rng.uniform(0.2, 0.5, 3))
        assert not brute_force_verify(p, grid, curve=SupplyCurve(f, c, lam), inventories=xs).confirmed


def test_brute_force_grid_must_cover_candidate():
    p = params(n=3, s=3.0)
    with pytest.raises(ConfigurationError):
        brute_force_verify(p, GridSpec(a_range=(5.0, 6.0)), inventories=(0.0,))


# -- Pareto contraction ---------------------------------------------------

@pytest.mark.parametrize(
    "x, u, expected",
    [([1, 1, 1], 0.0, [1, 1, 1]), ([2, 1, 0], 0.0, [1.5, 1, 0.5]), ([2, 1, 0], 3.0, [2.5, 2, 1.5])],
)
def test_pareto_contraction_examples(x, u, expected):
    np.testing.assert_allclose(pareto_contraction(x, 3.0, u, params(n=3)), expected, atol=1e-12)


def test_pareto_contraction_inconsistent():
    with pytest.raises(InconsistentStateError):
        pareto_contraction([1, 1, 1], 4.0, 0.0, params(n=3))


@settings(max_examples=100, deadline=None)
@given(st.integers(3, 9), st.lists(st.floats(-50, 50), min_size=9, max_size=9), st.floats(-20, 20))
def test_pareto_factor(n, raw, u):
    x = np.array(raw[:n])
    s = float(x.sum())
    post = pareto_contraction(x, s, u, params(n=n))
    gap = np.max(np.abs(post - (s + u) / n - (x - s / n) / (n - 1)))
    assert gap < 1e-12 * max(1.0, np.abs(x).max(), abs(u))
