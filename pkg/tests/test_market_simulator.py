import numpy as np
import pytest

from mmauction.dynamic_equilibrium import DynamicParams, MarketState, compute_constants, equilibrium_price
from mmauction.errors import ConfigurationError, InconsistentStateError, InvalidParameterError
from mmauction.market_simulator import (
    SimConfig,
    closed_form_inventory,
    exogenous_paths,
    iter_exogenous,
    path_rng,
    reconstruct_S,
    simulate,
    step,
    trapezoid_linear,
)

UNIT = DynamicParams(3, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0)
K_UNIT = compute_constants(UNIT)
MIXED = DynamicParams(4, 0.5, 2.0, 1.0, 0.3, 0.2, 0.7, 1 / 3)


def test_config_validation():
    with pytest.raises(InvalidParameterError):
        SimConfig(dt=0.0)
    with pytest.raises(InvalidParameterError):
        SimConfig(dt=2.0, horizon=1.0)
    with pytest.raises(InvalidParameterError):
        SimConfig(scheme="milstein")
    with pytest.raises(InvalidParameterError):
        SimConfig(seed=-1)
    cfg = SimConfig(dt=0.3, horizon=1.0)
    assert cfg.n_steps == 3 and cfg.step_size == pytest.approx(1 / 3)
    assert cfg.times[-1] == pytest.approx(1.0)


def test_trapezoid_linear_matches_exponential():
    # y' = -2y + 1, y(0) = 0  ->  y = (1 - exp(-2t)) / 2
    for dt in (1e-2, 5e-3):
        t = np.arange(0, 1 + dt / 2, dt)
        y = trapezoid_linear(-2.0, np.ones_like(t), 0.0, dt)
        err = abs(y[-1] - (1 - np.exp(-2)) / 2)
        assert err < 2 * dt**2


def test_zero_noise_fixed_point():
    p = UNIT.replace(mu=0.3)
    state = MarketState.balanced(3, d=1.0)
    for _ in range(500):
        state = step(state, K_UNIT, p, 0.01, (0.0, 0.0))
    assert state.d == pytest.approx(1.0 + 0.3 * 5.0, abs=1e-12)
    assert state.s_target == 0.0 and state.s_agg == 0.0
    np.testing.assert_array_equal(state.inventories, 0.0)


def test_zero_noise_aggregate_matches_ode_solution():
    # S' = -(S - S_target), S_target' = -S_target, S(0) = 0, S_target(0) = 1  ->  S = t e^{-t}
    errors = []
    for dt in (1e-2, 5e-3, 2.5e-3):
        state = MarketState(0.0, 0.0, 1.0, 0.0, [0.0, 0.0, 0.0])
        for _ in range(int(round(1 / dt))):
            state = step(state, K_UNIT, UNIT, dt, (0.0, 0.0))
        assert state.s_target == pytest.approx(np.exp(-1), abs=1e-12)
        errors.append(abs(state.s_agg - np.exp(-1)))
    assert errors[0] < 1e-4
    # second order: halving dt quarters the error
    assert errors[0] / errors[1] == pytest.approx(4, rel=0.05)
    assert errors[1] / errors[2] == pytest.approx(4, rel=0.05)


def test_euler_scheme_converges_to_same_solution():
    state = MarketState(0.0, 0.0, 1.0, 0.0, [0.0, 0.0, 0.0])
    for _ in range(1000):
        state = step(state, K_UNIT, UNIT, 1e-3, (0.0, 0.0), scheme="euler")
    assert state.s_target == pytest.approx(np.exp(-1), abs=1e-3)
    assert state.s_agg == pytest.approx(np.exp(-1), abs=1e-3)


def test_exact_target_transition_variance():
    cfg = SimConfig(dt=0.5, horizon=0.5, n_paths=20_000, seed=11, chunk_size=5000)
    p = UNIT.replace(psi=0.7, sigma_target=1.3)
    init = MarketState(0.0, 0.0, 0.0, 0.0, [0.0, 0.0, 0.0])
    st = np.concatenate([e.s_target[:, -1] for e in iter_exogenous(cfg, p, init)])
    var = p.sigma_target**2 * (1 - np.exp(-2 * p.psi * 0.5)) / (2 * p.psi)
    se = var * np.sqrt(2 / (len(st) - 1))
    assert abs(st.var(ddof=1) - var) < 4 * se


def test_simulate_is_deterministic_and_chunk_independent():
    init = MarketState(0.0, 1.0, 0.5, 3.0, [2.0, 1.0, 0.0])
    a = simulate(SimConfig(dt=1e-2, horizon=1.0, n_paths=5, seed=42, chunk_size=2), UNIT, K_UNIT, init)
    b = simulate(SimConfig(dt=1e-2, horizon=1.0, n_paths=5, seed=42, chunk_size=5), UNIT, K_UNIT, init)
    for pa, pb in zip(a, b):
        for name in ("d", "s_target", "s_agg", "prices", "inventories", "cash", "wealth"):
            np.testing.assert_array_equal(getattr(pa, name), getattr(pb, name))
    c = simulate(SimConfig(dt=1e-2, horizon=1.0, n_paths=5, seed=43), UNIT, K_UNIT, init)
    assert not np.array_equal(a[0].d, c[0].d)
    assert not np.array_equal(a[0].d, a[1].d)


def test_path_rng_depends_only_on_seed_and_id():
    assert path_rng(5, 3).standard_normal() == path_rng(5, 3).standard_normal()
    assert path_rng(5, 3).standard_normal() != path_rng(5, 4).standard_normal()


def test_step_agrees_with_simulate():
    cfg = SimConfig(dt=1e-3, horizon=1.0, n_paths=2, seed=7)
    init = MarketState(0.0, 0.0, 0.5, 3.0, [2.0, 1.0, 0.0])
    path = simulate(cfg, UNIT, K_UNIT, init)[1]
    state = init
    for k in range(cfg.n_steps):
        state = step(state, K_UNIT, UNIT, cfg.step_size, (path.z_d[k], path.z_target[k]))
    assert state.s_agg == pytest.approx(path.s_agg[-1], abs=1e-12)
    assert state.d == pytest.approx(path.d[-1], abs=1e-12)
    np.testing.assert_allclose(state.inventories, path.inventories[-1], atol=1e-12)


def test_path_bookkeeping_identities():
    cfg = SimConfig(dt=1e-3, horizon=10.0, n_paths=3, seed=3)
    init = MarketState(0.0, 0.0, -1.0, 1.5, [2.0, 0.5, -1.0])
    for path in simulate(cfg, UNIT, K_UNIT, init):
        assert np.abs(path.inventories.sum(axis=1) - path.s_agg).max() < 1e-8
        assert np.abs(path.rates.sum(axis=1) - path.flow).max() < 1e-10
        spend = path.rates * path.prices[:, None]
        dm = np.diff(path.cash, axis=0)
        np.testing.assert_allclose(dm, -cfg.step_size / 2 * (spend[1:] + spend[:-1]), atol=1e-12)
        np.testing.assert_allclose(path.wealth, path.inventories * path.d[:, None] + path.cash, atol=1e-12)
        # recorded prices are the equilibrium prices
        for k in (0, 1234, 9999):
            assert path.prices[k] == pytest.approx(equilibrium_price(K_UNIT, UNIT, path.state(k)), abs=1e-12)


def test_zero_noise_price_path():
    # constants from the noisy model, paths driven without noise
    k = compute_constants(UNIT.replace(mu=0.4))
    p = UNIT.replace(mu=0.4, sigma_d=1e-300, sigma_target=1e-300)
    path = simulate(SimConfig(dt=1e-2, horizon=2.0, seed=1), p, k, MarketState.balanced(3, d=0.5))[0]
    np.testing.assert_allclose(path.prices, 0.5 + 0.4 * path.times + 0.4 / p.rho, atol=1e-12)


def test_thinning_keeps_every_kth_point():
    init = MarketState(0.0, 0.0, 0.5, 0.0, [0.0, 0.0, 0.0])
    full = simulate(SimConfig(dt=1e-2, horizon=1.0, seed=2), UNIT, K_UNIT, init)[0]
    thin = simulate(SimConfig(dt=1e-2, horizon=1.0, seed=2, thin=10), UNIT, K_UNIT, init)[0]
    np.testing.assert_array_equal(thin.s_agg, full.s_agg[::10])
    assert len(thin.times) == 11


def test_inconsistent_initial_state():
    with pytest.raises(InconsistentStateError):
        simulate(SimConfig(n_paths=1, horizon=0.1), UNIT, K_UNIT, MarketState.balanced(4))


def test_closed_form_inventory_examples():
    # no initial deviation
    assert closed_form_inventory(3.0, 1.0, 3.0, 6.0, K_UNIT, UNIT) == pytest.approx(2.0)
    # unit deviation decays at rate -a/lam = 1 for the integer set
    assert closed_form_inventory(2.0, 2.0, 3.0, 0.0, K_UNIT, UNIT) == pytest.approx(np.exp(-2.0), abs=1e-15)
    dev = closed_form_inventory(np.linspace(0, 5, 50), 2.0, 3.0, 0.0, K_UNIT, UNIT)
    assert np.all(np.diff(dev) < 0)


def test_inventory_matches_closed_form_under_refinement():
    p = MIXED.replace(n_makers=3)
    k = compute_constants(p)
    init = MarketState(0.0, 0.0, 0.5, 3.0, [2.0, 1.0, 0.0])
    errs = []
    for dt in (4e-2, 2e-2, 1e-2):
        path = simulate(SimConfig(dt=dt, horizon=4.0, seed=9), p, k, init)[0]
        exact = closed_form_inventory(path.times[:, None], init.inventories, 3.0, path.s_agg[:, None], k, p)
        errs.append(np.abs(path.inventories - exact).max())
    assert errs[2] < errs[1] < errs[0]
    # at least first order
    assert errs[0] / errs[2] > 3.5


def test_reconstruct_S_zero_noise_and_fixed_point():
    p = UNIT.replace(sigma_d=1e-300, sigma_target=1e-300)
    init = MarketState(0.0, 0.0, 1.0, 0.0, [0.0, 0.0, 0.0])
    path = simulate(SimConfig(dt=1e-3, horizon=5.0, seed=0), p, K_UNIT, init)[0]
    rec = reconstruct_S(path.d, path.prices, 0.0, K_UNIT, p, path.times)
    assert np.abs(rec - path.s_agg).max() < 1e-8
    t = np.linspace(0, 1, 11)
    np.testing.assert_array_equal(reconstruct_S(np.zeros(11), np.zeros(11), 0.0, K_UNIT, p, t), 0.0)


def test_reconstruct_S_noisy_paths():
    k = compute_constants(MIXED)
    init4 = MarketState(0.0, 0.0, 0.5, 3.0, [2.0, 1.0, 0.0, 0.0])
    for path in simulate(SimConfig(dt=1e-3, horizon=10.0, n_paths=3, seed=5), MIXED, k, init4):
        rec = reconstruct_S(path.d, path.prices, path.s_agg[0], k, MIXED, path.times)
        assert np.abs(rec - path.s_agg).max() < 1e-3 * np.abs(path.s_agg).max()


def test_reconstruct_S_grid_mismatch():
    with pytest.raises(ConfigurationError):
        reconstruct_S(np.zeros(5), np.zeros(4), 0.0, K_UNIT, UNIT, np.linspace(0, 1, 5))
    with pytest.raises(ConfigurationError):
        reconstruct_S(np.zeros(5), np.zeros(5), 0.0, K_UNIT, UNIT, np.linspace(0, 1, 6))


@pytest.mark.slow
def test_stationary_target_variance():
    p = UNIT.replace(psi=0.5, sigma_target=0.8)
    cfg = SimConfig(dt=1e-2, horizon=20.0, n_paths=4000, seed=21, chunk_size=1000)
    init = MarketState(0.0, 0.0, 0.0, 0.0, [0.0, 0.0, 0.0])
    st = np.concatenate([e.s_target[:, -1] for e in iter_exogenous(cfg, p, init)])
    target = p.sigma_target**2 / (2 * p.psi)
    se = target * np.sqrt(2 / (len(st) - 1))
    assert abs(st.var(ddof=1) - target) < 1.96 * se * 1.5


def test_aggregate_mean_reverts_to_zero():
    init = MarketState(0.0, 0.0, 2.0, 3.0, [1.0, 1.0, 1.0])
    cfg = SimConfig(dt=1e-2, horizon=12.0, n_paths=1000, seed=8, chunk_size=500)
    s = np.concatenate([e.s_agg for e in iter_exogenous(cfg, UNIT, init)])
    means = s[:, [0, 200, 600, 1200]].mean(axis=0)
    half = 1.96 * s[:, [0, 200, 600, 1200]].std(axis=0, ddof=1) / np.sqrt(len(s))
    assert abs(means[-1]) < max(half[-1], 1e-12) + 1e-3
    assert means[1] < means[0]


def test_exogenous_noise_is_returned():
    cfg = SimConfig(dt=0.1, horizon=1.0, seed=4)
    exo, z = exogenous_paths(cfg, UNIT, MarketState.balanced(3), [0, 1], keep_noise=True)
    assert z.shape == (2, 2, 10)
    np.testing.assert_allclose(np.diff(exo.d, axis=1), np.sqrt(0.1) * z[:, 0], atol=1e-14)
