"""Numerical verification of the dynamic equilibrium.

Three complementary checks:

* Monte Carlo: a single maker deviates from the candidate rate while the other
  ``N - 1`` keep quoting the linear schedule, so the deviator trades against
  the residual supply curve.  Payoffs are compared on common random numbers.
* Hamilton-Jacobi-Bellman: the deviator's value function is a quadratic form,
  stored as a symmetric 5x5 matrix over ``z = (1, x, d, s_target, s)``.  The
  Hamiltonian is quadratic in the trading rate, so its supremum is explicit.
* Dynamic programming: the discounted value plus accumulated reward is a
  martingale along equilibrium paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.signal import lfilter

from .dynamic_equilibrium import DynamicParams, EquilibriumConstants, MarketState, admissible
from .errors import (
    AdmissibilityError,
    ConfigurationError,
    HorizonTooShortError,
    InvalidConstantsError,
)
from .market_simulator import SimConfig, SimPath, iter_exogenous, trapezoid_linear

__all__ = [
    "DeviationPolicy",
    "Estimate",
    "DeviationResult",
    "NashGapReport",
    "ValueFunction",
    "BellmanReport",
    "reward_rate",
    "discounted_integrals",
    "tail_bound",
    "objective_value",
    "wealth_objective_value",
    "residual_price",
    "candidate_rate",
    "deviation_payoff",
    "evaluate_policies",
    "nash_gap",
    "standard_policy_grid",
    "solve_value_function",
    "hjb_coefficients",
    "hjb_residual",
    "hamiltonian_argmax",
    "foc_residual",
    "bellman_consistency",
    "discounted_exposure",
    "risk_discount",
]

Z95 = 1.959963984540054


# ---------------------------------------------------------------------------
# objective estimation


@dataclass(frozen=True)
class Estimate:
    """Monte Carlo mean with a 95% normal-approximation half-width."""

    value: float
    half_width: float
    n_paths: int
    tail_bound: float = 0.0

    @classmethod
    def from_samples(cls, samples, tail_bound: float = 0.0) -> "Estimate":
        samples = np.asarray(samples, dtype=float).ravel()
        n = len(samples)
        # compensated sums keep the estimate independent of path ordering
        mean = math.fsum(samples) / n
        if n < 2:
            return cls(mean, math.inf, n, tail_bound)
        var = math.fsum((samples - mean) ** 2) / (n - 1)
        return cls(mean, Z95 * math.sqrt(var / n), n, tail_bound)

    @property
    def interval(self) -> tuple[float, float]:
        return self.value - self.half_width, self.value + self.half_width

    def covers(self, x: float, slack: float = 0.0) -> bool:
        return abs(self.value - x) <= self.half_width + slack


def reward_rate(params: DynamicParams, x, q, p, d):
    """Instantaneous reward ``-q (p - D) + mu x - (gamma sigma_D^2 / 2) x^2``."""
    risk = params.gamma * params.sigma_d**2
    return -q * (p - d) + params.mu * x - risk / 2 * x * x


def _trapezoid_weights(times, rho: float) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    dt = np.diff(times)
    weights = np.zeros_like(times)
    weights[:-1] += dt / 2
    weights[1:] += dt / 2
    return weights * np.exp(-rho * times)


def discounted_integrals(times, integrand, rho: float) -> np.ndarray:
    """Trapezoid quadrature of ``exp(-rho t) integrand`` along the last axis."""
    return np.asarray(integrand, dtype=float) @ _trapezoid_weights(times, rho)


def _trapezoid_from_pairs(rate, pair_sums, y0, dt, shape):
    """Trapezoid solution of ``y' = rate y + h`` given ``h[k] + h[k-1]`` (flattened)."""
    den = 1.0 - rate * dt / 2
    drive = np.empty(shape)
    drive[:, 0] = y0
    drive[:, 1:] = pair_sums.reshape(shape[0], shape[1] - 1) * ((dt / 2) / den)
    return lfilter([1.0], [1.0, -(1.0 + rate * dt / 2) / den], drive, axis=-1)


def tail_bound(rho: float, horizon: float, terminal_reward) -> float:
    """Bound on the neglected part of the infinite-horizon integral.

    Assumes the reward grows at most quadratically in time from its terminal
    level (states have bounded second moments under admissible rates), giving
    ``exp(-rho T) E|f_T| (1/rho + 2/(rho^2 T) + 2/(rho^3 T^2))``.
    """
    level = math.fsum(np.abs(np.asarray(terminal_reward, dtype=float)).ravel()) / max(1, np.size(terminal_reward))
    poly = 1 / rho + 2 / (rho**2 * horizon) + 2 / (rho**3 * horizon**2)
    return math.exp(-rho * horizon) * level * poly


def _check_tail(bound: float, tail_tol):
    if tail_tol is not None and bound > tail_tol:
        raise HorizonTooShortError(f"truncation tail bound {bound:.3e} exceeds tolerance {tail_tol:.3e}")


def objective_value(paths: Iterable[SimPath], params: DynamicParams, agent: int = 0,
                    tail_tol: float | None = None) -> Estimate:
    """Discounted reward of maker ``agent`` averaged over ``paths``.

    Args:
        paths: simulated paths carrying inventories, rates, prices and ``D``
            (any iterable, consumed once).
        params: model parameters.
        agent: index of the maker whose objective is evaluated.
        tail_tol: raise :class:`HorizonTooShortError` if the truncation tail
            bound exceeds this value.

    Returns:
        Estimate with the tail bound attached.
    """
    values, terminal = [], []
    for path in paths:
        f = reward_rate(params, path.inventories[:, agent], path.rates[:, agent], path.prices, path.d)
        values.append(discounted_integrals(path.times, f, params.rho))
        terminal.append(f[-1])
        horizon = float(path.times[-1])
    if not values:
        raise ConfigurationError("no paths supplied")
    bound = tail_bound(params.rho, horizon, terminal)
    _check_tail(bound, tail_tol)
    return Estimate.from_samples(values, bound)


def wealth_objective_value(paths: Sequence[SimPath], params: DynamicParams, agent: int = 0) -> Estimate:
    """Discounted wealth increments net of the quadratic-variation penalty.

    Discrete version of ``E int exp(-rho t) (dW - gamma/2 d<W>)`` with
    ``d<W> = (sigma_D X)^2 dt``.
    """
    values = []
    for path in paths:
        if getattr(path, "wealth", None) is None or getattr(path, "cash", None) is None:
            raise ConfigurationError("path has no wealth bookkeeping")
        t = path.times
        dt = np.diff(t)
        x = path.inventories[:, agent]
        dw = np.diff(path.wealth[:, agent])
        dqv = params.sigma_d**2 * (x[1:] ** 2 + x[:-1] ** 2) / 2 * dt
        disc = np.exp(-params.rho * t[:-1])
        values.append(math.fsum(disc * (dw - params.gamma / 2 * dqv)))
    return Estimate.from_samples(values)


# ---------------------------------------------------------------------------
# deviations against the residual supply curve


def residual_price(state, x, q, constants: EquilibriumConstants, params: DynamicParams):
    """Price a single maker gets for trading at rate ``q`` with inventory ``x``.

    The other ``N - 1`` makers quote the linear schedule and absorb the rest
    of the liquidity flow, so the price is linear in ``q`` with slope
    ``lam / (N - 1)``.

    Args:
        state: :class:`MarketState` or ``(d, s_target, s)`` arrays.
        x: the maker's inventory.
        q: the maker's trading rate.
    """
    d, st, s = _exogenous_coords(state)
    return _residual_price(constants, params, d, st, s, x, q)


def _exogenous_coords(state):
    if isinstance(state, MarketState):
        return state.d, state.s_target, state.s_agg
    d, st, s = state
    return np.asarray(d, dtype=float), np.asarray(st, dtype=float), np.asarray(s, dtype=float)


def _residual_price(k: EquilibriumConstants, params: DynamicParams, d, st, s, x, q):
    m = params.n_makers - 1
    lp = k.lam * params.phi / m
    return (k.a / m + k.c + lp) * s + k.b * d + k.xi - lp * st - k.a / m * x + k.lam / m * q


def candidate_rate(constants: EquilibriumConstants, params: DynamicParams, x, s, s_target):
    """Candidate equilibrium rate ``(a/lam)(x - s/N) - (phi/N)(s - s_target)``."""
    n = params.n_makers
    return constants.a / constants.lam * (x - s / n) - params.phi / n * (s - s_target)


@dataclass(frozen=True)
class DeviationPolicy:
    """A unilateral deviation from the candidate rate ``Q``.

    Kinds:
        ``scale``: trade ``(1 + eps) Q``.
        ``shift``: trade ``Q + delta`` (shares per unit time).
        ``alt_linear``: quote as if the constants were ``(a_alt, lam_alt)``,
        i.e. trade ``(a_alt/lam_alt)(x - s/N) + flow/N``.
    """

    kind: str
    eps: float = 0.0
    delta: float = 0.0
    a_alt: float = 0.0
    lam_alt: float = 1.0

    def __post_init__(self):
        if self.kind not in ("scale", "shift", "alt_linear"):
            raise ValueError(f"unknown deviation kind {self.kind!r}")

    @classmethod
    def identity(cls) -> "DeviationPolicy":
        return cls("scale", eps=0.0)

    @classmethod
    def scale(cls, eps: float) -> "DeviationPolicy":
        return cls("scale", eps=float(eps))

    @classmethod
    def shift(cls, delta: float) -> "DeviationPolicy":
        return cls("shift", delta=float(delta))

    @classmethod
    def alt_linear(cls, a_alt: float, lam_alt: float) -> "DeviationPolicy":
        return cls("alt_linear", a_alt=float(a_alt), lam_alt=float(lam_alt))

    @property
    def label(self) -> str:
        if self.kind == "scale":
            return f"scale({self.eps:+g})"
        if self.kind == "shift":
            return f"shift({self.delta:+g})"
        return f"alt_linear(a={self.a_alt:.6g}, lam={self.lam_alt:.6g})"

    @property
    def is_identity(self) -> bool:
        return (self.kind == "scale" and self.eps == 0.0) or (self.kind == "shift" and self.delta == 0.0)

    def gain(self, constants: EquilibriumConstants) -> float:
        """Coefficient on own inventory in the rate."""
        g = constants.a / constants.lam
        if self.kind == "scale":
            return (1 + self.eps) * g
        if self.kind == "shift":
            return g
        return self.a_alt / self.lam_alt

    def drive_coefficients(self, constants: EquilibriumConstants, params: DynamicParams) -> tuple:
        """``(alpha, beta, kappa)`` with drive ``= alpha * h0 + beta + kappa * s``.

        ``h0 = (a/lam)(-s/N) + flow/N`` is the candidate's drive.
        """
        if self.kind == "scale":
            return 1.0 + self.eps, 0.0, 0.0
        if self.kind == "shift":
            return 1.0, self.delta, 0.0
        g = constants.a / constants.lam
        return 1.0, 0.0, (g - self.a_alt / self.lam_alt) / params.n_makers

    def drive(self, constants: EquilibriumConstants, params: DynamicParams, s, flow):
        """Part of the rate that does not depend on own inventory."""
        n = params.n_makers
        h0 = -constants.a / constants.lam * np.asarray(s) / n + np.asarray(flow) / n
        alpha, beta, kappa = self.drive_coefficients(constants, params)
        return alpha * h0 + beta + kappa * np.asarray(s)

    def check_admissible(self, constants: EquilibriumConstants, params: DynamicParams):
        """Reject rates whose inventory can outgrow the discounting.

        Inventory under a linear rate grows like ``exp(gain t)``; the
        quadratic reward stays integrable against ``exp(-rho t)`` exactly when
        ``gain < rho / 2``.
        """
        if self.kind == "alt_linear" and not self.lam_alt > 0:
            raise AdmissibilityError(f"{self.label}: lam_alt must be > 0")
        g = self.gain(constants)
        if not g < params.rho / 2:
            raise AdmissibilityError(f"{self.label}: inventory gain {g:.6g} >= rho/2 = {params.rho / 2:.6g}")


def standard_policy_grid(constants: EquilibriumConstants, scales=(0.05, 0.1, 0.2, 0.4), shifts=(0.25, 0.5),
                         alt_rel=0.2) -> list:
    """Identity plus symmetric scale, shift and alternative-``a`` deviations."""
    grid = [DeviationPolicy.identity()]
    grid += [DeviationPolicy.scale(s * e) for e in scales for s in (-1, 1)]
    grid += [DeviationPolicy.shift(s * d) for d in shifts for s in (-1, 1)]
    grid += [DeviationPolicy.alt_linear(constants.a * (1 + s * alt_rel), constants.lam) for s in (-1, 1)]
    return grid


@dataclass(frozen=True)
class DeviationResult:
    policy: DeviationPolicy
    payoff: Estimate
    gap: Estimate  # payoff minus candidate payoff, paired path by path


@dataclass(frozen=True)
class NashGapReport:
    max_gap: float
    half_width: float
    worst: DeviationPolicy
    reference: Estimate
    results: tuple

    def _excess(self, r) -> float:
        # rounding-level differences (identical trajectories) are not gains
        return r.gap.value - r.gap.half_width - 1e-12 * (1.0 + abs(self.reference.value))

    @property
    def passed(self) -> bool:
        """No deviation beats the candidate by more than its CI half-width."""
        return all(self._excess(r) <= 0 for r in self.results)

    @property
    def profitable(self) -> list:
        """Deviations whose gain is positive beyond the CI half-width."""
        return [r for r in self.results if self._excess(r) > 0]


def evaluate_policies(policies: Sequence[DeviationPolicy], config: SimConfig, params: DynamicParams,
                      constants: EquilibriumConstants, init: MarketState, agent: int = 0,
                      tail_tol: float | None = None) -> tuple[Estimate, list]:
    """Payoffs of several deviations on common random numbers.

    Returns:
        The candidate's payoff estimate and one :class:`DeviationResult` per
        policy, in input order.
    """
    for pol in policies:
        pol.check_admissible(constants, params)
    dt = config.step_size
    times = config.times
    x0 = float(init.inventories[agent])
    identity = DeviationPolicy.identity()
    everything = [identity] + list(policies)
    values = [[] for _ in everything]
    terminal = [[] for _ in everything]
    m = params.n_makers - 1
    risk = params.gamma * params.sigma_d**2
    own, slope = -constants.a / m, constants.lam / m
    weights = _trapezoid_weights(times, params.rho)
    coefs = [(pol.gain(constants), *pol.drive_coefficients(constants, params)) for pol in everything]
    for exo in iter_exogenous(config, params, init):
        # residual price minus valuation at zero own trade and inventory
        base = _residual_price(constants, params, exo.d, exo.s_target, exo.s_agg, 0.0, 0.0) - exo.d
        h0 = candidate_rate(constants, params, 0.0, exo.s_agg, exo.s_target)
        # every drive is alpha*h0 + beta + kappa*s, so the reward integrals reduce
        # to weighted inner products of x and of the fields (h0, 1, s, base)
        fields = np.stack([h0, np.ones_like(h0), exo.s_agg])
        fw = fields * weights
        cross = np.einsum("kij,lij->kli", fw, fields)  # <f_k, f_l>_w
        with_base = np.einsum("kij,ij->ki", fw, base)  # <f_k, base>_w
        pair = fields[:, :, 1:] + fields[:, :, :-1]
        for i, (g, alpha, beta, kappa) in enumerate(coefs):
            c = np.array([alpha, beta, kappa])
            x = _trapezoid_from_pairs(g, c @ pair.reshape(3, -1), x0, dt, h0.shape)
            xw = x * weights
            x_fields = np.einsum("ij,kij->ki", xw, fields)
            xh = c @ x_fields
            hh = c @ np.einsum("kli,l->ki", cross, c)
            hb = c @ with_base
            total = (
                (-g * own - slope * g * g - risk / 2) * np.einsum("ij,ij->i", xw, x)
                + (-own - 2 * slope * g) * xh
                - g * np.einsum("ij,ij->i", xw, base)
                + params.mu * x_fields[1]
                - hb
                - slope * hh
            )
            values[i].append(total)
            xT = x[:, -1]
            qT = g * xT + c @ fields[:, :, -1]
            terminal[i].append(-qT * (base[:, -1] + own * xT + slope * qT) + params.mu * xT - risk / 2 * xT * xT)
    values = [np.concatenate(v) for v in values]
    bounds = [tail_bound(params.rho, float(times[-1]), np.concatenate(t)) for t in terminal]
    for b in bounds:
        _check_tail(b, tail_tol)
    reference = Estimate.from_samples(values[0], bounds[0])
    results = [
        DeviationResult(pol, Estimate.from_samples(v, b), Estimate.from_samples(v - values[0], max(b, bounds[0])))
        for pol, v, b in zip(policies, values[1:], bounds[1:])
    ]
    return reference, results


def deviation_payoff(policy: DeviationPolicy, config: SimConfig, params: DynamicParams,
                     constants: EquilibriumConstants, init: MarketState, agent: int = 0,
                     tail_tol: float | None = None) -> DeviationResult:
    """Payoff of one deviation, with its paired gap against the candidate."""
    return evaluate_policies([policy], config, params, constants, init, agent, tail_tol)[1][0]


def nash_gap(policy_grid: Sequence[DeviationPolicy], config: SimConfig, params: DynamicParams,
             constants: EquilibriumConstants, init: MarketState, agent: int = 0,
             tail_tol: float | None = None) -> NashGapReport:
    """Largest payoff improvement over the candidate across ``policy_grid``."""
    if not any(p.is_identity for p in policy_grid):
        raise ConfigurationError("policy grid must contain the identity deviation")
    reference, results = evaluate_policies(policy_grid, config, params, constants, init, agent, tail_tol)
    worst = max(results, key=lambda r: r.gap.value - r.gap.half_width)
    return NashGapReport(worst.gap.value, worst.gap.half_width, worst.policy, reference, tuple(results))


# ---------------------------------------------------------------------------
# value function and HJB

_NAMES = ("1", "x", "d", "st", "s")
X_MONOMIALS = ("xx", "xd", "xst", "xs", "x")
W_MONOMIALS = ("1", "d", "st", "s", "dd", "dst", "ds", "stst", "sts", "ss")
ALL_MONOMIALS = X_MONOMIALS + W_MONOMIALS


def _index_pair(mono: str) -> tuple[int, int]:
    if mono == "1":
        return 0, 0
    parts = []
    rest = mono
    while rest:
        for name in ("st", "x", "d", "s"):
            if rest.startswith(name):
                parts.append(_NAMES.index(name))
                rest = rest[len(name):]
                break
    if len(parts) == 1:
        return 0, parts[0]
    return tuple(sorted(parts))


def _matrix_from_coefficients(coefs: dict) -> np.ndarray:
    m = np.zeros((5, 5))
    for mono, c in coefs.items():
        i, j = _index_pair(mono)
        if i == j:
            m[i, i] += c
        else:
            m[i, j] += c / 2
            m[j, i] += c / 2
    return m


def _coefficients_from_matrix(m: np.ndarray) -> dict:
    out = {}
    for mono in ALL_MONOMIALS:
        i, j = _index_pair(mono)
        out[mono] = float(m[i, i] if i == j else m[i, j] + m[j, i])
    return out


@dataclass(frozen=True)
class ValueFunction:
    """Quadratic value ``V(x, d, s_target, s)`` of a single maker.

    ``xx, xd, xst, xs, x`` are the coefficients of the monomials involving own
    inventory; ``w`` holds the 10 coefficients of the remaining quadratic
    polynomial in ``(d, s_target, s)``, ordered as :data:`W_MONOMIALS`.
    """

    xx: float
    xd: float
    xst: float
    xs: float
    x: float
    w: tuple = (0.0,) * 10

    @property
    def coefficients(self) -> dict:
        out = dict(zip(X_MONOMIALS, (self.xx, self.xd, self.xst, self.xs, self.x)))
        out.update(zip(W_MONOMIALS, self.w))
        return out

    @property
    def matrix(self) -> np.ndarray:
        return _matrix_from_coefficients(self.coefficients)

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "ValueFunction":
        c = _coefficients_from_matrix(m)
        return cls(*(c[k] for k in X_MONOMIALS), w=tuple(c[k] for k in W_MONOMIALS))

    def perturbed(self, **deltas) -> "ValueFunction":
        """Copy with coefficients shifted additively, e.g. ``perturbed(xx=1e-3)``."""
        c = self.coefficients
        for k, v in deltas.items():
            c[k] += v
        return ValueFunction(*(c[k] for k in X_MONOMIALS), w=tuple(c[k] for k in W_MONOMIALS))

    def __call__(self, x, d, st, s):
        z = _stack(x, d, st, s)
        return np.einsum("...i,ij,...j->...", z, self.matrix, z)

    def gradient(self, x, d, st, s) -> np.ndarray:
        """``(V_x, V_d, V_st, V_s)`` stacked on the last axis."""
        z = _stack(x, d, st, s)
        return 2 * (z @ self.matrix)[..., 1:]


def _stack(x, d, st, s) -> np.ndarray:
    x, d, st, s = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, d, st, s)))
    return np.stack([np.ones_like(x), x, d, st, s], axis=-1)


def _coords(state, agent: int = 0):
    if isinstance(state, MarketState):
        return float(state.inventories[agent]), state.d, state.s_target, state.s_agg
    arr = np.asarray(state, dtype=float)
    return arr[..., 0], arr[..., 1], arr[..., 2], arr[..., 3]


def _sym(u, v):
    m = np.outer(u, v)
    return (m + m.T) / 2


def _linear(v):
    return _sym(np.eye(5)[0], v)


def _price_form(k: EquilibriumConstants, params: DynamicParams) -> np.ndarray:
    """Residual price at zero own trade as a linear form in ``z``."""
    m = params.n_makers - 1
    lp = k.lam * params.phi / m
    return np.array([k.xi, -k.a / m, k.b, -lp, k.a / m + k.c + lp])


def _candidate_form(k: EquilibriumConstants, params: DynamicParams) -> np.ndarray:
    n, phi = params.n_makers, params.phi
    g = k.a / k.lam
    return np.array([0.0, g, 0.0, phi / n, -g / n - phi / n])


def _hamiltonian_matrix(m: np.ndarray, q_form: np.ndarray, k: EquilibriumConstants, params: DynamicParams):
    """Quadratic form of ``H(z, grad V, hess V, q(z))`` for a linear rate ``q``."""
    e = np.eye(5)
    grad = 2 * m  # row i is the linear form of dV/dz_i
    vx, vd, vst, vs = grad[1], grad[2], grad[3], grad[4]
    price = _price_form(k, params) + k.lam / (params.n_makers - 1) * q_form
    risk = params.gamma * params.sigma_d**2
    h = _sym(q_form, vx) + params.mu * _linear(vd)
    h -= params.psi * _sym(e[3], vst)
    h -= params.phi * _sym(e[4] - e[3], vs)
    h[0, 0] += params.sigma_d**2 * m[2, 2] + params.sigma_target**2 * m[3, 3]
    h += params.mu * _linear(e[1]) - risk / 2 * _sym(e[1], e[1])
    h -= _sym(q_form, price - e[2])
    return h


def _hjb_matrix(m, k, params):
    return params.rho * m - _hamiltonian_matrix(m, _candidate_form(k, params), k, params)


def solve_value_function(params: DynamicParams, constants: EquilibriumConstants) -> ValueFunction:
    """Value function of a maker facing the residual curve of ``constants``.

    The own-inventory block is explicit; the 10 coefficients of the remaining
    polynomial solve the linear system obtained by matching the coefficients
    of ``rho V - H(., Q)`` on the monomials free of ``x``.
    """
    k = constants
    n, phi = params.n_makers, params.phi
    w = (n - 2) / (n * (n - 1))
    xblock = dict(
        xx=float(k.a / (2 * (n - 1))),
        xd=k.b - 1,
        xst=float(-w * k.lam * phi),
        xs=float(w * (k.a + k.lam * phi) + k.c),
        x=k.xi,
    )
    base_v = ValueFunction(**xblock)
    m0 = base_v.matrix
    r0 = _coefficients_from_matrix(_hjb_matrix(m0, k, params))
    rhs = -np.array([r0[mono] for mono in W_MONOMIALS])
    cols = []
    for mono in W_MONOMIALS:
        m1 = m0 + _matrix_from_coefficients({mono: 1.0})
        r1 = _coefficients_from_matrix(_hjb_matrix(m1, k, params))
        cols.append([r1[mm] - r0[mm] for mm in W_MONOMIALS])
    system = np.array(cols).T
    try:
        sol = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError as exc:
        raise InvalidConstantsError(f"coefficient-matching system for w is singular: {exc}") from exc
    return replace(base_v, w=tuple(float(v) for v in sol))


def hjb_coefficients(value: ValueFunction, params: DynamicParams, constants: EquilibriumConstants) -> dict:
    """Coefficients of ``rho V - H(., grad V, hess V, Q)`` by monomial (all zero at equilibrium)."""
    return _coefficients_from_matrix(_hjb_matrix(value.matrix, constants, params))


def _hamiltonian_parts(value: ValueFunction, state, params, constants, agent=0):
    x, d, st, s = _coords(state, agent)
    grad = value.gradient(x, d, st, s)
    vx, vd, vst, vs = grad[..., 0], grad[..., 1], grad[..., 2], grad[..., 3]
    m = value.matrix
    risk = params.gamma * params.sigma_d**2
    h0 = (params.mu * vd - params.psi * st * vst - params.phi * (s - st) * vs
          + params.sigma_d**2 * m[2, 2] + params.sigma_target**2 * m[3, 3]
          + params.mu * x - risk / 2 * x * x)
    p0 = _residual_price(constants, params, d, st, s, x, 0.0)
    slope = vx - p0 + d  # H = h0 + q * slope - lam/(N-1) q^2
    return (x, d, st, s), h0, slope, vx


def _curvature(constants, params):
    if not constants.lam > 0:
        raise InvalidConstantsError(f"Hamiltonian is unbounded in q for lam = {constants.lam}")
    return constants.lam / (params.n_makers - 1)


def hjb_residual(value: ValueFunction, state, params: DynamicParams, constants: EquilibriumConstants, agent: int = 0):
    """``sup_q H - rho V`` at ``state`` (array of ``(x, d, s_target, s)`` rows or a MarketState)."""
    curv = _curvature(constants, params)
    coords, h0, slope, _ = _hamiltonian_parts(value, state, params, constants, agent)
    return h0 + slope**2 / (4 * curv) - params.rho * value(*coords)


def hamiltonian_argmax(value: ValueFunction, state, params: DynamicParams, constants: EquilibriumConstants,
                       agent: int = 0):
    curv = _curvature(constants, params)
    _, _, slope, _ = _hamiltonian_parts(value, state, params, constants, agent)
    return slope / (2 * curv)


def foc_residual(value: ValueFunction, state, params: DynamicParams, constants: EquilibriumConstants,
                 agent: int = 0, rate=None):
    """``V_x - (P(q) - d + lam/(N-1) q)`` at ``q = rate`` (default: the candidate rate)."""
    (x, d, st, s), _, _, vx = _hamiltonian_parts(value, state, params, constants, agent)
    q = candidate_rate(constants, params, x, s, st) if rate is None else rate
    p = _residual_price(constants, params, d, st, s, x, q)
    return vx - (p - d + constants.lam / (params.n_makers - 1) * q)


# ---------------------------------------------------------------------------
# dynamic programming along paths


@dataclass(frozen=True)
class BellmanReport:
    taus: tuple
    drift: tuple  # Estimates of E[e^{-rho tau} V_tau + int_0^tau e^{-rho s} f ds] - V_0
    discounted_value: tuple  # e^{-rho tau} E[V(state_tau)]
    initial_value: float

    @property
    def passed(self) -> bool:
        return all(e.covers(0.0, slack=1e-12) for e in self.drift)


def bellman_consistency(paths: Iterable[SimPath], value: ValueFunction, params: DynamicParams,
                        taus: Sequence[float] = (1.0, 2.0, 5.0), agent: int = 0) -> BellmanReport:
    """Check the dynamic programming identity along equilibrium paths.

    Args:
        paths: equilibrium paths (any iterable, consumed once).
        value: the maker's value function.
        params: model parameters.
        taus: checkpoints, each on the paths' time grid.
        agent: maker index.
    """
    taus = tuple(float(t) for t in taus)
    drifts = [[] for _ in taus]
    vals = [[] for _ in taus]
    v0 = None
    for path in paths:
        t = path.times
        x = path.inventories[:, agent]
        idx = [int(np.argmin(np.abs(t - tau))) for tau in taus]
        for tau, i in zip(taus, idx):
            if abs(t[i] - tau) > 1e-9 * max(1.0, tau):
                raise ConfigurationError(f"tau={tau} is not on the path grid")
        f = reward_rate(params, x, path.rates[:, agent], path.prices, path.d)
        v_path = value(x, path.d, path.s_target, path.s_agg)
        start = float(v_path[0])
        v0 = start if v0 is None else v0
        for j, i in enumerate(idx):
            disc_v = math.exp(-params.rho * t[i]) * float(v_path[i])
            run = float(discounted_integrals(t[: i + 1], f[: i + 1], params.rho)) if i > 0 else 0.0
            drifts[j].append(disc_v + run - start)
            vals[j].append(disc_v)
    if v0 is None:
        raise ConfigurationError("no paths supplied")
    return BellmanReport(
        taus,
        tuple(Estimate.from_samples(d) for d in drifts),
        tuple(math.fsum(v) / len(v) for v in vals),
        v0,
    )


# ---------------------------------------------------------------------------
# competitive-limit pricing on frozen paths


def discounted_exposure(times, s_path, rho: float, gamma0: float, sigma_d: float) -> np.ndarray:
    """``int_t^T exp(-rho (u - t)) gamma0 sigma_D^2 S_u du`` at every grid time (trapezoid)."""
    times = np.asarray(times, dtype=float)
    s_path = np.asarray(s_path, dtype=float)
    f = gamma0 * sigma_d**2 * s_path * np.exp(-rho * times)
    pieces = np.diff(times) * (f[1:] + f[:-1]) / 2
    tail = np.concatenate([np.cumsum(pieces[::-1])[::-1], [0.0]])
    return tail * np.exp(rho * times)


def risk_discount(params: DynamicParams, constants: EquilibriumConstants, s, flow):
    """``D + mu/rho - p``: inventory discount plus flow impact in the equilibrium price."""
    n = params.n_makers
    return constants.theta * params.gamma * params.sigma_d**2 / n * np.asarray(s) + constants.lam / n * np.asarray(flow)
