"""Linear symmetric Nash equilibrium of the continuous-time market-making game.

State: valuation ``D`` (arithmetic Brownian motion), liquidity target
``S_target`` (Ornstein-Uhlenbeck), aggregate maker inventory ``S`` with
``dS = flow dt`` and ``flow = -phi (S - S_target)``, and individual
inventories ``X^n`` summing to ``S``.

Every maker quotes the inverse demand ``p = a X + b D + c S + xi - lam q``.
The equilibrium constants are closed form; :func:`system_residuals` evaluates
the algebraic fixed-point system they solve.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InconsistentStateError, InvalidConstantsError, InvalidParameterError

__all__ = [
    "DynamicParams",
    "EquilibriumConstants",
    "MarketState",
    "compute_constants",
    "admissible",
    "flow_rate",
    "profile_price",
    "equilibrium_price",
    "midprice",
    "profile_rates",
    "equilibrium_rates",
    "price_impact",
    "liquidity",
    "system_residuals",
    "comparative_static_sign",
    "competitive_limit",
]


@dataclass(frozen=True)
class DynamicParams:
    n_makers: int
    rho: float
    gamma: float
    sigma_d: float
    phi: float
    psi: float
    sigma_target: float
    mu: float = 0.0

    def __post_init__(self):
        problems = []
        if int(self.n_makers) != self.n_makers or self.n_makers < 3:
            problems.append(f"n_makers must be an integer >= 3, got {self.n_makers}")
        for name in ("rho", "gamma", "sigma_d", "phi", "psi", "sigma_target"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be > 0, got {getattr(self, name)}")
        if problems:
            raise InvalidParameterError("; ".join(problems))

    def replace(self, **changes) -> "DynamicParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class EquilibriumConstants:
    a: float
    lam: float
    b: float
    c: float
    xi: float
    delta: float
    kappa: float
    theta: float

    @property
    def reversion(self) -> float:
        """``a / lam``: the rate at which inventory deviations grow (negative)."""
        return self.a / self.lam

    def perturbed(self, **scales) -> "EquilibriumConstants":
        """Copy with fields multiplied, e.g. ``perturbed(lam=1.5)``.

        Only the schedule fields change; ``delta``, ``kappa`` and ``theta`` keep
        their equilibrium values, except ``kappa`` which tracks ``-a / lam``.
        """
        out = replace(self, **{k: getattr(self, k) * v for k, v in scales.items()})
        return replace(out, kappa=-out.a / out.lam if out.lam != 0 else np.nan)


@dataclass
class MarketState:
    t: float
    d: float
    s_target: float
    s_agg: float
    inventories: np.ndarray

    def __post_init__(self):
        self.inventories = np.asarray(self.inventories, dtype=float)
        total = float(self.inventories.sum())
        if abs(total - self.s_agg) > 1e-9 * max(1.0, abs(self.s_agg), float(np.abs(self.inventories).max(initial=0.0))):
            raise InconsistentStateError(f"inventories sum to {total}, aggregate is {self.s_agg}")

    @classmethod
    def balanced(cls, n_makers: int, d=0.0, s_target=0.0, s_agg=0.0, t=0.0) -> "MarketState":
        return cls(t, d, s_target, s_agg, np.full(n_makers, s_agg / n_makers))


def _delta(n, rho, phi, psi):
    return np.sqrt(rho**2 + 2 * (n - 2) * (rho + psi) * (rho + phi))


def compute_constants(params: DynamicParams) -> EquilibriumConstants:
    n, rho, phi, psi = params.n_makers, params.rho, params.phi, params.psi
    risk = params.gamma * params.sigma_d**2
    delta = _delta(n, rho, phi, psi)
    both = (rho + psi) * (rho + phi)
    a = -(n - 1) / delta * risk
    lam = (n - 1) / (n - 2) * rho * risk / both * (1 / delta + 1 / rho)
    c = -rho * (rho + psi + phi) / both * risk / n * (1 / delta + 1 / rho) + risk / delta
    theta = ((rho + psi + phi) * delta - psi * phi) / (both * delta)
    # -a/lam; this is the decay rate of X^n - S/N under the quoted schedules
    kappa = (n - 2) * both / (rho + delta)
    return EquilibriumConstants(a, lam, 1.0, c, params.mu / rho, delta, kappa, theta)


def admissible(a: float, lam: float, rho: float) -> bool:
    return bool(lam > 0 and a / lam < rho / 2)


def _check_admissible(constants: EquilibriumConstants, params: DynamicParams):
    if not admissible(constants.a, constants.lam, params.rho):
        raise InvalidConstantsError(
            f"inadmissible constants: lam={constants.lam}, a/lam={constants.a / constants.lam if constants.lam else np.nan}"
        )


def flow_rate(params: DynamicParams, s_agg, s_target):
    """Liquidity traders' sell rate ``-phi (S - S_target)``."""
    return -params.phi * (np.asarray(s_agg) - np.asarray(s_target))


def profile_price(constants: EquilibriumConstants, n_makers: int, d, s_agg, flow):
    """Clearing price when all makers quote the linear schedule ``constants``."""
    k = constants
    return (k.a / n_makers + k.c) * s_agg + k.b * d + k.xi - k.lam / n_makers * flow


def midprice(params: DynamicParams, constants: EquilibriumConstants, d, s_agg):
    """Equilibrium price in the absence of liquidity flow."""
    n = params.n_makers
    return d + params.mu / params.rho - constants.theta * params.gamma * params.sigma_d**2 / n * np.asarray(s_agg)


def equilibrium_price(constants: EquilibriumConstants, params: DynamicParams, state: MarketState) -> float:
    """Equilibrium price written in terms of the exogenous parameters."""
    _check_admissible(constants, params)
    flow = flow_rate(params, state.s_agg, state.s_target)
    return float(midprice(params, constants, state.d, state.s_agg) - price_impact(params) * flow)


def profile_rates(constants: EquilibriumConstants, inventories, s_agg, flow):
    """Trading rates under the linear symmetric profile; they sum to ``flow``."""
    inventories = np.asarray(inventories, dtype=float)
    n = inventories.shape[-1]
    s_agg = np.asarray(s_agg)[..., None]
    flow = np.asarray(flow)[..., None]
    return constants.a / constants.lam * (inventories - s_agg / n) + flow / n


def equilibrium_rates(constants: EquilibriumConstants, params: DynamicParams, state: MarketState) -> np.ndarray:
    _check_admissible(constants, params)
    n = params.n_makers
    flow = flow_rate(params, state.s_agg, state.s_target)
    return -constants.kappa * (state.inventories - state.s_agg / n) + flow / n


def _impact(n, rho, gamma, sigma_d, phi, psi):
    delta = _delta(n, rho, phi, psi)
    return gamma / n * (n - 1) / (n - 2) * rho * sigma_d**2 / ((rho + psi) * (rho + phi)) * (1 / delta + 1 / rho)


def price_impact(params: DynamicParams) -> float:
    """Slope of the supply curve faced by the liquidity traders (``lam / N``)."""
    p = params
    return float(_impact(p.n_makers, p.rho, p.gamma, p.sigma_d, p.phi, p.psi))


def liquidity(params: DynamicParams) -> float:
    return 1.0 / price_impact(params)


def system_residuals(constants: EquilibriumConstants, params: DynamicParams) -> tuple[float, float, float]:
    """LHS - RHS of the three coefficient-matching equations for ``a, lam, c``."""
    a, lam, c = constants.a, constants.lam, constants.c
    if lam == 0:
        raise ZeroDivisionError("lam must be non-zero")
    n, rho, phi, psi = params.n_makers, params.rho, params.phi, params.psi
    risk = params.gamma * params.sigma_d**2
    w = (n - 2) / (n * (n - 1))
    r_xx = rho / 2 * a / (n - 1) - (a * a / (lam * (n - 1)) - risk / 2)
    r_xst = -rho * w * lam - (a / (n - 1) + w * (psi + phi) * lam + c)
    r_xs = rho * (w * (a + lam * phi) + c) - (
        -2 * a * a / (n * (n - 1) * lam) - w * phi**2 * lam - phi * (a / (n - 1) + c)
    )
    return float(r_xx), float(r_xst), float(r_xs)


_SIGNS = {"gamma": -1, "sigma_d": -1, "n_competition": 1, "psi": 1}


def comparative_static_sign(params: DynamicParams, which: str, rel_step: float = 1e-5) -> int:
    """Sign of the derivative of liquidity in ``which``.

    ``which`` is one of ``gamma``, ``sigma_d``, ``psi`` or ``n_competition``;
    the last treats N as continuous and holds ``gamma / N`` fixed.
    """
    if which not in _SIGNS:
        raise ValueError(f"unknown parameter {which!r}; expected one of {sorted(_SIGNS)}")
    p = params
    base = dict(n=float(p.n_makers), rho=p.rho, gamma=p.gamma, sigma_d=p.sigma_d, phi=p.phi, psi=p.psi)
    key = "n" if which == "n_competition" else which
    x0 = base[key]
    h = rel_step * abs(x0)
    lower_bound = 2.0 if key == "n" else 0.0

    def liq(value):
        args = dict(base)
        args[key] = value
        if key == "n":
            args["gamma"] = p.gamma / p.n_makers * value
        return 1.0 / _impact(**args)

    if x0 - h > lower_bound:
        deriv = (liq(x0 + h) - liq(x0 - h)) / (2 * h)
    else:
        deriv = (liq(x0 + h) - liq(x0)) / h
    return int(np.sign(deriv))


def competitive_limit(params_base: DynamicParams, gamma0: float, n_grid) -> tuple[np.ndarray, float]:
    """Price impact along ``gamma = N gamma0`` and its ``N -> inf`` limit."""
    if not gamma0 > 0:
        raise InvalidParameterError(f"gamma0 must be > 0, got {gamma0}")
    p = params_base
    impacts = []
    for n in n_grid:
        if n < 3:
            raise InvalidParameterError(f"n_grid values must be >= 3, got {n}")
        impacts.append(_impact(n, p.rho, n * gamma0, p.sigma_d, p.phi, p.psi))
    limit = gamma0 * p.sigma_d**2 / ((p.rho + p.phi) * (p.rho + p.psi))
    return np.array(impacts), float(limit)
