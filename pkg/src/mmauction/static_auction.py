"""One-period demand-schedule auction between N CARA market makers.

Each maker submits an affine schedule ``q = a - b p``; the auctioneer picks the
price that clears the liquidity traders' flow ``u``. The symmetric equilibria
are available in closed form, and :func:`brute_force_verify` checks them by
maximising the exact expected utility over a grid of reduced strategies
``q = A + B u``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    InconsistentStateError,
    InvalidParameterError,
    InvalidScheduleError,
    NoEquilibriumError,
    UnsupportedDistributionError,
    WrongRegimeError,
)

__all__ = [
    "FlowDistribution",
    "StaticParams",
    "DemandSchedule",
    "SupplyCurve",
    "AuctionOutcome",
    "GridSpec",
    "VerificationResult",
    "clear_auction",
    "degenerate_equilibrium_price",
    "degenerate_supply_curve",
    "symmetric_equilibrium",
    "symmetric_equilibrium_price",
    "inventory_equilibrium",
    "inventory_equilibrium_price",
    "inventory_equilibrium_quantities",
    "post_trade_price",
    "best_response_quantity",
    "expected_utility",
    "candidate_strategy",
    "brute_force_verify",
    "pareto_contraction",
]


@dataclass(frozen=True)
class FlowDistribution:
    """Distribution of the liquidity traders' flow ``u`` (shares)."""

    kind: str
    values: tuple = ()
    probs: tuple = ()
    mean: float = 0.0
    std: float = 0.0

    @classmethod
    def degenerate(cls, u: float) -> "FlowDistribution":
        return cls("degenerate", (float(u),), (1.0,), mean=float(u))

    @classmethod
    def two_point(cls, u1: float, p1: float, u2: float) -> "FlowDistribution":
        if not 0.0 < p1 < 1.0:
            raise InvalidParameterError(f"two_point flow needs 0 < p1 < 1, got {p1}")
        if u1 == u2:
            raise InvalidParameterError("two_point flow needs distinct support points")
        mean = p1 * u1 + (1.0 - p1) * u2
        std = abs(u1 - u2) * np.sqrt(p1 * (1.0 - p1))
        return cls("two_point", (float(u1), float(u2)), (float(p1), 1.0 - p1), mean, std)

    @classmethod
    def gaussian(cls, mean: float, std: float) -> "FlowDistribution":
        if not std > 0:
            raise InvalidParameterError(f"gaussian flow needs std > 0, got {std}")
        return cls("gaussian", mean=float(mean), std=float(std))

    @property
    def is_degenerate(self) -> bool:
        return self.kind == "degenerate"

    @property
    def finite_support(self) -> bool:
        return self.kind in ("degenerate", "two_point")

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        """Support points and probabilities of a finite-support flow."""
        if not self.finite_support:
            raise UnsupportedDistributionError(
                f"{self.kind} flow has no finite support; use the Monte Carlo routines"
            )
        return np.asarray(self.values, dtype=float), np.asarray(self.probs, dtype=float)


@dataclass(frozen=True)
class StaticParams:
    n_makers: int
    gamma: float
    sigma: float
    mu: float = 0.0
    total_shares: float = 0.0
    flow: FlowDistribution = field(default_factory=lambda: FlowDistribution.two_point(-1.0, 0.5, 1.0))

    def __post_init__(self):
        problems = []
        if int(self.n_makers) != self.n_makers or self.n_makers < 2:
            problems.append(f"n_makers must be an integer >= 2, got {self.n_makers}")
        if not self.gamma > 0:
            problems.append(f"gamma must be > 0, got {self.gamma}")
        if not self.sigma > 0:
            problems.append(f"sigma must be > 0, got {self.sigma}")
        if problems:
            raise InvalidParameterError("; ".join(problems))

    @property
    def risk(self) -> float:
        """gamma * sigma**2, the per-share risk charge."""
        return self.gamma * self.sigma**2


@dataclass(frozen=True)
class DemandSchedule:
    intercept: float
    slope: float

    def quantity(self, price):
        return self.intercept - self.slope * price


@dataclass(frozen=True)
class SupplyCurve:
    """Residual supply ``p = F + C (S - x) - lam u + lam q`` faced by one maker."""

    level: float
    inventory_coef: float
    impact: float

    def __post_init__(self):
        if not self.impact > 0:
            raise InvalidParameterError(f"supply curve impact must be > 0, got {self.impact}")

    def price(self, q, u, total_shares=0.0, x=0.0):
        return (
            self.level
            + self.inventory_coef * (total_shares - x)
            - self.impact * u
            + self.impact * q
        )


@dataclass(frozen=True)
class AuctionOutcome:
    price: float
    quantities: np.ndarray


def clear_auction(schedules: Sequence[DemandSchedule], u: float) -> AuctionOutcome:
    """Clear the flow ``u`` against affine demand schedules."""
    if len(schedules) < 2:
        raise InvalidScheduleError("need at least 2 demand schedules")
    a = np.array([s.intercept for s in schedules], dtype=float)
    b = np.array([s.slope for s in schedules], dtype=float)
    if np.any(b <= 0):
        raise InvalidScheduleError("every schedule slope must be > 0")
    price = (a.sum() - u) / b.sum()
    return AuctionOutcome(float(price), a - b * price)


def _require_degenerate(params: StaticParams):
    if not params.flow.is_degenerate:
        raise WrongRegimeError("operation requires a degenerate flow")


def _require_nondegenerate(params: StaticParams):
    if params.flow.is_degenerate:
        raise WrongRegimeError("operation requires a non-degenerate flow")


def degenerate_equilibrium_price(params: StaticParams, lam: float) -> float:
    """Price of the symmetric equilibrium indexed by ``lam`` when the flow is known."""
    _require_degenerate(params)
    if not lam > 0:
        raise InvalidParameterError(f"lambda must be > 0, got {lam}")
    u = params.flow.values[0]
    n = params.n_makers
    return params.mu - params.risk * u / n - lam * u / n


def degenerate_supply_curve(params: StaticParams, lam: float) -> SupplyCurve:
    """Residual supply curve of the equilibrium indexed by ``lam`` (known flow).

    ``C = -lam risk / (lam + risk)`` keeps the symmetric trade optimal for
    every inventory; with ``S = x = 0`` only ``F = mu - risk u / N + (N-2) lam u / N``
    matters.
    """
    _require_degenerate(params)
    if not lam > 0:
        raise InvalidParameterError(f"lambda must be > 0, got {lam}")
    u = params.flow.values[0]
    n, k, s = params.n_makers, params.risk, params.total_shares
    c = -lam * k / (lam + k)
    level = params.mu - c * s - (2 * lam + k) * (u / n - c * s / (n * lam)) + lam * u
    return SupplyCurve(level, c, lam)


def symmetric_equilibrium(params: StaticParams) -> tuple[float, float]:
    """``(F, lam)`` of the unique symmetric equilibrium without inventories."""
    _require_nondegenerate(params)
    n = params.n_makers
    if n == 2:
        raise NoEquilibriumError("no symmetric equilibrium exists for N = 2 with uncertain flow")
    return params.mu, params.risk / (n - 2)


def symmetric_equilibrium_price(params: StaticParams, u):
    f, lam = symmetric_equilibrium(params)
    n = params.n_makers
    return f - (n - 1) / n * lam * np.asarray(u, dtype=float)


def inventory_equilibrium(params: StaticParams) -> SupplyCurve:
    """Supply curve of the unique linear symmetric equilibrium with inventories."""
    _require_nondegenerate(params)
    n = params.n_makers
    if n < 3:
        raise NoEquilibriumError(f"linear symmetric equilibrium needs N >= 3, got {n}")
    k = params.risk
    return SupplyCurve(params.mu, -k / (n - 1), k / (n - 2))


def inventory_equilibrium_price(params: StaticParams, u):
    curve = inventory_equilibrium(params)
    n = params.n_makers
    u = np.asarray(u, dtype=float)
    return curve.level + (n - 1) / n * curve.inventory_coef * params.total_shares - (n - 1) / n * curve.impact * u


def inventory_equilibrium_quantities(params: StaticParams, inventories, u) -> np.ndarray:
    inventories = np.asarray(inventories, dtype=float)
    curve = inventory_equilibrium(params)
    n = params.n_makers
    return curve.inventory_coef / curve.impact * (inventories - params.total_shares / n) + u / n


def post_trade_price(params: StaticParams, s_post, u):
    """Equilibrium price written through the post-auction aggregate inventory."""
    n = params.n_makers
    k = params.risk
    return params.mu - k / n * np.asarray(s_post) - k / (n * (n - 2)) * np.asarray(u)


def best_response_quantity(curve: SupplyCurve, params: StaticParams, x: float, u: float) -> float:
    """Quantity maximising the CARA certainty equivalent on ``curve`` for flow ``u``."""
    lam, c, f = curve.impact, curve.inventory_coef, curve.level
    k = params.risk
    denom = 2 * lam + k
    return (params.mu - f - c * params.total_shares) / denom + (c - k) / denom * x + lam / denom * u


def expected_utility(A, B, curve: SupplyCurve, x: float, params: StaticParams):
    """Exact CARA expected utility of trading ``q = A + B u`` on ``curve``.

    The payoff uncertainty is integrated out in closed form; the flow is summed
    over its finite support. ``A`` and ``B`` broadcast against each other.
    """
    values, probs = params.flow.support()
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    g, k, mu = params.gamma, params.risk, params.mu
    s = params.total_shares
    total = 0.0
    for u, w in zip(values, probs):
        q = A + B * u
        margin = mu - curve.level - curve.inventory_coef * (s - x) + curve.impact * u - curve.impact * q
        exponent = q * margin - 0.5 * k * (x + q) ** 2
        total = total - w * np.exp(-g * exponent)
    return np.exp(-g * mu * x) * total


@dataclass(frozen=True)
class GridSpec:
    a_range: tuple[float, float] = (-3.0, 3.0)
    b_range: tuple[float, float] = (1e-3, 1.0 - 1e-3)
    resolution: float = 1e-2

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        def axis(lo, hi):
            n = int(np.floor((hi - lo) / self.resolution + 1e-9)) + 1
            return lo + self.resolution * np.arange(n)

        return axis(*self.a_range), axis(*self.b_range)


@dataclass
class VerificationResult:
    confirmed: bool
    argmax: list  # grid (A, B) per inventory
    candidates: list  # symmetric-profile (A, B) per inventory
    per_inventory: list  # confirmation flag per inventory


def candidate_strategy(curve: SupplyCurve, params: StaticParams, x: float) -> tuple[float, float]:
    """Reduced strategy ``(A, B)`` obtained by copying the others' schedule."""
    n = params.n_makers
    return curve.inventory_coef / curve.impact * (x - params.total_shares / n), 1.0 / n


def brute_force_verify(
    params: StaticParams,
    grid: GridSpec = GridSpec(),
    curve: SupplyCurve | None = None,
    inventories: Sequence[float] = (0.0,),
    lam: float = 1.0,
) -> VerificationResult:
    """Grid-search the best response and compare it with the symmetric candidate.

    ``curve`` defaults to the equilibrium curve of the regime (``lam`` indexes
    the continuum when the flow is degenerate). With a degenerate flow every
    ``(A, B)`` on the line ``A + B u = q`` gives the same trade, so the check
    compares traded quantities instead of grid cells.
    """
    if curve is None:
        if params.flow.is_degenerate:
            curve = degenerate_supply_curve(params, lam)
        else:
            curve = inventory_equilibrium(params)
    a_axis, b_axis = grid.axes()
    res = grid.resolution
    tol = res * (1 + 1e-9)
    values, _ = params.flow.support()
    AA, BB = np.meshgrid(a_axis, b_axis, indexing="ij")

    argmaxes, candidates, flags = [], [], []
    for x in inventories:
        a_star, b_star = candidate_strategy(curve, params, x)
        if not (a_axis[0] - res <= a_star <= a_axis[-1] + res and b_axis[0] - res <= b_star <= b_axis[-1] + res):
            raise ConfigurationError(
                f"grid does not cover the candidate (A, B) = ({a_star:.4g}, {b_star:.4g})"
            )
        eu = expected_utility(AA, BB, curve, x, params)
        i, j = np.unravel_index(np.argmax(eu), eu.shape)
        a_hat, b_hat = a_axis[i], b_axis[j]
        if params.flow.is_degenerate:
            u = values[0]
            ok = abs((a_hat + b_hat * u) - (a_star + b_star * u)) <= tol * (1 + abs(u))
        else:
            ok = abs(a_hat - a_star) <= tol and abs(b_hat - b_star) <= tol
        argmaxes.append((float(a_hat), float(b_hat)))
        candidates.append((float(a_star), float(b_star)))
        flags.append(bool(ok))
    return VerificationResult(all(flags), argmaxes, candidates, flags)


def pareto_contraction(inventories, total_shares: float, u: float, params: StaticParams) -> np.ndarray:
    """Post-auction inventories under the equilibrium trades.

    Deviations from the equal split shrink by ``1/(N-1)``; the result is
    checked against that identity before being returned.
    """
    x = np.asarray(inventories, dtype=float)
    if len(x) != params.n_makers:
        raise InconsistentStateError(f"expected {params.n_makers} inventories, got {len(x)}")
    if abs(x.sum() - total_shares) > 1e-9 * max(1.0, abs(total_shares)):
        raise InconsistentStateError(f"inventories sum to {x.sum()}, expected {total_shares}")
    n = params.n_makers
    p = StaticParams(n, params.gamma, params.sigma, params.mu, total_shares, params.flow)
    post = x + inventory_equilibrium_quantities(p, x, u)
    s_post = total_shares + u
    gap = np.max(np.abs(post - s_post / n - (x - total_shares / n) / (n - 1)))
    scale = max(1.0, float(np.max(np.abs(x))), abs(u))
    if gap > 1e-12 * scale:
        raise InconsistentStateError(f"Pareto contraction violated by {gap:.3g}")
    return post
