"""Almgren-Chriss reading of the equilibrium price and execution-cost measures.

In equilibrium ``p = D + mu/rho - Gamma S - Lambda flow`` exactly, with a
permanent coefficient ``Gamma = theta gamma sigma_D^2 / N`` on accumulated
flow ``S`` and a temporary coefficient ``Lambda = lam / N`` on the current
flow.  The midprice ``D + mu/rho - Gamma S`` is the price absent current flow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .dynamic_equilibrium import DynamicParams, EquilibriumConstants, admissible, midprice, price_impact
from .errors import ConfigurationError, InvalidConstantsError, RankDeficiencyError
from .game_verification import Estimate

__all__ = [
    "ImpactCoefficients",
    "FitDiagnostics",
    "CostMeasures",
    "almgren_chriss_coefficients",
    "decomposition_residual",
    "regression_fit",
    "cost_measures",
    "roundtrip_sign_check",
]


@dataclass(frozen=True)
class ImpactCoefficients:
    permanent: float  # Gamma, currency per share
    temporary: float  # Lambda, currency * time per share


@dataclass(frozen=True)
class FitDiagnostics:
    rank: int
    condition: float
    rss: float
    tss: float  # sum of (p - D)^2
    n_obs: int


@dataclass(frozen=True)
class CostMeasures:
    """Sign-adjusted execution costs per share.

    ``effective`` compares the trade price with the midprice ``window`` before
    the trade, ``realized`` with the midprice ``window`` after it.  Estimates
    are across paths of per-path averages; ``gap`` is their paired difference.
    """

    effective: Estimate
    realized: Estimate
    gap: Estimate
    window: float
    n_trades: int


def almgren_chriss_coefficients(params: DynamicParams, constants: EquilibriumConstants) -> ImpactCoefficients:
    if not admissible(constants.a, constants.lam, params.rho):
        raise InvalidConstantsError("inadmissible constants")
    permanent = constants.theta * params.gamma * params.sigma_d**2 / params.n_makers
    return ImpactCoefficients(float(permanent), price_impact(params))


def _fields(path):
    return path.d, path.prices, path.s_agg, path.flow


def decomposition_residual(paths: Iterable, params: DynamicParams, constants: EquilibriumConstants) -> float:
    """Largest ``|p - D - mu/rho + Gamma S + Lambda flow|`` over all grid points."""
    coef = almgren_chriss_coefficients(params, constants)
    worst = 0.0
    for path in paths:
        d, p, s, flow = _fields(path)
        r = p - d - params.mu / params.rho + coef.permanent * s + coef.temporary * flow
        worst = max(worst, float(np.abs(r).max()))
    return worst


def regression_fit(paths: Iterable, params: DynamicParams, rank_tol: float = 1e-10):
    """Least squares of ``p - D - mu/rho`` on ``(-S, -flow)``.

    Returns:
        ``(gamma_hat, lambda_hat, FitDiagnostics)``.

    Raises:
        RankDeficiencyError: if the regressors are (numerically) collinear.
    """
    ys, xs, tss = [], [], []
    for path in paths:
        d, p, s, flow = _fields(path)
        ys.append(p - d - params.mu / params.rho)
        xs.append(np.column_stack([-s, -flow]))
        tss.append(float(np.sum((p - d) ** 2)))
    y = np.concatenate(ys)
    x = np.vstack(xs)
    sv = np.linalg.svd(x, compute_uv=False)
    rank = int(np.sum(sv > rank_tol * max(sv[0], np.finfo(float).tiny)))
    if rank < 2:
        raise RankDeficiencyError(f"regressors (S, flow) have rank {rank}; singular values {sv}")
    beta, *_ = np.linalg.lstsq(x, y, rcond=None)
    resid = y - x @ beta
    diag = FitDiagnostics(rank, float(sv[0] / sv[-1]), float(resid @ resid), math.fsum(tss), len(y))
    return float(beta[0]), float(beta[1]), diag


def cost_measures(paths: Iterable, params: DynamicParams, constants: EquilibriumConstants, window: float,
                  flow_threshold: float | None = None) -> CostMeasures:
    """Effective and realized costs of the liquidity traders' trades.

    At every grid time with ``|flow| > flow_threshold`` (default
    ``0.05 sigma_target / sqrt(2 psi)``) and a full window on both sides, the
    trade at price ``p_t`` is compared with the midprice at ``t - window``
    (effective) and ``t + window`` (realized), sign-adjusted so that buying
    and selling pool together.
    """
    if flow_threshold is None:
        flow_threshold = 0.05 * params.sigma_target / math.sqrt(2 * params.psi)
    eff, real = [], []
    n_trades = 0
    for path in paths:
        t = path.times
        dt = t[1] - t[0]
        if not window > 0 or window < dt * (1 - 1e-9):
            raise ConfigurationError(f"window {window} must be at least the step {dt}")
        lag = int(round(window / dt))
        if 2 * lag >= len(t):
            raise ConfigurationError(f"window {window} leaves no room on a horizon of {t[-1]}")
        d, p, s, flow = _fields(path)
        mid = midprice(params, constants, d, s)
        now = slice(lag, len(t) - lag)
        keep = np.abs(flow[now]) > flow_threshold
        if not keep.any():
            continue
        sign = np.sign(flow[now])[keep]
        before = mid[: len(t) - 2 * lag][keep]
        after = mid[2 * lag:][keep]
        trade = p[now][keep]
        eff.append(float(np.mean(sign * (before - trade))))
        real.append(float(np.mean(sign * (after - trade))))
        n_trades += int(keep.sum())
    if not eff:
        zero = Estimate(0.0, 0.0, 0)
        return CostMeasures(zero, zero, zero, window, 0)
    eff, real = np.array(eff), np.array(real)
    return CostMeasures(
        Estimate.from_samples(eff), Estimate.from_samples(real), Estimate.from_samples(eff - real), window, n_trades
    )


def roundtrip_sign_check(paths: Iterable, params: DynamicParams, constants: EquilibriumConstants,
                         rel_tol: float = 1e-12) -> tuple[float, float]:
    """Fraction of grid points with ``sign(flow) (p - mid) <= 0`` and its mean.

    Values within ``rel_tol * (1 + |p|)`` of zero count as non-positive, so
    that rounding in the price does not register as a violation.
    """
    count = good = 0
    sums = []
    for path in paths:
        d, p, s, flow = _fields(path)
        v = np.sign(flow) * (p - midprice(params, constants, d, s))
        good += int(np.sum(v <= rel_tol * (1 + np.abs(p))))
        count += len(v)
        sums.append(math.fsum(v))
    return good / count, math.fsum(sums) / count
