"""Monte Carlo simulation of the continuous-time market under a linear profile.

The valuation ``D`` and the liquidity target ``S_target`` are exogenous and
advanced with exact Gaussian transitions (Euler is available for the target).
Given their path, the aggregate inventory ``S`` and the individual inventories
are ODEs, integrated with the trapezoid rule.  The trapezoid recursions are
first-order linear filters, so whole chunks of paths are integrated at once
with :func:`scipy.signal.lfilter`.

Every path draws its noise from its own stream, seeded by ``(seed, path_id)``,
so results do not depend on chunking or on the order in which paths are run.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from scipy.signal import lfilter

from .dynamic_equilibrium import (
    DynamicParams,
    EquilibriumConstants,
    MarketState,
    flow_rate,
    profile_price,
    profile_rates,
)
from .errors import ConfigurationError, InconsistentStateError, InvalidParameterError

__all__ = [
    "SimConfig",
    "ExogenousPaths",
    "SimPath",
    "path_rng",
    "step",
    "exogenous_paths",
    "iter_exogenous",
    "simulate",
    "iter_simulate",
    "closed_form_inventory",
    "reconstruct_S",
    "trapezoid_linear",
]

SCHEMES = ("exact_gaussian", "euler")


@dataclass(frozen=True)
class SimConfig:
    """Discretisation and sampling settings.

    ``dt`` is shrunk slightly if needed so that it divides ``horizon``; use
    :attr:`n_steps` and :attr:`step_size` for the values actually used.
    """

    dt: float = 1e-3
    horizon: float = 20.0
    n_paths: int = 1
    seed: int = 0
    scheme: str = "exact_gaussian"
    thin: int = 1
    chunk_size: int = 128

    def __post_init__(self):
        problems = []
        if not self.dt > 0:
            problems.append(f"dt must be > 0, got {self.dt}")
        if not self.horizon > 0:
            problems.append(f"horizon must be > 0, got {self.horizon}")
        elif self.dt > self.horizon:
            problems.append(f"dt={self.dt} exceeds horizon={self.horizon}")
        if int(self.n_paths) != self.n_paths or self.n_paths < 1:
            problems.append(f"n_paths must be a positive integer, got {self.n_paths}")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            problems.append(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.scheme not in SCHEMES:
            problems.append(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if int(self.thin) != self.thin or self.thin < 1:
            problems.append(f"thin must be a positive integer, got {self.thin}")
        if int(self.chunk_size) != self.chunk_size or self.chunk_size < 1:
            problems.append(f"chunk_size must be a positive integer, got {self.chunk_size}")
        if problems:
            raise InvalidParameterError("; ".join(problems))

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.horizon / self.dt)))

    @property
    def step_size(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.step_size


@dataclass
class ExogenousPaths:
    """Paths that do not depend on the makers' strategies, one row per path."""

    path_ids: np.ndarray
    times: np.ndarray
    d: np.ndarray
    s_target: np.ndarray
    s_agg: np.ndarray
    flow: np.ndarray

    def __len__(self):
        return len(self.path_ids)


@dataclass
class SimPath:
    """One simulated trajectory, time-major.

    Attributes:
        times: grid ``t_0..t_K`` (after thinning).
        d, s_target, s_agg, flow, prices: arrays of shape ``(K+1,)``.
        inventories, rates, cash, wealth: arrays of shape ``(K+1, N)``.
        z_d, z_target: standard normal increments driving ``D`` and the
            target over the full (unthinned) grid.
    """

    path_id: int
    times: np.ndarray
    d: np.ndarray
    s_target: np.ndarray
    s_agg: np.ndarray
    flow: np.ndarray
    prices: np.ndarray
    inventories: np.ndarray
    rates: np.ndarray
    cash: np.ndarray
    wealth: np.ndarray
    z_d: np.ndarray | None = None
    z_target: np.ndarray | None = None

    @property
    def n_makers(self) -> int:
        return self.inventories.shape[1]

    def state(self, k: int) -> MarketState:
        return MarketState(
            float(self.times[k]), float(self.d[k]), float(self.s_target[k]), float(self.s_agg[k]),
            self.inventories[k].copy(),
        )

    @property
    def states(self) -> list:
        return [self.state(k) for k in range(len(self.times))]


def path_rng(seed: int, path_id: int) -> np.random.Generator:
    """Independent generator for one path; depends only on ``(seed, path_id)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(path_id),))))


def _target_coefficients(params: DynamicParams, dt: float, scheme: str):
    if scheme == "exact_gaussian":
        decay = np.exp(-params.psi * dt)
        scale = params.sigma_target * np.sqrt(-np.expm1(-2 * params.psi * dt) / (2 * params.psi))
    else:
        decay = 1.0 - params.psi * dt
        scale = params.sigma_target * np.sqrt(dt)
    return decay, scale


def trapezoid_linear(rate: float, forcing: np.ndarray, y0, dt: float) -> np.ndarray:
    """Trapezoid solution of ``y' = rate * y + forcing(t)`` along the last axis.

    Args:
        rate: constant linear coefficient.
        forcing: samples of the forcing term on the grid, shape ``(..., K+1)``.
        y0: initial values, broadcastable to ``forcing.shape[:-1]``.
        dt: grid spacing.

    Returns:
        Array shaped like ``forcing`` with ``y[..., 0] = y0``.
    """
    forcing = np.asarray(forcing, dtype=float)
    den = 1.0 - rate * dt / 2
    gain = (1.0 + rate * dt / 2) / den
    drive = np.empty_like(forcing)
    drive[..., 0] = y0
    drive[..., 1:] = (dt / 2) / den * (forcing[..., 1:] + forcing[..., :-1])
    return lfilter([1.0], [1.0, -gain], drive, axis=-1)


def step(state: MarketState, constants: EquilibriumConstants, params: DynamicParams, dt: float, z,
         scheme: str = "exact_gaussian") -> MarketState:
    """Advance the state by one time step.

    Args:
        state: current state.
        constants: schedule constants quoted by every maker.
        params: model parameters.
        dt: step size.
        z: pair of standard normals ``(z_D, z_target)``.
        scheme: transition used for the target.

    Returns:
        The state at ``t + dt``.
    """
    if not dt > 0:
        raise InvalidParameterError(f"dt must be > 0, got {dt}")
    z_d, z_t = z
    decay, scale = _target_coefficients(params, dt, scheme)
    st_new = decay * state.s_target + scale * z_t
    d_new = state.d + params.mu * dt + params.sigma_d * np.sqrt(dt) * z_d
    h = params.phi * dt / 2
    s_new = (state.s_agg * (1 - h) + h * (state.s_target + st_new)) / (1 + h)
    g = constants.a / constants.lam
    n = params.n_makers
    dev = (state.inventories - state.s_agg / n) * (1 + g * dt / 2) / (1 - g * dt / 2)
    return MarketState(state.t + dt, d_new, st_new, s_new, s_new / n + dev)


def _check_initial(init: MarketState, params: DynamicParams):
    if len(init.inventories) != params.n_makers:
        raise InconsistentStateError(
            f"initial state has {len(init.inventories)} inventories, model has {params.n_makers} makers"
        )


def exogenous_paths(config: SimConfig, params: DynamicParams, init: MarketState, path_ids: Sequence[int],
                    keep_noise: bool = False):
    """Simulate ``D``, the target, ``S`` and the flow for the given paths.

    Returns:
        An :class:`ExogenousPaths`; with ``keep_noise`` also the noise array of
        shape ``(n, 2, K)``.
    """
    path_ids = np.asarray(path_ids, dtype=np.int64)
    k_steps, dt = config.n_steps, config.step_size
    z = np.empty((len(path_ids), 2, k_steps))
    for i, pid in enumerate(path_ids):
        z[i] = path_rng(config.seed, pid).standard_normal((2, k_steps))

    d = np.empty((len(path_ids), k_steps + 1))
    d[:, 0] = init.d
    d[:, 1:] = init.d + np.cumsum(params.mu * dt + params.sigma_d * np.sqrt(dt) * z[:, 0], axis=1)

    decay, scale = _target_coefficients(params, dt, config.scheme)
    drive = np.empty_like(d)
    drive[:, 0] = init.s_target
    drive[:, 1:] = scale * z[:, 1]
    s_target = lfilter([1.0], [1.0, -decay], drive, axis=1)

    # dS/dt = -phi S + phi S_target
    s_agg = trapezoid_linear(-params.phi, params.phi * s_target, init.s_agg, dt)
    flow = flow_rate(params, s_agg, s_target)
    out = ExogenousPaths(path_ids, config.times, d, s_target, s_agg, flow)
    return (out, z) if keep_noise else out


def iter_exogenous(config: SimConfig, params: DynamicParams, init: MarketState) -> Iterator[ExogenousPaths]:
    """Yield :func:`exogenous_paths` chunks covering ``range(config.n_paths)``."""
    _check_initial(init, params)
    for start in range(0, config.n_paths, config.chunk_size):
        yield exogenous_paths(config, params, init, range(start, min(start + config.chunk_size, config.n_paths)))


def _maker_paths(exo: ExogenousPaths, constants: EquilibriumConstants, params: DynamicParams, init: MarketState,
                 dt: float):
    """Inventories, rates, prices, cash and wealth of all makers, shape ``(n, K+1, N)``."""
    n = params.n_makers
    g = constants.a / constants.lam
    ratio = (1 + g * dt / 2) / (1 - g * dt / 2)
    k = np.arange(exo.d.shape[1])
    dev0 = init.inventories - init.s_agg / n
    # the trapezoid rule applied to the rates keeps X - S/N on a geometric sequence
    inventories = exo.s_agg[:, :, None] / n + dev0[None, None, :] * ratio ** k[None, :, None]
    rates = profile_rates(constants, inventories, exo.s_agg, exo.flow)
    prices = profile_price(constants, n, exo.d, exo.s_agg, exo.flow)
    spend = rates * prices[:, :, None]
    cash = np.zeros_like(inventories)
    cash[:, 1:] = -np.cumsum(dt / 2 * (spend[:, 1:] + spend[:, :-1]), axis=1)
    wealth = inventories * exo.d[:, :, None] + cash
    return inventories, rates, prices, cash, wealth


def iter_simulate(config: SimConfig, params: DynamicParams, constants: EquilibriumConstants,
                  init: MarketState) -> Iterator[SimPath]:
    """Generate the paths of :func:`simulate` one at a time (bounded memory)."""
    _check_initial(init, params)
    dt = config.step_size
    keep = slice(None, None, config.thin)
    for start in range(0, config.n_paths, config.chunk_size):
        ids = range(start, min(start + config.chunk_size, config.n_paths))
        exo, z = exogenous_paths(config, params, init, ids, keep_noise=True)
        inv, rates, prices, cash, wealth = _maker_paths(exo, constants, params, init, dt)
        for i, pid in enumerate(exo.path_ids):
            yield SimPath(
                int(pid), exo.times[keep], exo.d[i, keep], exo.s_target[i, keep], exo.s_agg[i, keep],
                exo.flow[i, keep], prices[i, keep], inv[i, keep], rates[i, keep], cash[i, keep],
                wealth[i, keep], z[i, 0], z[i, 1],
            )


def simulate(config: SimConfig, params: DynamicParams, constants: EquilibriumConstants,
             init: MarketState) -> list[SimPath]:
    """Simulate ``config.n_paths`` paths with every maker quoting ``constants``.

    Prices are the clearing prices of the linear profile, which coincide with
    the equilibrium price formula when ``constants`` are the equilibrium ones.
    Cash follows ``dM = -q p dt`` (trapezoid) from ``M_0 = 0`` and wealth is
    ``W = X D + M``.  Memory grows with ``n_paths * n_steps * N``; see
    :func:`iter_simulate` for a streaming variant and ``config.thin`` for
    recording every k-th point only.
    """
    return list(iter_simulate(config, params, constants, init))


def closed_form_inventory(t, x0: float, s0: float, s_t, constants: EquilibriumConstants, params: DynamicParams):
    """Inventory of a maker at time ``t`` given the aggregate path value ``S_t``.

    Deviations from the equal split decay at rate ``kappa = -a / lam``:
    ``X_t = exp(-kappa t) (x0 - s0/N) + S_t / N``.
    """
    n = params.n_makers
    kappa = -constants.a / constants.lam
    return np.exp(-kappa * np.asarray(t)) * (x0 - s0 / n) + np.asarray(s_t) / n


def reconstruct_S(d_path, p_path, s0: float, constants: EquilibriumConstants, params: DynamicParams, times):
    """Recover the aggregate inventory path from valuations and prices.

    Inverting the clearing price for the flow gives the linear ODE
    ``dS/dt = (N/lam)(a/N + c) S + (N/lam)(b D + xi - p)``, integrated here
    with the trapezoid rule on the grid ``times``.
    """
    d_path = np.asarray(d_path, dtype=float)
    p_path = np.asarray(p_path, dtype=float)
    times = np.asarray(times, dtype=float)
    if d_path.shape != p_path.shape or d_path.shape[-1] != times.shape[-1] or times.ndim != 1:
        raise ConfigurationError(
            f"grid mismatch: D {d_path.shape}, p {p_path.shape}, times {times.shape}"
        )
    steps = np.diff(times)
    if len(steps) and not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
        raise ConfigurationError("reconstruct_S needs a uniform time grid")
    if len(steps) == 0:
        return np.full(d_path.shape, float(s0))
    k = constants
    n = params.n_makers
    rate = n / k.lam * (k.a / n + k.c)
    forcing = n / k.lam * (k.b * d_path + k.xi - p_path)
    return trapezoid_linear(rate, forcing, s0, steps[0])
