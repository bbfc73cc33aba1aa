"""Exogenous net-production processes.

Every process is a seasonal Ornstein-Uhlenbeck process sampled with its exact
Gaussian transition, so there is no time-discretisation bias.  Random numbers
come from Philox streams keyed by ``(seed, path, role, index)``; a path's draws
never depend on how paths are split across workers.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import OUParams, ScenarioConfig, SeasonalFn

# stream roles
COMMON = 0
REGION = 1
NODE = 2
INIT = 3


def seasonal_mean(f: SeasonalFn, t):
    return f(t)


def _decay(a: float, h):
    return np.exp(-a * np.asarray(h, dtype=float))


def _step_variance(a: float, h: float) -> float:
    """Var of int_0^h exp(-a(h-s)) dB_s."""
    if a == 0.0:
        return h
    return -np.expm1(-2.0 * a * h) / (2.0 * a)


def seasonal_integral(params: OUParams, t, u):
    """int_t^u a exp(-a(u-s)) mu(s) ds in closed form (offset + cosine family)."""
    a = params.mean_reversion
    f = params.seasonal
    t = np.asarray(t, dtype=float)
    u = np.asarray(u, dtype=float)
    if a == 0.0:
        return np.zeros(np.broadcast(t, u).shape)
    e = np.exp(-a * (u - t))
    out = f.offset * (1.0 - e)
    if f.amplitude != 0.0:
        w, ph = f.omega, f.phase
        prim_u = a * np.cos(w * u + ph) + w * np.sin(w * u + ph)
        prim_t = a * np.cos(w * t + ph) + w * np.sin(w * t + ph)
        out = out + f.amplitude * a / (a * a + w * w) * (prim_u - e * prim_t)
    return out


def ou_conditional_mean(params: OUParams, q_t, t, u):
    """E[Q_u | Q_t = q_t] for u >= t."""
    t = np.asarray(t, dtype=float)
    u = np.asarray(u, dtype=float)
    return np.asarray(q_t) * np.exp(-params.mean_reversion * (u - t)) + seasonal_integral(params, t, u)


def ou_step(params: OUParams, q, t: float, dt: float, xi_idio, xi_common):
    """One exact transition over [t, t + dt] given standard normal draws."""
    a = params.mean_reversion
    sd = np.sqrt(_step_variance(a, dt))
    drift = np.exp(-a * dt) * np.asarray(q) + seasonal_integral(params, t, t + dt)
    return drift + sd * (params.sigma * np.asarray(xi_idio) + params.sigma_common * np.asarray(xi_common))


# --------------------------------------------------------------------------
# random streams


def worker_count(workers: int | None = None) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("GRIDMFG_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def stream(seed: int, path: int, role: int, index: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(path), int(role), int(index)))
    return np.random.Generator(np.random.Philox(ss))


def normals(seed: int, paths, role: int, index: int, shape, workers: int | None = None) -> np.ndarray:
    """Standard normals of ``shape`` for each path in ``paths``: result (len(paths), *shape)."""
    paths = np.asarray(paths, dtype=np.int64)
    shape = tuple(shape)
    out = np.empty((len(paths),) + shape)

    def fill(lo: int, hi: int) -> None:
        for j in range(lo, hi):
            out[j] = stream(seed, paths[j], role, index).standard_normal(shape)

    nw = min(worker_count(workers), max(1, len(paths) // 64))
    if nw <= 1:
        fill(0, len(paths))
    else:
        bounds = np.linspace(0, len(paths), nw + 1).astype(int)
        with ThreadPoolExecutor(nw) as ex:
            list(ex.map(lambda i: fill(bounds[i], bounds[i + 1]), range(nw)))
    return out


# --------------------------------------------------------------------------
# simulation


@dataclass
class CommonLoading:
    """Exact joint law of the common-noise step integrals for the distinct mean-reversion rates."""

    rates: np.ndarray  # distinct rates, shape (d,)
    chol: np.ndarray  # (d, d) lower-triangular factor

    @classmethod
    def build(cls, rates, dt: float) -> "CommonLoading":
        rates = np.unique(np.asarray(rates, dtype=float))
        s = rates[:, None] + rates[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            cov = np.where(s > 0, -np.expm1(-s * dt) / np.where(s > 0, s, 1.0), dt)
        w, v = np.linalg.eigh(cov)
        # symmetric square root tolerates the rank deficiency of nearly equal rates
        root = v @ np.diag(np.sqrt(np.clip(w, 0.0, None))) @ v.T
        if len(rates) == 1:
            root = np.sqrt(cov)
        return cls(rates, root)

    def integrals(self, xi: np.ndarray) -> np.ndarray:
        """Map standard normals (..., d) to step integrals (..., d)."""
        return xi @ self.chol.T

    def column(self, rate: float) -> int:
        return int(np.argmin(np.abs(self.rates - rate)))


@dataclass
class StatePaths:
    """Exogenous paths on the grid; arrays indexed (path, time[, region])."""

    times: np.ndarray
    path_ids: np.ndarray
    q0: np.ndarray  # rest of world, (P, n+1)
    q: np.ndarray  # one representative per region, (P, n+1, G)
    qbar: np.ndarray  # conditional mean given the common noise, (P, n+1, G)

    @property
    def n_paths(self) -> int:
        return self.q0.shape[0]

    def z(self) -> np.ndarray:
        """Common state (Q0, Qbar^1..Qbar^G) stacked: (P, n+1, G+1)."""
        return np.concatenate([self.q0[:, :, None], self.qbar], axis=2)


def common_rates(cfg: ScenarioConfig) -> list[float]:
    return [cfg.rest_of_world.ou.mean_reversion] + [r.ou.mean_reversion for r in cfg.regions]


def simulate_ou(
    params: OUParams,
    times: np.ndarray,
    start: np.ndarray,
    xi_idio: np.ndarray | None,
    common: np.ndarray | None,
) -> np.ndarray:
    """Exact OU recursion along ``times`` from ``start`` (shape (P,)).

    ``xi_idio``: (P, m) standard normals; ``common``: (P, m) exact common step
    integrals for this process's rate (already scaled), m = len(times) - 1.
    """
    a = params.mean_reversion
    P = start.shape[0]
    m = len(times) - 1
    out = np.empty((P, m + 1))
    out[:, 0] = start
    for k in range(m):
        h = times[k + 1] - times[k]
        x = np.exp(-a * h) * out[:, k] + seasonal_integral(params, times[k], times[k + 1])
        if xi_idio is not None and params.sigma != 0.0:
            x = x + params.sigma * np.sqrt(_step_variance(a, h)) * xi_idio[:, k]
        if common is not None and params.sigma_common != 0.0:
            x = x + params.sigma_common * common[:, k]
        out[:, k + 1] = x
    return out


def common_draws(cfg: ScenarioConfig, seed: int, paths, workers=None) -> np.ndarray:
    """Common step integrals, (P, n, d) with columns per distinct rate."""
    n, dt = cfg.grid.steps, cfg.grid.dt
    load = CommonLoading.build(common_rates(cfg), dt)
    xi = normals(seed, paths, COMMON, 0, (n, len(load.rates)), workers)
    return load.integrals(xi), load


def _initial(init_mean: float, std: float, draw: np.ndarray) -> np.ndarray:
    return init_mean + std * draw


def simulate_exogenous(
    cfg: ScenarioConfig,
    n_paths: int | None = None,
    seed: int | None = None,
    workers: int | None = None,
    path_offset: int = 0,
) -> StatePaths:
    """Simulate Q0, one representative Q^gamma per region and Qbar^gamma on the grid."""
    n_paths = cfg.monte_carlo.paths if n_paths is None else int(n_paths)
    seed = cfg.monte_carlo.seed if seed is None else int(seed)
    G = cfg.n_regions
    times = cfg.grid.times
    n = cfg.grid.steps
    ids = np.arange(path_offset, path_offset + n_paths)

    common, load = common_draws(cfg, seed, ids, workers)
    init = normals(seed, ids, INIT, 0, (G + 1,), workers)
    idio = normals(seed, ids, REGION, 0, (n, G), workers) if G else None

    row = cfg.rest_of_world.ou
    q0 = simulate_ou(
        row, times, _initial(row.q0_mean, row.initial.std, init[:, 0]), None,
        common[:, :, load.column(row.mean_reversion)],
    )
    q = np.empty((n_paths, n + 1, G))
    qbar = np.empty((n_paths, n + 1, G))
    for g, reg in enumerate(cfg.regions):
        c = common[:, :, load.column(reg.ou.mean_reversion)]
        start = _initial(reg.ou.q0_mean, reg.ou.initial.std, init[:, g + 1])
        q[:, :, g] = simulate_ou(reg.ou, times, start, idio[:, :, g], c)
        qbar[:, :, g] = simulate_ou(reg.ou, times, np.full(n_paths, reg.ou.q0_mean), None, c)
    return StatePaths(times=times, path_ids=ids, q0=q0, q=q, qbar=qbar)


def simulate_nodes(
    cfg: ScenarioConfig,
    labels: np.ndarray,
    seed: int,
    path_ids: np.ndarray,
    workers: int | None = None,
    node_offset: int = 0,
) -> np.ndarray:
    """Idiosyncratic node processes sharing the path's common noise: (P, n+1, N)."""
    times = cfg.grid.times
    n = cfg.grid.steps
    common, load = common_draws(cfg, seed, path_ids, workers)
    out = np.empty((len(path_ids), n + 1, len(labels)))
    for i, g in enumerate(labels):
        ou = cfg.regions[g].ou
        node = node_offset + i
        xi = normals(seed, path_ids, NODE, node, (n + 1,), workers)
        start = _initial(ou.q0_mean, ou.initial.std, xi[:, n])
        out[:, :, i] = simulate_ou(ou, times, start, xi[:, :n], common[:, :, load.column(ou.mean_reversion)])
    return out
