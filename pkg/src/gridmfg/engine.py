"""Forward simulation of the controlled grid."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .config import GameMode, ScenarioConfig
from .market import inverse_demand, spot_price_empirical
from .processes import INIT, StatePaths, normals, simulate_exogenous, simulate_nodes
from .solver import (
    MeanFieldPlan,
    Policy,
    build_policy,
    feedback_control,
    individual_psi,
    mean_field_plan,
)


@dataclass
class PathBundle:
    """One Monte Carlo run in mean-field form; arrays (P, n+1[, G])."""

    times: np.ndarray
    q0: np.ndarray
    q: np.ndarray
    qbar: np.ndarray
    S: np.ndarray
    alpha: np.ndarray
    abar: np.ndarray
    sbar: np.ndarray
    price: np.ndarray
    psi: np.ndarray | None = None
    psibar: np.ndarray | None = None
    mode: str = "baseline"
    seed: int = 0
    path_ids: np.ndarray | None = None

    @property
    def n_paths(self) -> int:
        return self.q0.shape[0]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def s0(self) -> np.ndarray:
        return self.S[:, 0]


def storage_path(s0: np.ndarray, alpha: np.ndarray, dt: float) -> np.ndarray:
    """Explicit Euler: S_{k+1} = S_k + dt alpha_k (time on axis 1)."""
    S = np.empty_like(alpha)
    S[:, 0] = s0
    S[:, 1:] = s0[:, None, ...] + dt * np.cumsum(alpha[:, :-1], axis=1)
    return S


def mean_field_price(cfg: ScenarioConfig, q0, qbar, abar) -> np.ndarray:
    x = -q0 - (qbar - abar) @ cfg.weights
    return inverse_demand(cfg.pricing, x)


def initial_storage(cfg: ScenarioConfig, seed: int, path_ids, workers=None, index: int = 1) -> np.ndarray:
    G = cfg.n_regions
    draws = normals(seed, path_ids, INIT, index, (G,), workers)
    mean = np.array([r.s0_mean for r in cfg.regions])
    std = np.array([r.initial_storage.std for r in cfg.regions])
    return mean + std * draws


def rollout(policy: Policy, paths: StatePaths, s0: np.ndarray, plan: MeanFieldPlan | None = None):
    """Run every region's representative agent under the feedback law."""
    z = paths.z()
    plan = plan or mean_field_plan(policy, z)
    P, n1, G = paths.q.shape
    psi = np.stack([individual_psi(policy, g, plan, z, paths.q[:, :, g]) for g in range(G)], axis=2)
    S = np.empty((P, n1, G))
    alpha = np.empty((P, n1, G))
    S[:, 0] = s0
    dt = policy.dt
    for k in range(n1):
        for g in range(G):
            alpha[:, k, g] = feedback_control(
                policy, g, k, S[:, k, g], paths.q[:, k, g], paths.q0[:, k],
                paths.qbar[:, k], plan.abar[:, k], psi[:, k, g],
            )
        if k + 1 < n1:
            S[:, k + 1] = S[:, k] + dt * alpha[:, k]
    return plan, psi, S, alpha


def simulate_mean_field(
    cfg: ScenarioConfig,
    policy: Policy | GameMode | str,
    n_paths: int | None = None,
    seed: int | None = None,
    workers: int | None = None,
    paths: StatePaths | None = None,
    s0: np.ndarray | None = None,
) -> PathBundle:
    """Run the feedback law on simulated (or supplied) exogenous paths.

    ``s0`` overrides the initial storage draws, shape (P, G).
    """
    if not isinstance(policy, Policy):
        policy = build_policy(cfg, policy)
    if len(policy.times) != cfg.grid.steps + 1 or not np.allclose(policy.times, cfg.grid.times):
        raise ValueError("policy was solved on a different time grid than the scenario")
    seed = cfg.monte_carlo.seed if seed is None else int(seed)
    paths = paths or simulate_exogenous(cfg, n_paths, seed, workers)
    if s0 is None:
        s0 = initial_storage(cfg, seed, paths.path_ids, workers)
    plan, psi, S, alpha = rollout(policy, paths, s0)
    price = mean_field_price(cfg, paths.q0, paths.qbar, plan.abar)
    return PathBundle(
        times=paths.times, q0=paths.q0, q=paths.q, qbar=paths.qbar, S=S, alpha=alpha,
        abar=plan.abar, sbar=plan.sbar, price=price, psi=psi, psibar=plan.psibar,
        mode=policy.mode.value, seed=seed, path_ids=paths.path_ids,
    )


def baseline_no_storage(
    cfg: ScenarioConfig,
    n_paths: int | None = None,
    seed: int | None = None,
    workers: int | None = None,
    paths: StatePaths | None = None,
) -> PathBundle:
    """Same exogenous paths, no storage action at all."""
    seed = cfg.monte_carlo.seed if seed is None else int(seed)
    paths = paths or simulate_exogenous(cfg, n_paths, seed, workers)
    s0 = initial_storage(cfg, seed, paths.path_ids, workers)
    zeros = np.zeros_like(paths.q)
    S = np.broadcast_to(s0[:, None, :], paths.q.shape).copy()
    price = mean_field_price(cfg, paths.q0, paths.qbar, zeros)
    return PathBundle(
        times=paths.times, q0=paths.q0, q=paths.q, qbar=paths.qbar, S=S, alpha=zeros.copy(),
        abar=zeros.copy(), sbar=S.copy(), price=price, mode="baseline", seed=seed,
        path_ids=paths.path_ids,
    )


def with_controls(cfg: ScenarioConfig, bundle: PathBundle, alpha: np.ndarray, abar: np.ndarray | None = None,
                  freeze_price: bool = False) -> PathBundle:
    """Re-evaluate a bundle under replacement controls (storage and, unless frozen, price)."""
    S = storage_path(bundle.S[:, 0], alpha, bundle.dt)
    abar = bundle.abar if abar is None else abar
    price = bundle.price if freeze_price else mean_field_price(cfg, bundle.q0, bundle.qbar, abar)
    return replace(bundle, S=S, alpha=alpha, abar=abar, price=price,
                   sbar=storage_path(bundle.sbar[:, 0], abar, bundle.dt))


# --------------------------------------------------------------------------
# N players


def assign_regions(weights, N: int) -> np.ndarray:
    weights = np.asarray(weights, dtype=float)
    counts = np.floor(weights * N).astype(int)
    counts[int(np.argmax(weights))] += N - counts.sum()
    return np.repeat(np.arange(len(weights)), counts)


@dataclass
class NPlayerBundle:
    times: np.ndarray
    labels: np.ndarray  # (N,)
    q0: np.ndarray  # (P, n+1)
    qbar: np.ndarray  # (P, n+1, G)
    abar: np.ndarray  # (P, n+1, G)
    q: np.ndarray  # (P, n+1, N)
    S: np.ndarray
    alpha: np.ndarray
    price: np.ndarray  # empirical
    mf_price: np.ndarray  # mean-field price on the same common path

    @property
    def N(self) -> int:
        return len(self.labels)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])


def simulate_n_player(
    cfg: ScenarioConfig,
    policy: Policy | GameMode | str,
    N: int,
    n_paths: int | None = None,
    seed: int | None = None,
    workers: int | None = None,
) -> NPlayerBundle:
    """Each of N nodes runs the mean-field feedback law; the price is the empirical one."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if not isinstance(policy, Policy):
        policy = build_policy(cfg, policy)
    seed = cfg.monte_carlo.seed if seed is None else int(seed)
    paths = simulate_exogenous(cfg, n_paths, seed, workers)
    labels = assign_regions(cfg.weights, N)
    qn = simulate_nodes(cfg, labels, seed, paths.path_ids, workers)
    z = paths.z()
    plan = mean_field_plan(policy, z)
    P, n1 = paths.q0.shape
    s0_all = np.stack(
        [initial_storage(cfg, seed, paths.path_ids, workers, index=1000 + i)[:, g] for i, g in enumerate(labels)],
        axis=1,
    )
    S = np.empty((P, n1, N))
    alpha = np.empty((P, n1, N))
    psi = np.empty((P, n1, N))
    for i, g in enumerate(labels):
        psi[:, :, i] = individual_psi(policy, g, plan, z, qn[:, :, i])
    S[:, 0] = s0_all
    dt = policy.dt
    for k in range(n1):
        for g in np.unique(labels):
            idx = labels == g
            alpha[:, k, idx] = feedback_control(
                policy, int(g), k, S[:, k, idx], qn[:, k, idx], paths.q0[:, k, None],
                paths.qbar[:, k, None, :], plan.abar[:, k, None, :], psi[:, k, idx],
            )
        if k + 1 < n1:
            S[:, k + 1] = S[:, k] + dt * alpha[:, k]
    price = spot_price_empirical(cfg.pricing, paths.q0, qn, alpha)
    return NPlayerBundle(
        times=paths.times, labels=labels, q0=paths.q0, qbar=paths.qbar, abar=plan.abar, q=qn,
        S=S, alpha=alpha, price=price,
        mf_price=mean_field_price(cfg, paths.q0, paths.qbar, plan.abar),
    )
