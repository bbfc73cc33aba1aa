"""Optimal storage policies for the linear-quadratic game (MFG) and planner (MFC).

The solution is computed in two stages.

Stage 1 works with quantities conditioned on the common noise: the regional
mean control ``abar = M (Ybar + b)`` with ``Ybar = Phi(t) Sbar + psibar``,
where ``Phi`` solves the matrix Riccati equation
``Phi' + Phi M Phi + A2 = 0, Phi(T) = B2 I`` and ``psibar`` is a conditional
expectation of a linear backward equation.

Stage 2 gives the individual feedback ``alpha = -delta (phi S + psi + bhat)``
with the scalar Riccati ``phi' - delta phi^2 + A2 = 0, phi(T) = B2``.

All conditional expectations are affine in the Gaussian state, so the
quadratures are done once per grid time and stored as coefficient arrays
(``psibar_k = c_k + G_k z_k`` and
``psi_k = d0_k + dS_k Sbar_k + dz_k z_k + dq_k Q_k``); evaluating a path is
then a single forward sweep.  ``z = (Q0, Qbar^1, ..., Qbar^G)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .config import GameMode, ScenarioConfig
from .market import effective_slope
from .processes import StatePaths, seasonal_integral

log = logging.getLogger(__name__)


class RiccatiError(RuntimeError):
    pass


@dataclass(frozen=True)
class InteractionMatrices:
    khat: np.ndarray
    slope: float
    m_mode: np.ndarray
    M: np.ndarray
    det: float


def interaction_matrices(cfg: ScenarioConfig, mode: GameMode | str, slope: float | None = None) -> InteractionMatrices:
    lam = effective_slope(mode, cfg.pricing) if slope is None else float(slope)
    khat = np.array([cfg.storage_cost.C + r.demand_charge for r in cfg.regions])
    pi = cfg.weights
    m_mode = np.diag(khat) + lam * np.outer(np.ones(len(pi)), pi)
    det = float(np.linalg.det(m_mode))
    if not np.isfinite(det) or abs(det) < 1e-300:
        raise np.linalg.LinAlgError(f"interaction matrix is singular (det={det})")
    M = -np.linalg.solve(m_mode, np.eye(len(pi)))
    return InteractionMatrices(khat=khat, slope=lam, m_mode=m_mode, M=M, det=det)


# --------------------------------------------------------------------------
# scalar Riccati


def _w_parts(A2: float, delta: float, B2: float, tau):
    rho = np.sqrt(A2 * delta)
    e = np.exp(-2.0 * rho * np.asarray(tau, dtype=float))
    hi, lo = rho + B2 * delta, rho - B2 * delta
    return rho, e, hi, lo


def scalar_riccati(A2: float, delta: float, B2: float, T: float, t):
    """Closed-form solution of phi' - delta phi^2 + A2 = 0 with phi(T) = B2."""
    rho, e, hi, lo = _w_parts(A2, delta, B2, T - np.asarray(t, dtype=float))
    return rho / delta * (hi - lo * e) / (hi + lo * e)


def scalar_kernel_log(A2: float, delta: float, B2: float, T: float, t):
    """log w(t) with exp(-int_t^u delta phi) = w(u) / w(t)."""
    tau = T - np.asarray(t, dtype=float)
    rho, e, hi, lo = _w_parts(A2, delta, B2, tau)
    return rho * tau + np.log(hi + lo * e)


# --------------------------------------------------------------------------
# matrix Riccati


@dataclass
class MeanFieldRiccati:
    times: np.ndarray
    Phi: np.ndarray  # (n+1, G, G), Phi(T) = B2 I
    steps: np.ndarray  # (n, G, G): R(t_{j+1}, t_j)
    B2: float
    exp_mismatch: float = float("nan")
    exp_checked: int = 0

    @property
    def phibar(self) -> np.ndarray:
        """Riccati solution in the zero-terminal convention, Phi - B2 I."""
        return self.Phi - self.B2 * np.eye(self.Phi.shape[1])

    def transition(self, u: int, t: int) -> np.ndarray:
        """R(t_u, t_t) with d/du R = R Phi(u) M and R(t, t) = I."""
        G = self.Phi.shape[1]
        out = np.eye(G)
        for j in range(t, u):
            out = out @ self.steps[j]
        return out


def exp_formula(M: np.ndarray, A2: float, B2: float, tau: float) -> np.ndarray:
    """Block-exponential solution (zero-terminal convention) of the matrix Riccati equation."""
    G = M.shape[0]
    I = np.eye(G)
    blk = np.block([[B2 * M, M], [-A2 * I - B2 * B2 * M, -B2 * M]])
    E = scipy.linalg.expm(blk * tau)
    lower_right = E[G:, G:]
    if np.linalg.det(lower_right) <= 0:
        raise RiccatiError(f"exponential formula not valid at T - t = {tau}")
    return -np.linalg.solve(lower_right, E[G:, :G])


def _inv_rhs(U: np.ndarray, M: np.ndarray, A2: float) -> np.ndarray:
    # U = Phi^{-1} satisfies U' = M + A2 U^2, which stays tame where Phi is large
    return M + A2 * U @ U


def matrix_riccati(
    M: np.ndarray,
    A2: float,
    B2: float,
    times: np.ndarray,
    stiffness_step: float = 0.01,
    check_every: int = 10,
    check_tol: float = 1e-6,
) -> MeanFieldRiccati:
    """Backward RK4 for Phi plus the one-step transitions R(t_{j+1}, t_j).

    The integration runs on the inverse ``U = Phi^{-1}``, which avoids the
    stiff boundary layer of Phi near T.  Each cell is split so that
    ``h * ||Phi M|| <= stiffness_step``; the substep values are reused for the
    forward RK4 of ``dR/du = R Phi(u) M``.
    """
    M = np.asarray(M, dtype=float)
    G = M.shape[0]
    n = len(times) - 1
    Phi = np.empty((n + 1, G, G))
    Phi[n] = B2 * np.eye(G)
    U = np.eye(G) / B2
    steps = np.empty((n, G, G))
    for j in range(n - 1, -1, -1):
        h_cell = times[j + 1] - times[j]
        stiff = h_cell * np.linalg.norm(Phi[j + 1] @ M, 2)
        m = max(2, int(np.ceil(stiff / stiffness_step)))
        m += m % 2
        h = -h_cell / m
        vals = [Phi[j + 1]]
        for _ in range(m):
            k1 = _inv_rhs(U, M, A2)
            k2 = _inv_rhs(U + 0.5 * h * k1, M, A2)
            k3 = _inv_rhs(U + 0.5 * h * k2, M, A2)
            k4 = _inv_rhs(U + h * k3, M, A2)
            U = U + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            vals.append(np.linalg.inv(U))
        Phi[j] = vals[-1]
        # vals runs from t_{j+1} down to t_j; forward RK4 with step 2|h|
        vals = vals[::-1]
        R = np.eye(G)
        H = 2.0 * h_cell / m
        for i in range(0, m, 2):
            A0, Am, A1 = vals[i] @ M, vals[i + 1] @ M, vals[i + 2] @ M
            k1 = R @ A0
            k2 = (R + 0.5 * H * k1) @ Am
            k3 = (R + 0.5 * H * k2) @ Am
            k4 = (R + H * k3) @ A1
            R = R + H / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        steps[j] = R
    ric = MeanFieldRiccati(times=np.asarray(times), Phi=Phi, steps=steps, B2=B2)
    if check_every:
        worst, count = 0.0, 0
        T = times[-1]
        for k in range(0, n + 1, check_every):
            try:
                ref = exp_formula(M, A2, B2, T - times[k])
            except RiccatiError:
                continue
            worst = max(worst, float(np.max(np.abs(ric.phibar[k] - ref))))
            count += 1
        ric.exp_mismatch, ric.exp_checked = worst, count
        if count and worst > check_tol:
            raise RiccatiError(f"RK4 and exponential solutions differ by {worst:.3e} > {check_tol:.1e}")
    return ric


# --------------------------------------------------------------------------
# policy


def driver_matrix(cfg: ScenarioConfig, slope: float, paper_literal_b: bool = False) -> np.ndarray:
    """B_z with b = p0 1 + B_z z: the common-noise driver of the mean-field equation."""
    G = cfg.n_regions
    pi = cfg.weights
    K = np.array([r.demand_charge for r in cfg.regions])
    if paper_literal_b:
        K = K + cfg.storage_cost.C
    Bz = np.empty((G, G + 1))
    Bz[:, 0] = -slope
    Bz[:, 1:] = -slope * np.outer(np.ones(G), pi) - np.diag(K)
    return Bz


@dataclass
class Policy:
    """Path-independent part of the solution: Riccati objects and coefficient arrays."""

    cfg: ScenarioConfig
    mode: GameMode
    slope: float
    im: InteractionMatrices
    ric: MeanFieldRiccati
    Bz: np.ndarray
    rates: np.ndarray  # mean-reversion per z component
    delta: np.ndarray  # (G,)
    phi: np.ndarray  # (n+1, G) individual Riccati, terminal B2
    logw: np.ndarray  # (n+1, G)
    c: np.ndarray  # (n+1, G)
    Gz: np.ndarray  # (n+1, G, G+1)
    d0: np.ndarray  # (n+1, G)
    dS: np.ndarray  # (n+1, G, G)
    dz: np.ndarray  # (n+1, G, G+1)
    dq: np.ndarray  # (n+1, G)
    sbar0: np.ndarray
    paper_literal_b: bool = False

    @property
    def times(self) -> np.ndarray:
        return self.ric.times

    @property
    def n(self) -> int:
        return len(self.times) - 1

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def M(self) -> np.ndarray:
        return self.im.M

    @property
    def Phi(self) -> np.ndarray:
        return self.ric.Phi

    @property
    def kappa(self) -> np.ndarray:
        return self.delta[None, :] * self.phi


def z_params(cfg: ScenarioConfig):
    return [cfg.rest_of_world.ou] + [r.ou for r in cfg.regions]


def z_conditional_mean(cfg: ScenarioConfig, z_t, t, u):
    """E[z_u | z_t] componentwise; z_t (..., G+1)."""
    z_t = np.asarray(z_t, dtype=float)
    out = np.empty(np.broadcast(z_t, np.empty(len(z_params(cfg)))).shape)
    for i, ou in enumerate(z_params(cfg)):
        out[..., i] = z_t[..., i] * np.exp(-ou.mean_reversion * (u - t)) + seasonal_integral(ou, t, u)
    return out


def _trap_weights(j: int, n: int, dt: float) -> np.ndarray:
    """Weights w_{j,k}, k = 0..j, of node j in the trapezoid rule on [t_k, T]."""
    w = np.full(j + 1, dt if j < n else 0.5 * dt)
    w[j] = 0.5 * dt if j < n else 0.0
    return w


def build_policy(
    cfg: ScenarioConfig,
    mode: GameMode | str,
    slope: float | None = None,
    paper_literal_b: bool = False,
    check_tol: float = 1e-6,
) -> Policy:
    """Precompute everything that does not depend on the simulated paths."""
    mode = GameMode(mode)
    im = interaction_matrices(cfg, mode, slope)
    lam = im.slope
    sc = cfg.storage_cost
    times = cfg.grid.times
    n, dt, T = cfg.grid.steps, cfg.grid.dt, cfg.grid.horizon
    G = cfg.n_regions
    pi = cfg.weights
    ric = matrix_riccati(im.M, sc.A2, sc.B2, times, check_tol=check_tol)
    Bz = driver_matrix(cfg, lam, paper_literal_b)
    zp = z_params(cfg)
    rates = np.array([ou.mean_reversion for ou in zp])
    M, Phi = im.M, ric.Phi
    ones = np.ones(G)

    # lag-indexed decay factors on the uniform grid
    ez_lag = np.exp(-np.outer(np.arange(n + 1) * dt, rates))  # (n+1, G+1)

    def mz_block(j: int) -> np.ndarray:
        ks = times[: j + 1]
        return np.stack([seasonal_integral(ou, ks, times[j]) for ou in zp], axis=1)  # (j+1, G+1)

    # ---- stage 1: psibar = c + Gz z
    c = np.zeros((n + 1, G))
    Gz = np.zeros((n + 1, G, G + 1))
    R = np.eye(G)[None].repeat(1, axis=0)  # R(t_j, t_k) for k <= j
    for j in range(n + 1):
        w = _trap_weights(j, n, dt)
        ez = ez_lag[j::-1]  # (j+1, G+1)
        mz = mz_block(j)
        F = Phi[j] @ M
        const = F @ (0.0 + cfg.pricing.p0 * ones)[:, None]  # (G,1)
        const = const[:, 0][None, :] + (mz @ Bz.T) @ F.T + sc.A1  # (j+1, G)
        c[: j + 1] += w[:, None] * np.einsum("kab,kb->ka", R, const)
        lin = np.einsum("ab,bc,kc->kac", F, Bz, ez)  # (j+1, G, G+1)
        Gz[: j + 1] += w[:, None, None] * np.einsum("kab,kbc->kac", R, lin)
        if j < n:
            R = np.concatenate([R @ ric.steps[j], np.eye(G)[None]], axis=0)
    c += -sc.B1 * np.einsum("kab,b->ka", R, ones)

    # ---- stage 2: individual Riccati and psi coefficients
    delta = 1.0 / (sc.C + np.array([r.demand_charge for r in cfg.regions]))
    phi = np.stack([scalar_riccati(sc.A2, d, sc.B2, T, times) for d in delta], axis=1)
    logw = np.stack([scalar_kernel_log(sc.A2, d, sc.B2, T, times) for d in delta], axis=1)
    kappa = delta[None, :] * phi
    Kvec = np.array([r.demand_charge for r in cfg.regions])

    d0 = np.zeros((n + 1, G))
    dS = np.zeros((n + 1, G, G))
    dz = np.zeros((n + 1, G, G + 1))
    dq = np.zeros((n + 1, G))
    mS = np.eye(G)[None].copy()
    mZ = np.zeros((1, G, G + 1))
    m0 = np.zeros((1, G))
    p0 = cfg.pricing.p0
    for j in range(n + 1):
        w = _trap_weights(j, n, dt)
        ez = ez_lag[j::-1]
        mz = mz_block(j)
        GB = Gz[j] + Bz
        f0 = c[j] + p0 + mz @ GB.T  # (k, G)
        fZ = GB[None, :, :] * ez[:, None, :]  # (k, G, G+1)
        MPhi = M @ Phi[j]
        aS = np.einsum("ab,kbc->kac", MPhi, mS)
        aZ = np.einsum("ab,kbc->kac", MPhi, mZ) + np.einsum("ab,kbc->kac", M, fZ)
        a0 = m0 @ MPhi.T + f0 @ M.T
        # E[x_j | F0_k] = -E[Q0_j] - pi.(E[Qbar_j] - E[abar_j])
        x0 = -mz[:, 0] - mz[:, 1:] @ pi + a0 @ pi
        xZ = np.einsum("a,kac->kc", pi, aZ)
        xZ[:, 0] -= ez[:, 0]
        xZ[:, 1:] -= ez[:, 1:] * pi[None, :]
        xS = np.einsum("a,kac->kc", pi, aS)
        for g in range(G):
            W = np.exp(logw[j, g] - logw[: j + 1, g])
            om = w * W * kappa[j, g]
            d0[: j + 1, g] += -om * (p0 + lam * x0 - Kvec[g] * mz[:, g + 1]) + w * W * sc.A1
            dS[: j + 1, g, :] += -(om * lam)[:, None] * xS
            dz[: j + 1, g, :] += -(om * lam)[:, None] * xZ
            dq[: j + 1, g] += om * Kvec[g] * ez[:, g + 1]
        if j < n:
            mS = np.concatenate([mS + dt * aS, np.eye(G)[None]], axis=0)
            mZ = np.concatenate([mZ + dt * aZ, np.zeros((1, G, G + 1))], axis=0)
            m0 = np.concatenate([m0 + dt * a0, np.zeros((1, G))], axis=0)
    for g in range(G):
        d0[:, g] += -sc.B1 * np.exp(logw[n, g] - logw[:, g])

    sbar0 = np.array([r.s0_mean for r in cfg.regions])
    return Policy(
        cfg=cfg, mode=mode, slope=lam, im=im, ric=ric, Bz=Bz, rates=rates, delta=delta,
        phi=phi, logw=logw, c=c, Gz=Gz, d0=d0, dS=dS, dz=dz, dq=dq, sbar0=sbar0,
        paper_literal_b=paper_literal_b,
    )


# --------------------------------------------------------------------------
# operations on a policy


def conditional_driver_mean(policy: Policy, z_t, t: float, u: float) -> np.ndarray:
    """E[b_u | F0_t] given the common state z_t = (Q0_t, Qbar_t)."""
    ez = z_conditional_mean(policy.cfg, z_t, t, u)
    return policy.cfg.pricing.p0 + ez @ policy.Bz.T


def psibar_at(policy: Policy, k: int, z_k) -> np.ndarray:
    return policy.c[k] + np.asarray(z_k) @ policy.Gz[k].T


def mean_alpha_forecast(policy: Policy, k: int, sbar_k, z_k, u: int | None = None) -> np.ndarray:
    """E[abar_{t_j} | F0_{t_k}] for j = k..u (rows), propagated through the mean-field plan."""
    cfg = policy.cfg
    u = policy.n if u is None else u
    times, dt = policy.times, policy.dt
    m = np.array(sbar_k, dtype=float)
    out = np.empty((u - k + 1, cfg.n_regions))
    for j in range(k, u + 1):
        zj = z_conditional_mean(cfg, z_k, times[k], times[j])
        f = psibar_at(policy, j, zj) + cfg.pricing.p0 + zj @ policy.Bz.T
        a = policy.M @ (policy.Phi[j] @ m + f)
        out[j - k] = a
        m = m + dt * a
    return out


@dataclass
class MeanFieldPlan:
    """Stage-1 quantities along simulated common-noise paths: (P, n+1, G)."""

    psibar: np.ndarray
    abar: np.ndarray
    sbar: np.ndarray
    b: np.ndarray


def mean_field_plan(policy: Policy, z: np.ndarray, sbar0=None) -> MeanFieldPlan:
    """Forward sweep of the stage-1 system on common states z: (P, n+1, G+1)."""
    P, n1, _ = z.shape
    G = policy.cfg.n_regions
    psibar = policy.c[None] + np.einsum("kac,pkc->pka", policy.Gz, z)
    b = policy.cfg.pricing.p0 + z @ policy.Bz.T
    sbar = np.empty((P, n1, G))
    abar = np.empty((P, n1, G))
    sbar[:, 0] = policy.sbar0 if sbar0 is None else sbar0
    M, dt = policy.M, policy.dt
    for k in range(n1):
        abar[:, k] = (np.einsum("ab,pb->pa", policy.Phi[k], sbar[:, k]) + psibar[:, k] + b[:, k]) @ M.T
        if k + 1 < n1:
            sbar[:, k + 1] = sbar[:, k] + dt * abar[:, k]
    return MeanFieldPlan(psibar=psibar, abar=abar, sbar=sbar, b=b)


def individual_psi(policy: Policy, g: int, plan: MeanFieldPlan, z: np.ndarray, q: np.ndarray) -> np.ndarray:
    """psi^g along paths; ``q`` holds the agent's own Q (P, n+1)."""
    return (
        policy.d0[None, :, g]
        + np.einsum("kb,pkb->pk", policy.dS[:, g, :], plan.sbar)
        + np.einsum("kc,pkc->pk", policy.dz[:, g, :], z)
        + policy.dq[None, :, g] * q
    )


def aggregate_x(policy: Policy, z, abar):
    pi = policy.cfg.weights
    return -z[..., 0] - (z[..., 1:] - abar) @ pi


def feedback_control(policy: Policy, g: int, k: int, S, Q, q0, qbar, abar, psi):
    """alpha = -delta (phi S + psi + bhat) with bhat = p0 + slope x - K Q."""
    pi = policy.cfg.weights
    x = -np.asarray(q0) - (np.asarray(qbar) - np.asarray(abar)) @ pi
    bhat = policy.cfg.pricing.p0 + policy.slope * x - policy.cfg.regions[g].demand_charge * np.asarray(Q)
    return -policy.delta[g] * (policy.phi[k, g] * np.asarray(S) + np.asarray(psi) + bhat)


@dataclass
class SolvedPolicy:
    policy: Policy
    paths: StatePaths
    plan: MeanFieldPlan
    psi: np.ndarray  # representative agents, (P, n+1, G)

    @property
    def mode(self) -> GameMode:
        return self.policy.mode


def solve(
    cfg: ScenarioConfig,
    mode: GameMode | str,
    paths: StatePaths,
    slope: float | None = None,
    paper_literal_b: bool = False,
    policy: Policy | None = None,
) -> SolvedPolicy:
    policy = policy or build_policy(cfg, mode, slope=slope, paper_literal_b=paper_literal_b)
    z = paths.z()
    plan = mean_field_plan(policy, z)
    psi = np.stack([individual_psi(policy, g, plan, z, paths.q[:, :, g]) for g in range(cfg.n_regions)], axis=2)
    return SolvedPolicy(policy=policy, paths=paths, plan=plan, psi=psi)
