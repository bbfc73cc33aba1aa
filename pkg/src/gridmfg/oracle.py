"""Independent checks of the solver.

Each check returns numbers together with the tolerance it was judged
against, collected in an :class:`OracleReport`.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
import scipy.linalg

from .accounting import mean_se, node_costs, realized_costs, trapezoid
from .config import GameMode, ScenarioConfig
from .engine import PathBundle, simulate_mean_field, simulate_n_player, storage_path, with_controls
from .market import effective_slope
from .processes import (
    CommonLoading,
    StatePaths,
    normals,
    ou_conditional_mean,
    simulate_exogenous,
    simulate_ou,
)
from .solver import (
    Policy,
    _trap_weights,
    build_policy,
    mean_alpha_forecast,
    mean_field_plan,
    psibar_at,
    scalar_riccati,
    z_params,
)

# stream roles used only here; the simulator uses 0..3
INNER_COMMON = 10
INNER_IDIO = 11
INNER_INIT = 12


@dataclass
class Check:
    name: str
    statistic: float
    tolerance: float
    passed: bool
    context: dict[str, Any] = field(default_factory=dict)


@dataclass
class OracleReport:
    checks: list[Check] = field(default_factory=list)

    def add(self, name: str, statistic: float, tolerance: float, passed: bool, **context) -> Check:
        c = Check(name, float(statistic), float(tolerance), bool(passed), context)
        self.checks.append(c)
        return c

    def extend(self, other: "OracleReport") -> "OracleReport":
        self.checks.extend(other.checks)
        return self

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def text(self) -> str:
        lines = []
        for c in self.checks:
            flag = "PASS" if c.passed else "FAIL"
            lines.append(f"{flag}  {c.name}: {c.statistic:.6g} (tolerance {c.tolerance:.3g})")
        return "\n".join(lines)


# --------------------------------------------------------------------------
# Riccati


def _rk4(f: Callable, y0, t0: float, t1: float, m: int):
    h = (t1 - t0) / m
    y, t = y0, t0
    for _ in range(m):
        k1 = f(t, y)
        k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = f(t + h, y + h * k3)
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return y


def riccati_reference(A2: float, delta_or_M, B2: float, times: np.ndarray, refine: int = 10) -> np.ndarray:
    """Backward RK4 on a ``refine``-times finer grid.

    Accepts a scalar ``delta`` (phi' - delta phi^2 + A2 = 0) or a matrix ``M``
    (Phi' + Phi M Phi + A2 = 0); the scalar case is M = -delta.  Integration is
    on the inverse U = Phi^{-1}, whose equation U' = M + A2 U^2 is not stiff.
    """
    if np.ndim(delta_or_M) == 0:
        M = -np.array([[float(delta_or_M)]])
        scalar = True
    else:
        M = np.asarray(delta_or_M, dtype=float)
        scalar = False
    G = M.shape[0]
    n = len(times) - 1
    out = np.empty((n + 1, G, G))
    U = np.eye(G) / B2
    out[n] = B2 * np.eye(G)
    rhs = lambda _t, u: M + A2 * u @ u
    for j in range(n - 1, -1, -1):
        U = _rk4(rhs, U, times[j + 1], times[j], refine)
        out[j] = np.linalg.inv(U)
    return out[:, 0, 0] if scalar else out


def riccati_checks(cfg: ScenarioConfig, steps: int = 512, policy: Policy | None = None) -> OracleReport:
    rep = OracleReport()
    sc = cfg.storage_cost
    c = cfg.with_grid(steps)
    times = c.grid.times
    T = c.grid.horizon
    t0 = time.perf_counter()
    worst = 0.0
    for r in cfg.regions:
        delta = 1.0 / (sc.C + r.demand_charge)
        closed = scalar_riccati(sc.A2, delta, sc.B2, T, times)
        ref = riccati_reference(sc.A2, delta, sc.B2, times)
        worst = max(worst, float(np.max(np.abs(closed - ref))))
    rep.add("riccati.scalar_vs_rk4", worst, 1e-8, worst < 1e-8, steps=steps)
    for mode in GameMode:
        pol = build_policy(c, mode) if policy is None or policy.mode != mode else policy
        ric = pol.ric
        ok = ric.exp_checked > 0 and ric.exp_mismatch < 1e-6
        rep.add(f"riccati.matrix_vs_exponential.{mode.value}", ric.exp_mismatch, 1e-6, ok,
                checked_points=ric.exp_checked)
        if cfg.n_regions == 1:
            d = -pol.M[0, 0]
            err = float(np.max(np.abs(pol.Phi[:, 0, 0] - scalar_riccati(sc.A2, d, sc.B2, T, times))))
            rep.add(f"riccati.matrix_vs_scalar.{mode.value}", err, 1e-8, err < 1e-8)
    elapsed = time.perf_counter() - t0
    rep.add("riccati.runtime_seconds", elapsed, 1.0, elapsed < 1.0)
    return rep


# --------------------------------------------------------------------------
# coupling residual


def coupling_residual(bundle: PathBundle, policy: Policy, cfg: ScenarioConfig, mode: GameMode | str) -> dict:
    """Residual of the mode's first-order condition at every (path, time, region) cell.

    MFG: Y + P + K (alpha - Q) + C alpha; MFC adds p1 x (the planner's price
    impact term).  Y = phi S + psi is read from the policy; ``mode`` is the
    condition being checked, which need not be the policy's own mode.
    """
    mode = GameMode(mode)
    pr = cfg.pricing
    sc = cfg.storage_cost
    K = np.array([r.demand_charge for r in cfg.regions])
    Y = policy.phi[None] * bundle.S + bundle.psi
    x = -bundle.q0 - (bundle.qbar - bundle.abar) @ cfg.weights
    P = pr.p0 + pr.p1 * x
    extra = pr.p1 * x if mode is GameMode.MFC else 0.0 * x
    res = Y + (P + extra)[:, :, None] + K * (bundle.alpha - bundle.q) + sc.C * bundle.alpha
    a = np.abs(res)
    scale = 1.0 + float(np.max(np.abs(Y)))
    return {
        "max": float(a.max()),
        "p99": float(np.percentile(a, 99)),
        "scale": scale,
        "relative_p99": float(np.percentile(a, 99)) / scale,
    }


def coupling_check(cfg: ScenarioConfig, mode: GameMode | str, n_paths: int = 200, seed: int | None = None,
                   slope: float | None = None, name: str | None = None) -> OracleReport:
    mode = GameMode(mode)
    t0 = time.perf_counter()
    pol = build_policy(cfg, mode, slope=slope)
    b = simulate_mean_field(cfg, pol, n_paths, seed)
    res = coupling_residual(b, pol, cfg, mode)
    rep = OracleReport()
    tol = 1e-4 * res["scale"]
    rep.add(name or f"coupling.{mode.value}", res["p99"], tol, res["p99"] < tol,
            max=res["max"], scale=res["scale"], seconds=time.perf_counter() - t0)
    return rep


# --------------------------------------------------------------------------
# deterministic quadratic program


def zero_volatility(cfg: ScenarioConfig) -> ScenarioConfig:
    """Same scenario with every noise loading and initial spread set to zero."""

    def quiet(ou):
        return dataclasses.replace(ou, sigma=0.0, sigma_common=0.0,
                                   initial=dataclasses.replace(ou.initial, std=0.0))

    regions = tuple(
        dataclasses.replace(r, ou=quiet(r.ou), initial_storage=dataclasses.replace(r.initial_storage, std=0.0))
        for r in cfg.regions
    )
    row = dataclasses.replace(cfg.rest_of_world, ou=quiet(cfg.rest_of_world.ou))
    return dataclasses.replace(cfg, regions=regions, rest_of_world=row)


def _storage_form(n: int, dt: float, s0: float, A2: float, A1: float, B2: float, B1: float):
    """Hessian and gradient (at alpha = 0) of sum_{k<n} dt (A2/2 S_k^2 + A1 S_k) + g(S_n)
    with S_{k+1} = S_k + dt alpha_k; variables alpha_0..alpha_{n-1}."""
    L = dt * np.tril(np.ones((n + 1, n)), -1)
    Lr, ln = L[:n], L[n]
    H = dt * A2 * Lr.T @ Lr + B2 * np.outer(ln, ln)
    g = dt * (A2 * s0 + A1) * Lr.sum(axis=0) + (B2 * s0 - B1) * ln
    return H, g


@dataclass
class QPResult:
    alpha: np.ndarray  # (n, G)
    iterations: int
    converged: bool


def deterministic_qp_reference(cfg: ScenarioConfig, mode: GameMode | str, damping: float = 1.0,
                               max_iter: int = 500, tol: float = 1e-12) -> QPResult:
    """Discrete-time reference for the noise-free problem.

    The cost is discretised with the left-point rule and S_{k+1} = S_k + dt alpha_k.
    MFC minimises the aggregate cost directly; MFG iterates the best response
    to a frozen price until the mean control is a fixed point.
    """
    mode = GameMode(mode)
    cfg = zero_volatility(cfg)
    paths = simulate_exogenous(cfg, 1, 0, workers=1)
    n, dt, G = cfg.grid.steps, cfg.grid.dt, cfg.n_regions
    sc, pr, pi = cfg.storage_cost, cfg.pricing, cfg.weights
    q0 = paths.q0[0, :n]
    q = paths.q[0, :n]  # (n, G)
    K = np.array([r.demand_charge for r in cfg.regions])
    forms = [_storage_form(n, dt, r.s0_mean, sc.A2, sc.A1, sc.B2, sc.B1) for r in cfg.regions]

    def price(alpha):
        return pr.p0 + pr.p1 * (-q0 - (q - alpha) @ pi)

    if mode is GameMode.MFC:
        # J^C = sum dt (p0 x + p1 x^2) + sum_g pi_g [dt (K/2 (q-a)^2 + C/2 a^2) + storage form]
        H = np.zeros((G * n, G * n))
        g = np.zeros(G * n)
        x0 = -q0 - q @ pi  # x at alpha = 0
        for a in range(G):
            sa = slice(a * n, (a + 1) * n)
            Hs, gs = forms[a]
            H[sa, sa] += pi[a] * (Hs + dt * (K[a] + sc.C) * np.eye(n))
            g[sa] += pi[a] * (gs - dt * K[a] * q[:, a]) + dt * pi[a] * (pr.p0 + 2 * pr.p1 * x0)
            for b in range(G):
                sb = slice(b * n, (b + 1) * n)
                H[sa, sb] += 2 * dt * pr.p1 * pi[a] * pi[b] * np.eye(n)
        alpha = np.linalg.solve(H, -g).reshape(G, n).T
        return QPResult(alpha, 1, True)

    chol = []
    for a in range(G):
        Hs, _ = forms[a]
        chol.append(scipy.linalg.cho_factor(Hs + dt * (K[a] + sc.C) * np.eye(n)))
    alpha = np.zeros((n, G))
    for it in range(1, max_iter + 1):
        P = price(alpha)
        new = np.empty_like(alpha)
        for a in range(G):
            _, gs = forms[a]
            rhs = -(gs + dt * P - dt * K[a] * q[:, a])
            new[:, a] = scipy.linalg.cho_solve(chol[a], rhs)
        step = np.max(np.abs(new - alpha))
        alpha = (1 - damping) * alpha + damping * new
        if step < tol * (1.0 + np.max(np.abs(alpha))):
            return QPResult(alpha, it, True)
    return QPResult(alpha, max_iter, False)


def qp_check(cfg: ScenarioConfig, mode: GameMode | str, tol: float = 1e-3, slope: float | None = None,
             name: str | None = None) -> OracleReport:
    mode = GameMode(mode)
    t0 = time.perf_counter()
    det = zero_volatility(cfg)
    ref = deterministic_qp_reference(det, mode)
    b = simulate_mean_field(det, build_policy(det, mode, slope=slope), 1, 0, workers=1)
    sol = b.alpha[0, :-1]
    denom = np.linalg.norm(ref.alpha)
    err = np.linalg.norm(sol - ref.alpha) / denom if denom > 0 else np.linalg.norm(sol)
    rep = OracleReport()
    ok = ref.converged and err < tol
    rep.add(name or f"qp.{mode.value}", err, tol, ok, iterations=ref.iterations,
            converged=ref.converged, steps=cfg.grid.steps, seconds=time.perf_counter() - t0)
    return rep


# --------------------------------------------------------------------------
# nested Monte Carlo


def _continuation(cfg: ScenarioConfig, k: int, z_k: np.ndarray, q_k: np.ndarray, n_inner: int, seed: int):
    """Inner paths on t_k..T started at the given common state and agent states."""
    times = cfg.grid.times[k:]
    m = len(times) - 1
    G = cfg.n_regions
    ids = np.arange(n_inner)
    zp = z_params(cfg)
    load = CommonLoading.build([ou.mean_reversion for ou in zp], cfg.grid.dt)
    xi = normals(seed, ids, INNER_COMMON, k, (max(m, 1), len(load.rates)))
    common = load.integrals(xi)[:, :m]
    idio = normals(seed, ids, INNER_IDIO, k, (max(m, 1), G))[:, :m]
    z = np.empty((n_inner, m + 1, G + 1))
    q = np.empty((n_inner, m + 1, G))
    for i, ou in enumerate(zp):
        c = common[:, :, load.column(ou.mean_reversion)]
        z[:, :, i] = simulate_ou(ou, times, np.full(n_inner, z_k[i]), None, c)
        if i > 0:
            q[:, :, i - 1] = simulate_ou(ou, times, np.full(n_inner, q_k[i - 1]), idio[:, :, i - 1], c)
    return z, q


def nested_mc_conditional(policy: Policy, z_path: np.ndarray, q_path: np.ndarray, sbar_path: np.ndarray,
                          k: int, u: int | None = None, n_inner: int = 500, seed: int = 0) -> dict:
    """Nested Monte Carlo estimates of psibar_k, psi_k and E[abar_u | F0_k].

    ``z_path``, ``q_path`` and ``sbar_path`` are one outer path (n+1 rows).
    Inner paths restart from the outer state at t_k; along each one the
    integrands of the backward formulas are evaluated with realised values,
    then averaged.  Returns {target: (solver value, mc mean, mc se)}.
    """
    cfg = policy.cfg
    n, dt = policy.n, policy.dt
    G = cfg.n_regions
    sc, pr = cfg.storage_cost, cfg.pricing
    u = n if u is None else u
    zi, qi = _continuation(cfg, k, z_path[k], q_path[k], n_inner, seed)
    js = np.arange(k, n + 1)
    m = len(js)

    # psibar: R(t_j, t_k) (Phi_j M b_j + A1) integrated, plus R(T, t_k)(-B1)
    b = pr.p0 + zi @ policy.Bz.T  # (I, m, G)
    Rs = [np.eye(G)]
    for j in range(k, n):
        Rs.append(Rs[-1] @ policy.ric.steps[j])
    Rs = np.array(Rs)  # R(t_j, t_k), j = k..n
    w = np.array([_trap_weights(j, n, dt)[k] for j in js])
    F = np.einsum("jab,bc->jac", policy.Phi[k:], policy.M)
    integrand = np.einsum("jab,ijb->ija", F, b) + sc.A1
    psibar_mc = np.einsum("j,jab,ijb->ia", w, Rs, integrand) - sc.B1 * Rs[-1].sum(axis=1)

    # mean-field plan along inner paths from Sbar_k
    psibar_i = policy.c[None, k:] + np.einsum("jac,ijc->ija", policy.Gz[k:], zi)
    sbar = np.empty((n_inner, m, G))
    abar = np.empty((n_inner, m, G))
    sbar[:, 0] = sbar_path[k]
    for r in range(m):
        j = k + r
        abar[:, r] = (sbar[:, r] @ policy.Phi[j].T + psibar_i[:, r] + b[:, r]) @ policy.M.T
        if r + 1 < m:
            sbar[:, r + 1] = sbar[:, r] + dt * abar[:, r]

    # psi: -B1 W(T,t_k) - sum w W kappa bhat + sum w W A1
    pi = cfg.weights
    x = -zi[:, :, 0] - (zi[:, :, 1:] - abar) @ pi
    K = np.array([r.demand_charge for r in cfg.regions])
    bhat = pr.p0 + policy.slope * x[:, :, None] - K * qi
    W = np.exp(policy.logw[k:] - policy.logw[k])  # (m, G)
    kap = policy.kappa[k:]
    psi_mc = (-(w[:, None] * W * kap)[None] * bhat).sum(axis=1) + (w[:, None] * W).sum(axis=0) * sc.A1 \
        - sc.B1 * W[-1]

    z_k = z_path[k]
    psibar_sol = psibar_at(policy, k, z_k)
    psi_sol = policy.d0[k] + np.einsum("gb,b->g", policy.dS[k], sbar_path[k]) + policy.dz[k] @ z_k \
        + policy.dq[k] * q_path[k]
    fc = mean_alpha_forecast(policy, k, sbar_path[k], z_k, u)[-1]

    def stat(samples, value):
        return np.asarray(value, dtype=float), samples.mean(axis=0), samples.std(axis=0, ddof=1) / np.sqrt(n_inner)

    return {
        "psibar": stat(psibar_mc, psibar_sol),
        "psi": stat(psi_mc, psi_sol),
        "abar_forecast": stat(abar[:, u - k], fc),
    }


def nested_mc_check(cfg: ScenarioConfig, mode: GameMode | str, steps: int = 64, n_inner: int = 500,
                    probes: Sequence[float] = (0.0, 0.25, 0.5), horizon: float = 0.25, seed: int = 7,
                    policy: Policy | None = None, name: str = "nested") -> OracleReport:
    """Compare the solver's affine formulas with nested Monte Carlo at a few probe times."""
    c = cfg.with_grid(steps)
    pol = policy or build_policy(c, mode)
    outer = simulate_exogenous(c, 1, seed, workers=1)
    z = outer.z()
    plan = mean_field_plan(pol, z)
    rep = OracleReport()
    n = c.grid.steps
    for t in probes:
        k = int(round(t / c.grid.dt))
        u = min(n, k + int(round(horizon / c.grid.dt)))
        res = nested_mc_conditional(pol, z[0], outer.q[0], plan.sbar[0], k, u, n_inner, seed + 1 + k)
        for target, (val, mc, se) in res.items():
            zs = np.abs(val - mc) / np.where(se > 0, se, 1.0)
            exact = np.allclose(val, mc, rtol=1e-9, atol=1e-9)
            stat = 0.0 if exact else float(np.max(np.where(se > 0, zs, np.inf)))
            rep.add(f"{name}.{GameMode(mode).value}.{target}@t={c.grid.times[k]:.3g}", stat, 3.0, stat <= 3.0,
                    solver=val.tolist(), mc=mc.tolist(), se=se.tolist(), u=float(c.grid.times[u]))
    return rep


# --------------------------------------------------------------------------
# Gateaux derivative


def mirror_paths(cfg: ScenarioConfig, paths: StatePaths) -> StatePaths:
    """The antithetic counterpart: every Gaussian draw negated (state reflected about its mean)."""
    t = paths.times

    def mean(ou):
        return ou_conditional_mean(ou, ou.q0_mean, 0.0, t)

    q0m = mean(cfg.rest_of_world.ou)
    qm = np.stack([mean(r.ou) for r in cfg.regions], axis=1)
    return StatePaths(
        times=t,
        path_ids=paths.path_ids,
        q0=2 * q0m[None] - paths.q0,
        q=2 * qm[None] - paths.q,
        qbar=2 * qm[None] - paths.qbar,
    )


def antithetic_bundles(cfg: ScenarioConfig, policy: Policy, n_pairs: int, seed: int):
    paths = simulate_exogenous(cfg, n_pairs, seed)
    plus = simulate_mean_field(cfg, policy, paths=paths, seed=seed)
    s0m = np.array([r.s0_mean for r in cfg.regions])
    minus = simulate_mean_field(cfg, policy, paths=mirror_paths(cfg, paths), seed=seed, s0=2 * s0m - plus.S[:, 0])
    return plus, minus


def random_directions(times: np.ndarray, count: int, seed: int, blocks: int = 8) -> np.ndarray:
    """Deterministic (hence adapted) directions: random piecewise-constant time profiles, (count, n+1)."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n = len(times) - 1
    idx = np.minimum((np.arange(n + 1) * blocks) // n, blocks - 1)
    coef = rng.standard_normal((count, blocks))
    return coef[:, idx]


def _objective(cfg: ScenarioConfig, mode: GameMode, bundle: PathBundle, beta: np.ndarray, eps: float) -> np.ndarray:
    """Per-path objective after perturbing every region's control by eps * beta."""
    alpha = bundle.alpha + eps * beta[None, :, None]
    if mode is GameMode.MFC:
        moved = with_controls(cfg, bundle, alpha, bundle.abar + eps * beta[None, :, None])
        return realized_costs(moved, cfg).central
    moved = with_controls(cfg, bundle, alpha, freeze_price=True)
    return realized_costs(moved, cfg).region["total"] @ cfg.weights


def gateaux_test(cfg: ScenarioConfig, mode: GameMode | str, policy: Policy | None = None,
                 n_directions: int = 10, eps: Sequence[float] = (1e-2,), n_pairs: int = 200,
                 seed: int | None = None, slope_tol: float = 1e-2, name: str | None = None) -> OracleReport:
    """Finite-difference optimality test in random deterministic directions.

    MFC perturbs the whole population (the price responds); MFG perturbs the
    representative agents with the price frozen at its equilibrium value.
    Antithetic path pairs are used; samples are pair averages.
    """
    mode = GameMode(mode)
    seed = cfg.monte_carlo.seed if seed is None else int(seed)
    pol = policy or build_policy(cfg, mode)
    plus, minus = antithetic_bundles(cfg, pol, n_pairs, seed)
    betas = random_directions(plus.times, n_directions, seed + 1)
    base = 0.5 * (_objective(cfg, mode, plus, betas[0], 0.0) + _objective(cfg, mode, minus, betas[0], 0.0))
    rep = OracleReport()
    worst_drop, worst_slope = np.inf, 0.0
    details = []
    label = name or f"gateaux.{mode.value}"
    for d, beta in enumerate(betas):
        norm = float(np.sqrt(trapezoid((beta * beta)[None], plus.dt)[0]))
        for e in eps:
            up = 0.5 * (_objective(cfg, mode, plus, beta, e) + _objective(cfg, mode, minus, beta, e)) - base
            dn = 0.5 * (_objective(cfg, mode, plus, beta, -e) + _objective(cfg, mode, minus, beta, -e)) - base
            for diff in (up, dn):
                m, s = mean_se(diff)
                worst_drop = min(worst_drop, (m + 3 * s))
            slope = mean_se((up - dn) / (2 * e))[0] if e else 0.0
            worst_slope = max(worst_slope, abs(slope) / norm)
            details.append({"direction": d, "eps": e, "up": mean_se(up), "down": mean_se(dn),
                            "slope": slope, "norm": norm})
    rep.add(f"{label}.increase", worst_drop, 0.0, worst_drop >= 0.0, details=details)
    rep.add(f"{label}.slope", worst_slope, slope_tol, worst_slope < slope_tol)
    return rep


# --------------------------------------------------------------------------
# epsilon-Nash


def time_blocks(n: int, blocks: int) -> np.ndarray:
    """Indicator basis (n+1, blocks) of equal time blocks."""
    idx = np.minimum((np.arange(n + 1) * blocks) // n, blocks - 1)
    return (idx[:, None] == np.arange(blocks)[None]).astype(float)


def _deviator_cost(cfg: ScenarioConfig, bundle, alpha_dev: np.ndarray, impact: float) -> np.ndarray:
    """Node 0's per-path cost when it alone plays ``alpha_dev`` (P, n+1).

    ``impact`` is the price move per unit of the deviator's control (p1 / N).
    """
    g = int(bundle.labels[0])
    sc = cfg.storage_cost
    K = cfg.regions[g].demand_charge
    dt = bundle.dt
    a_eq = bundle.alpha[:, :, 0]
    price = bundle.price + impact * (alpha_dev - a_eq)
    q = bundle.q[:, :, 0]
    S = storage_path(bundle.S[:, 0, 0], alpha_dev, dt)
    net = q - alpha_dev
    run = price * (alpha_dev - q) + 0.5 * K * net * net + sc.running(S, alpha_dev)
    return trapezoid(run, dt) + sc.terminal(S[:, -1])


def _qp_correction(cfg: ScenarioConfig, bundle, basis: np.ndarray, fit: np.ndarray, impact: float) -> np.ndarray:
    """Best deterministic additive correction beta = basis @ theta for node 0, fitted on paths ``fit``."""
    g = int(bundle.labels[0])
    sc = cfg.storage_cost
    K = cfg.regions[g].demand_charge
    n1 = bundle.times.size
    n, dt = n1 - 1, bundle.dt
    w = np.full(n1, dt)
    w[0] = w[-1] = 0.5 * dt
    a = bundle.alpha[fit, :, 0]
    q = bundle.q[fit, :, 0]
    S = bundle.S[fit, :, 0]
    P = bundle.price[fit]
    L = dt * np.tril(np.ones((n1, n1)), -1)  # S_i depends on alpha_j, j < i
    # gradient of the cost with respect to alpha at each grid time
    direct = w * (P + impact * (a - q) + K * (a - q) + sc.C * a)
    level = (w * (sc.A2 * S + sc.A1)) @ L + np.outer(sc.B2 * S[:, -1] - sc.B1, L[-1])
    grad = (direct + level).mean(axis=0)
    H = np.diag(w * (2 * impact + K + sc.C)) + sc.A2 * (L.T * w) @ L + sc.B2 * np.outer(L[-1], L[-1])
    Hb = basis.T @ H @ basis
    theta = -np.linalg.solve(Hb, basis.T @ grad)
    return basis @ theta


def _best_deviation(cfg: ScenarioConfig, b, impact: float, blocks: int) -> dict:
    a_eq = b.alpha[:, :, 0]
    base = _deviator_cost(cfg, b, a_eq, impact)
    P, n1 = a_eq.shape
    evals = np.arange(P) % 2 == 1
    candidates: dict[str, np.ndarray] = {}
    for c in (0.5, 0.75, 0.9, 1.1, 1.25, 1.5):
        candidates[f"scale{c}"] = c * a_eq
    for s in (-8, -2, 2, 8):
        shifted = np.zeros_like(a_eq)
        if s > 0:
            shifted[:, s:] = a_eq[:, :-s]
        else:
            shifted[:, :s] = a_eq[:, -s:]
        candidates[f"shift{s}"] = shifted
    beta = _qp_correction(cfg, b, time_blocks(n1 - 1, blocks), ~evals, impact)
    candidates["qp"] = a_eq + beta[None]
    best = None
    for name, dev in candidates.items():
        gain = (base - _deviator_cost(cfg, b, dev, impact))[evals]
        m, s = mean_se(gain)
        if best is None or m > best["gain"]:
            best = {"gain": m, "se": s, "deviation": name}
    return best


def nash_deviation_gain(cfg: ScenarioConfig, policy: Policy | GameMode | str, Ns: Sequence[int],
                        n_paths: int = 200, seed: int | None = None, blocks: int = 16) -> dict[int, dict]:
    """Best unilateral improvement found for node 0 in the N-player game, per N.

    Family: scalar rescalings, time shifts and a fitted open-loop correction
    on time blocks (fitted on even paths, evaluated on odd paths).  Gains are
    lower bounds on the true epsilon.
    """
    if not isinstance(policy, Policy):
        policy = build_policy(cfg, policy)
    seed = cfg.monte_carlo.seed if seed is None else int(seed)
    out = {}
    for N in Ns:
        if N < 2:
            raise ValueError("N must be >= 2")
        b = simulate_n_player(cfg, policy, N, n_paths, seed)
        out[N] = _best_deviation(cfg, b, cfg.pricing.p1 / N, blocks)
    return out


def mean_field_deviation_gain(cfg: ScenarioConfig, policy: Policy | GameMode | str, n_paths: int = 200,
                              seed: int | None = None, blocks: int = 16, region: int = 0) -> dict:
    """The N = infinity analogue: one representative agent deviates against the frozen mean field."""
    if not isinstance(policy, Policy):
        policy = build_policy(cfg, policy)
    b = simulate_mean_field(cfg, policy, n_paths, seed)
    sl = slice(region, region + 1)
    view = dataclasses.replace(b, q=b.q[:, :, sl], S=b.S[:, :, sl], alpha=b.alpha[:, :, sl])
    view.labels = np.array([region])
    return _best_deviation(cfg, view, 0.0, blocks)


# --------------------------------------------------------------------------
# corrupted policies for negative controls


def wrong_slope(cfg: ScenarioConfig, mode: GameMode | str) -> float:
    """The other mode's effective slope."""
    other = GameMode.MFC if GameMode(mode) is GameMode.MFG else GameMode.MFG
    return effective_slope(other, cfg.pricing)


QP_STEPS = 2048
GATEAUX_STEPS = 8192


def run_suite(cfg: ScenarioConfig, n_paths: int = 200, seed: int | None = None, corrupt_slope: bool = False,
              nash_ns: Sequence[int] = (10, 50), nash_paths: int = 100) -> OracleReport:
    """The checks run by ``gridmfg verify``.

    Both the QP comparison and the finite-difference slope carry a first-order
    time-discretization error, so they run on refined copies of the grid.
    With ``corrupt_slope`` every policy is built with the other mode's price
    slope, so the checks that depend on it must fail.
    """
    fine_qp = cfg.with_grid(max(cfg.grid.steps, QP_STEPS))
    fine_gx = cfg.with_grid(max(cfg.grid.steps, GATEAUX_STEPS))
    rep = OracleReport()
    rep.extend(riccati_checks(cfg))
    for mode in GameMode:
        slope = wrong_slope(cfg, mode) if corrupt_slope else None
        rep.extend(coupling_check(cfg, mode, n_paths, seed, slope=slope))
        rep.extend(qp_check(fine_qp, mode, slope=slope))
        pol = build_policy(fine_gx, mode, slope=slope)
        rep.extend(gateaux_test(fine_gx, mode, pol, n_pairs=max(2, n_paths // 2), seed=seed))
    pol = build_policy(cfg, GameMode.MFG, slope=wrong_slope(cfg, GameMode.MFG) if corrupt_slope else None)
    gains = nash_deviation_gain(cfg, pol, nash_ns, nash_paths, seed)
    ns = sorted(gains)
    for lo, hi in zip(ns, ns[1:]):
        a, b = gains[lo], gains[hi]
        slack = 3.0 * np.hypot(a["se"], b["se"])
        rep.add(f"nash.trend.{lo}->{hi}", b["gain"] - a["gain"], slack, b["gain"] - a["gain"] <= slack,
                gains={k: v for k, v in gains.items()})
    return rep
