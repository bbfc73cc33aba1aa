import numpy as np
import pytest

from gridmfg.config import GameMode
from gridmfg.engine import simulate_mean_field, simulate_n_player
from gridmfg.oracle import riccati_reference
from gridmfg.processes import simulate_exogenous
from gridmfg.solver import (
    RiccatiError,
    build_policy,
    conditional_driver_mean,
    exp_formula,
    feedback_control,
    individual_psi,
    interaction_matrices,
    matrix_riccati,
    mean_alpha_forecast,
    mean_field_plan,
    psibar_at,
    scalar_riccati,
    solve,
)

from conftest import shipped, variant


def test_interaction_one_region(one_region):
    mfc = interaction_matrices(one_region, GameMode.MFC)
    assert mfc.m_mode[0, 0] == pytest.approx(25.0)
    assert mfc.M[0, 0] == pytest.approx(-1 / 25)
    assert interaction_matrices(one_region, "mfg").m_mode[0, 0] == pytest.approx(20.0)


def test_interaction_two_zones(two_zones):
    im = interaction_matrices(two_zones, "mfc")
    assert im.det == pytest.approx(375.0)
    np.testing.assert_allclose(im.m_mode @ -im.M, np.eye(2), atol=1e-14)


def test_scalar_riccati_limits():
    assert scalar_riccati(250, 1 / 15, 5000, 1.0, 1.0) == pytest.approx(5000.0, rel=1e-14)
    assert scalar_riccati(250, 1 / 15, 5000, 100.0, 0.0) == pytest.approx(np.sqrt(250 * 15), abs=1e-9)
    assert np.sqrt(250 * 15) == pytest.approx(61.2372, abs=1e-4)


def test_scalar_riccati_against_rk4():
    t = np.linspace(0, 1, 513)
    ref = riccati_reference(250.0, 1 / 15, 5000.0, t)
    assert np.max(np.abs(scalar_riccati(250, 1 / 15, 5000, 1.0, t) - ref)) < 1e-8
    assert abs(scalar_riccati(250, 1 / 15, 5000, 1.0, 0.5) - ref[256]) < 1e-8


@pytest.mark.parametrize("mode", list(GameMode))
def test_matrix_matches_scalar_for_one_region(one_region, mode):
    cfg = one_region.with_grid(512)
    pol = build_policy(cfg, mode)
    delta = -pol.M[0, 0]
    closed = scalar_riccati(250, delta, 5000, 1.0, cfg.grid.times)
    assert np.max(np.abs(pol.Phi[:, 0, 0] - closed)) < 1e-8
    assert np.max(np.abs(pol.ric.phibar[:, 0, 0] - (closed - 5000))) < 1e-8
    assert np.all(pol.ric.phibar[-1] == 0.0)


def test_matrix_matches_exponential(two_zones):
    pol = build_policy(two_zones, "mfc")
    for k in (0, 64, 200):
        tau = 1.0 - pol.times[k]
        np.testing.assert_allclose(pol.ric.phibar[k], exp_formula(pol.M, 250, 5000, tau), atol=1e-6)


def test_exponential_mismatch_raises():
    M = -np.eye(2) / 20
    times = np.linspace(0, 1, 33)
    ric = matrix_riccati(M, 250.0, 5000.0, times)
    assert ric.exp_checked > 0 and ric.exp_mismatch < 1e-6
    with pytest.raises(RiccatiError):
        matrix_riccati(M, 250.0, 5000.0, times, stiffness_step=10.0, check_tol=1e-14)


def test_permutation_symmetry(two_zones):
    pol = build_policy(two_zones, "mfg")
    swap = np.array([[0, 1], [1, 0]])
    for k in (0, 100, 256):
        np.testing.assert_allclose(swap @ pol.ric.phibar[k] @ swap, pol.ric.phibar[k], atol=1e-9)


def test_transition_composes(two_zones):
    ric = build_policy(two_zones, "mfc").ric
    np.testing.assert_allclose(ric.transition(30, 10), ric.transition(20, 10) @ ric.transition(30, 20), rtol=1e-12)
    assert np.array_equal(ric.transition(5, 5), np.eye(2))


def test_driver_at_current_time(one_region):
    pol = build_policy(one_region, "mfg")
    assert conditional_driver_mean(pol, np.array([0.0, 0.0]), 0.3, 0.3)[0] == pytest.approx(5.0)
    assert conditional_driver_mean(pol, np.array([1.0, 1.0]), 0.3, 0.3)[0] == pytest.approx(-15.0)


def test_driver_zero_state(zero):
    pol = build_policy(zero, "mfg")
    for u in (0.0, 0.4, 1.0):
        assert conditional_driver_mean(pol, np.zeros(2), 0.0, u)[0] == pytest.approx(zero.pricing.p0)


@pytest.mark.parametrize("mode", list(GameMode))
def test_terminal_conditions(one_region, mode):
    pol = build_policy(one_region, mode)
    for z in (np.zeros(2), np.array([1.5, -2.0])):
        assert psibar_at(pol, pol.n, z)[0] == pytest.approx(600.0)
    assert pol.d0[-1, 0] == pytest.approx(600.0)
    assert not pol.dS[-1].any() and not pol.dz[-1].any() and pol.dq[-1, 0] == 0.0


@pytest.mark.parametrize("mode", list(GameMode))
def test_zero_scenario_is_a_fixed_point(zero, mode):
    pol = build_policy(zero, mode)
    paths = simulate_exogenous(zero, 4, 1)
    sol = solve(zero, mode, paths, policy=pol)
    for arr in (sol.plan.psibar, sol.plan.abar, sol.plan.sbar, sol.psi):
        assert np.max(np.abs(arr)) == 0.0
    assert np.max(np.abs(mean_alpha_forecast(pol, 10, np.zeros(1), np.zeros(2), 50))) == 0.0
    b = simulate_mean_field(zero, pol, 4, 1)
    assert not b.alpha.any() and not b.S.any()
    np.testing.assert_array_equal(b.price, zero.pricing.p0)


def test_forecast_identity_at_current_time(one_region):
    pol = build_policy(one_region, "mfc")
    paths = simulate_exogenous(one_region, 3, 2)
    z = paths.z()
    plan = mean_field_plan(pol, z)
    for k in (0, 77, 200):
        for p in range(3):
            got = mean_alpha_forecast(pol, k, plan.sbar[p, k], z[p, k], k)
            np.testing.assert_allclose(got[0], plan.abar[p, k], atol=1e-12)


def test_modes_coincide_without_price_impact():
    def flat(tree):
        tree["pricing"]["p1"] = 0.0
    cfg = variant("one_region", flat)
    a, b = build_policy(cfg, "mfg"), build_policy(cfg, "mfc")
    for name in ("Phi", "c", "Gz", "d0", "dS", "dz", "dq", "phi"):
        np.testing.assert_allclose(getattr(a, name), getattr(b, name), atol=1e-8)


@pytest.mark.parametrize("mode", list(GameMode))
def test_representative_agent_consistency(mode):
    # At S = Sbar and Q = Qbar the individual feedback reproduces abar; the two
    # coefficient families are separate quadratures, so agreement is O(dt).
    errs = []
    for n in (256, 1024):
        cfg = shipped("one_region").with_grid(n)
        pol = build_policy(cfg, mode)
        paths = simulate_exogenous(cfg, 8, 3)
        z = paths.z()
        plan = mean_field_plan(pol, z)
        psi = individual_psi(pol, 0, plan, z, paths.qbar[:, :, 0])
        alpha = np.stack([
            feedback_control(pol, 0, k, plan.sbar[:, k, 0], paths.qbar[:, k, 0], paths.q0[:, k],
                             paths.qbar[:, k], plan.abar[:, k], psi[:, k])
            for k in range(n + 1)], axis=1)
        errs.append(np.max(np.abs(alpha - plan.abar[:, :, 0])))
    assert errs[0] < 5e-3
    assert errs[0] / errs[1] > 3.5  # first order in dt


def test_population_average_tracks_abar(one_region):
    # MFG fixed point: the average control of many nodes equals abar on each common path
    b = simulate_n_player(one_region, "mfg", 1000, n_paths=2, seed=4)
    avg = b.alpha.mean(axis=2)
    se = b.alpha.std(axis=2, ddof=1) / np.sqrt(b.N)
    assert np.all(np.abs(avg - b.abar[:, :, 0]) < 4 * se + 1e-2)


def test_paper_literal_driver_differs(one_region):
    a = build_policy(one_region, "mfg")
    b = build_policy(one_region, "mfg", paper_literal_b=True)
    assert b.Bz[0, 1] - a.Bz[0, 1] == pytest.approx(-one_region.storage_cost.C)
    assert not np.allclose(a.c, b.c)


def test_policy_grid_mismatch(one_region):
    pol = build_policy(one_region.with_grid(64), "mfg")
    with pytest.raises(ValueError):
        simulate_mean_field(one_region, pol, 2, 0)
