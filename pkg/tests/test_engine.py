import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gridmfg.accounting import node_costs
from gridmfg.engine import (
    baseline_no_storage,
    mean_field_price,
    simulate_mean_field,
    simulate_n_player,
    storage_path,
    with_controls,
)
from gridmfg.processes import simulate_exogenous

from conftest import variant

floats = st.floats(-10, 10, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(a=arrays(float, (3, 9), elements=floats), b=arrays(float, (3, 9), elements=floats),
       s0=arrays(float, 3, elements=floats))
def test_storage_is_additive(a, b, s0):
    dt = 0.125
    lhs = storage_path(s0, a + b, dt)
    rhs = storage_path(s0, a, dt) + storage_path(np.zeros(3), b, dt)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)
    assert np.array_equal(lhs[:, 0], s0)


def test_controlled_and_baseline_share_paths(one_region):
    paths = simulate_exogenous(one_region, 30, 5)
    b = simulate_mean_field(one_region, "mfg", paths=paths, seed=5)
    base = baseline_no_storage(one_region, 30, 5)
    for name in ("q0", "q", "qbar"):
        assert np.array_equal(getattr(b, name), getattr(base, name))
    assert np.array_equal(b.S[:, 0], base.S[:, 0])
    assert not base.alpha.any()


def test_run_is_reproducible(two_zones):
    a = simulate_mean_field(two_zones, "mfc", 40, 8, workers=1)
    b = simulate_mean_field(two_zones, "mfc", 40, 8, workers=4)
    assert np.array_equal(a.alpha, b.alpha) and np.array_equal(a.price, b.price)


def test_storage_mostly_nonnegative(one_region):
    b = simulate_mean_field(one_region, "mfg", 1000)
    assert (b.S >= 0).mean() > 0.5
    assert (b.S < 0).any()


def test_mfc_smooths_price(one_region):
    paths = simulate_exogenous(one_region, 500, 3)
    v_g = simulate_mean_field(one_region, "mfg", paths=paths, seed=3).price.var(axis=1)
    v_c = simulate_mean_field(one_region, "mfc", paths=paths, seed=3).price.var(axis=1)
    d = v_g - v_c
    assert d.mean() > 3 * d.std(ddof=1) / np.sqrt(len(d))


def test_with_controls_roundtrip(one_region):
    b = simulate_mean_field(one_region, "mfc", 10, 1)
    again = with_controls(one_region, b, b.alpha)
    np.testing.assert_allclose(again.S, b.S, atol=1e-12)
    np.testing.assert_allclose(again.price, b.price, atol=1e-12)
    moved = with_controls(one_region, b, b.alpha + 1.0, abar=b.abar + 1.0)
    np.testing.assert_allclose(moved.price - b.price, one_region.pricing.p1, atol=1e-12)
    frozen = with_controls(one_region, b, b.alpha + 1.0, freeze_price=True)
    assert np.array_equal(frozen.price, b.price)


def quiet(tree):
    tree["regions"][0]["ou"]["sigma"] = 0.0
    tree["regions"][0]["ou"]["sigma_common"] = 0.0


def test_single_quiet_node_sees_mean_field_price():
    cfg = variant("one_region", quiet)
    nb = simulate_n_player(cfg, "mfg", 1, n_paths=3, seed=2)
    assert np.array_equal(nb.q[:, :, 0], nb.qbar[:, :, 0])
    np.testing.assert_allclose(nb.price, mean_field_price(cfg, nb.q0, nb.q, nb.alpha[:, :, :1]), atol=1e-12)


def test_empirical_price_converges(one_region):
    cfg = one_region.with_grid(64)
    gaps = {}
    for N in (100, 2500):
        nb = simulate_n_player(cfg, "mfg", N, n_paths=6, seed=2)
        gaps[N] = np.abs(nb.price - nb.mf_price).mean(axis=1)
    small, big = gaps[2500], gaps[100]
    assert small.mean() < big.mean()
    ratio = big.mean() / small.mean()
    assert 2.5 < ratio < 10  # O(N^-1/2) predicts 5


def test_nodes_are_exchangeable(one_region):
    cfg = one_region.with_grid(64)
    nb = simulate_n_player(cfg, "mfg", 50, n_paths=400, seed=6)
    cost = node_costs(nb, cfg)["total"]  # (P, N)
    others = (cost.sum(axis=1, keepdims=True) - cost) / (nb.N - 1)
    diff = cost - others
    z = diff.mean(axis=0) / (diff.std(axis=0, ddof=1) / np.sqrt(diff.shape[0]))
    assert np.all(np.abs(z) < 4.0)
    assert abs(np.mean(z ** 2) - 1.0) < 0.6


def test_player_count_validation(one_region):
    with pytest.raises(ValueError):
        simulate_n_player(one_region, "mfg", 0, n_paths=1)
