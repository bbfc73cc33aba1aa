from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridmfg.accounting import (
    CostReport,
    ratio_estimate,
    realized_costs,
    reduction,
    reduction_stats,
    price_of_anarchy,
    trapezoid,
)
from gridmfg.config import PricingSpec
from gridmfg.engine import baseline_no_storage, mean_field_price, simulate_mean_field
from gridmfg.processes import simulate_exogenous

from conftest import shipped, variant


@pytest.fixture(scope="module")
def run():
    cfg = shipped("one_region")
    paths = simulate_exogenous(cfg, 400, 21)
    return cfg, simulate_mean_field(cfg, "mfg", paths=paths, seed=21), baseline_no_storage(cfg, paths=paths, seed=21)


def test_trapezoid_exact_for_linear():
    t = np.linspace(0, 2, 11)
    assert trapezoid((3 * t + 1)[None], 0.2)[0] == pytest.approx(8.0)


def test_zero_scenario_costs(zero):
    rep = realized_costs(simulate_mean_field(zero, "mfc", 5, 0), zero)
    for arr in list(rep.region.values()) + list(rep.world.values()) + [rep.central]:
        assert not np.any(arr)


def test_baseline_storage_cost_is_static(run):
    cfg, _, base = run
    rep = realized_costs(base, cfg)
    assert np.all(rep.region["storage"] == 0.0)
    np.testing.assert_allclose(rep.region["terminal"], 0.5 * cfg.storage_cost.B2 * (-600 / 5000) ** 2)
    np.testing.assert_allclose(rep.region["terminal"], 36.0)


def test_baseline_storage_cost_with_nonzero_level():
    def edit(tree):
        tree["regions"][0]["initial_storage"] = {"mean": 0.05, "std": 0.0}
    cfg = variant("one_region", edit)
    rep = realized_costs(baseline_no_storage(cfg, 3, 1), cfg)
    sc = cfg.storage_cost
    np.testing.assert_allclose(rep.region["storage"], sc.running(0.05, 0.0) * cfg.grid.horizon, rtol=1e-12)
    np.testing.assert_allclose(rep.region["terminal"], sc.terminal(0.05), rtol=1e-12)


def test_central_cost_is_additive(two_zones):
    b = simulate_mean_field(two_zones, "mfg", 50, 2)
    rep = realized_costs(b, two_zones)
    np.testing.assert_allclose(rep.central, rep.world["total"] + rep.region["total"] @ two_zones.weights)
    np.testing.assert_allclose(rep.region["bill"], rep.region["volumetric"] + rep.region["demand"])


@settings(max_examples=25, deadline=None)
@given(p0=st.floats(-20, 20))
def test_volumetric_linear_in_intercept(run, p0):
    cfg, b, _ = run
    moved = replace(cfg, pricing=PricingSpec(p0, cfg.pricing.p1))
    ref = replace(cfg, pricing=PricingSpec(0.0, cfg.pricing.p1))
    price = lambda c: mean_field_price(c, b.q0, b.qbar, b.abar)
    vol = realized_costs(replace(b, price=price(moved)), moved).region["volumetric"][:, 0]
    vol0 = realized_costs(replace(b, price=price(ref)), ref).region["volumetric"][:, 0]
    flow = trapezoid(b.alpha[:, :, 0] - b.q[:, :, 0], b.dt)
    np.testing.assert_allclose(vol, vol0 + p0 * flow, atol=1e-9)


def test_volumetric_share(run):
    cfg, b, _ = run
    rep = realized_costs(b, cfg)
    vol, dem = rep.region["volumetric"].mean(), rep.region["demand"].mean()
    share = vol / (vol + dem)
    print(f"volumetric share of the bill: {share:.3f} (reference 0.76)")
    assert 0.65 < share < 0.9


def test_identical_reports_give_unit_ratio(run):
    cfg, b, _ = run
    rep = realized_costs(b, cfg)
    poa = price_of_anarchy(rep, rep)
    assert poa.difference.value == 0.0 and poa.difference.se == 0.0
    assert poa.ratio.value == pytest.approx(1.0) and poa.ratio.se == pytest.approx(0.0, abs=1e-15)
    for red in reduction_stats(rep, rep).values():
        assert red.absolute.value == 0.0
        assert red.percent is None or red.percent.value == 0.0


def test_poa_nonnegative(one_region):
    paths = simulate_exogenous(one_region, 400, 4)
    g = realized_costs(simulate_mean_field(one_region, "mfg", paths=paths, seed=4), one_region)
    c = realized_costs(simulate_mean_field(one_region, "mfc", paths=paths, seed=4), one_region)
    poa = price_of_anarchy(g, c)
    assert poa.difference.value >= -3 * poa.difference.se
    assert poa.shift == 0.0 or poa.shift > 1.0


def test_poa_shift_for_negative_totals():
    a = CostReport(("r",), np.ones(1), {}, {}, central=np.array([-3.0, -2.0, -2.5]))
    b = CostReport(("r",), np.ones(1), {}, {}, central=np.array([-3.5, -2.5, -2.5]))
    poa = price_of_anarchy(a, b)
    assert poa.shift == pytest.approx(1 + 2 * 17 / 6)
    assert poa.ratio.value > 1.0


def test_unpaired_reports_rejected(one_region):
    a = realized_costs(simulate_mean_field(one_region, "mfg", 10, 1), one_region)
    b = realized_costs(simulate_mean_field(one_region, "mfg", 12, 1), one_region)
    with pytest.raises(ValueError):
        price_of_anarchy(a, b)


def test_reduction_flags_zero_baseline():
    rng = np.random.default_rng(0)
    base = rng.normal(0.0, 1.0, 200)
    assert reduction(base - 0.1, base).flagged
    r = reduction(np.full(4, 8.0), np.full(4, 10.0))
    assert not r.flagged and r.percent.value == pytest.approx(20.0)
    neg = reduction(np.full(4, -12.0), np.full(4, -10.0))
    assert neg.percent.value == pytest.approx(20.0)


def test_ratio_delta_method():
    x = np.array([2.0, 4.0, 6.0])
    est = ratio_estimate(x, x / 2)
    assert est.value == pytest.approx(2.0) and est.se == pytest.approx(0.0, abs=1e-15)


def test_no_influence_reductions_positive():
    cfg = shipped("no_influence")
    paths = simulate_exogenous(cfg, 500, 1)
    base = realized_costs(baseline_no_storage(cfg, paths=paths, seed=1), cfg)
    red = reduction_stats(realized_costs(simulate_mean_field(cfg, "mfg", paths=paths, seed=1), cfg), base)
    for key in ("prosumers.volumetric", "prosumers.max_power"):
        est = red[key].absolute
        assert est.value > 3 * est.se, key


def test_influence_raises_demand_reduction():
    out = {}
    for name in ("no_influence", "equal_influence"):
        cfg = shipped(name)
        paths = simulate_exogenous(cfg, 500, 1)
        base = realized_costs(baseline_no_storage(cfg, paths=paths, seed=1), cfg)
        ctl = realized_costs(simulate_mean_field(cfg, "mfg", paths=paths, seed=1), cfg)
        out[name] = reduction_stats(ctl, base)["prosumers.demand"].percent.value
    print(f"demand-charge reduction: no influence {out['no_influence']:.2f}%, "
          f"equal influence {out['equal_influence']:.2f}%")
    assert out["equal_influence"] > out["no_influence"]
