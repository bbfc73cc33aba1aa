"""Realized costs, bill decomposition, cost reductions and the price of anarchy."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import ScenarioConfig

REGION_COMPONENTS = ("volumetric", "demand", "storage", "terminal")


def trapezoid(values: np.ndarray, dt: float) -> np.ndarray:
    """Trapezoid rule along axis 1 (time) on a uniform grid."""
    return dt * (values[:, 1:-1].sum(axis=1) + 0.5 * (values[:, 0] + values[:, -1]))


def mean_se(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if x.shape[0] < 2:
        return float(x.mean()), 0.0
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(x.shape[0]))


@dataclass
class CostReport:
    """Per-path cost samples; the reported numbers are Monte Carlo means with standard errors.

    ``region`` maps a component name to an array (P, G); ``world`` maps the
    rest-of-world components to arrays (P,).  ``central`` holds J^C per path.
    """

    region_names: tuple[str, ...]
    weights: np.ndarray
    region: dict[str, np.ndarray]
    world: dict[str, np.ndarray]
    central: np.ndarray
    path_ids: np.ndarray | None = None
    diagnostics: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.central.shape[0]

    def region_stat(self, component: str, g: int) -> tuple[float, float]:
        return mean_se(self.region[component][:, g])

    def world_stat(self, component: str) -> tuple[float, float]:
        return mean_se(self.world[component])

    def central_stat(self) -> tuple[float, float]:
        return mean_se(self.central)

    def rows(self):
        """(region, component, mean, stderr) rows for tabular output."""
        for g, name in enumerate(self.region_names):
            for comp in REGION_COMPONENTS + ("bill", "total", "max_power", "peak_storage", "storage_range"):
                src = self.region if comp in self.region else self.diagnostics
                m, s = mean_se(src[comp][:, g])
                yield name, comp, m, s
        for comp in ("volumetric", "demand", "total"):
            m, s = mean_se(self.world[comp])
            yield "rest_of_world", comp, m, s
        m, s = mean_se(self.central)
        yield "aggregate", "central", m, s


def _region_costs(cfg: ScenarioConfig, price, q, S, alpha, dt):
    sc = cfg.storage_cost
    K = np.array([r.demand_charge for r in cfg.regions])
    net = q - alpha
    vol = trapezoid(price[:, :, None] * (alpha - q), dt)
    dem = trapezoid(0.5 * K * net * net, dt)
    run = trapezoid(sc.running(S, alpha), dt)
    term = sc.terminal(S[:, -1])
    return vol, dem, run, term


def realized_costs(bundle, cfg: ScenarioConfig) -> CostReport:
    """Cost decomposition of a mean-field :class:`~gridmfg.engine.PathBundle`."""
    dt = bundle.dt
    vol, dem, run, term = _region_costs(cfg, bundle.price, bundle.q, bundle.S, bundle.alpha, dt)
    region = {
        "volumetric": vol,
        "demand": dem,
        "storage": run,
        "terminal": term,
        "bill": vol + dem,
        "total": vol + dem + run + term,
    }
    k0 = cfg.rest_of_world.demand_charge
    w_vol = trapezoid(-bundle.price * bundle.q0, dt)
    w_dem = trapezoid(0.5 * k0 * bundle.q0 * bundle.q0, dt)
    world = {"volumetric": w_vol, "demand": w_dem, "total": w_vol + w_dem}
    central = world["total"] + region["total"] @ cfg.weights
    diagnostics = {
        "max_power": np.max(np.abs(bundle.q - bundle.alpha), axis=1),
        "max_consumption": np.max(np.abs(bundle.q), axis=1),
        "peak_storage": np.max(np.abs(bundle.S), axis=1),
        "storage_range": np.ptp(bundle.S, axis=1),
    }
    return CostReport(
        region_names=tuple(r.name for r in cfg.regions),
        weights=cfg.weights,
        region=region,
        world=world,
        central=central,
        path_ids=getattr(bundle, "path_ids", None),
        diagnostics=diagnostics,
    )


def node_costs(bundle, cfg: ScenarioConfig) -> dict[str, np.ndarray]:
    """Per-node cost components (P, N) of an :class:`~gridmfg.engine.NPlayerBundle`."""
    sc = cfg.storage_cost
    K = np.array([cfg.regions[g].demand_charge for g in bundle.labels])
    dt = bundle.dt
    net = bundle.q - bundle.alpha
    vol = trapezoid(bundle.price[:, :, None] * (bundle.alpha - bundle.q), dt)
    dem = trapezoid(0.5 * K * net * net, dt)
    run = trapezoid(sc.running(bundle.S, bundle.alpha), dt)
    term = sc.terminal(bundle.S[:, -1])
    return {"volumetric": vol, "demand": dem, "storage": run, "terminal": term, "total": vol + dem + run + term}


# --------------------------------------------------------------------------
# comparisons


@dataclass(frozen=True)
class Estimate:
    value: float
    se: float

    @property
    def ci(self) -> tuple[float, float]:
        return self.value - 1.96 * self.se, self.value + 1.96 * self.se


@dataclass(frozen=True)
class PriceOfAnarchy:
    """``difference`` = J^C(MFG) - J^C(MFC) carries the guarantee (>= 0).

    ``ratio`` is (J^C(MFG) + shift) / (J^C(MFC) + shift); ``shift`` is 0 when
    both totals are positive and otherwise ``1 + 2 max(|J_MFG|, |J_MFC|)``.
    """

    mfg: Estimate
    mfc: Estimate
    difference: Estimate
    ratio: Estimate
    shift: float


def _check_paired(a: CostReport, b: CostReport) -> None:
    if a.n_paths != b.n_paths:
        raise ValueError(f"unpaired reports: {a.n_paths} vs {b.n_paths} paths")
    if a.path_ids is not None and b.path_ids is not None and not np.array_equal(a.path_ids, b.path_ids):
        raise ValueError("unpaired reports: different path ids")


def ratio_estimate(num: np.ndarray, den: np.ndarray) -> Estimate:
    """Ratio of means with a paired delta-method standard error."""
    mn, md = num.mean(), den.mean()
    r = mn / md
    if len(num) < 2:
        return Estimate(float(r), 0.0)
    resid = num - r * den
    return Estimate(float(r), float(resid.std(ddof=1) / np.sqrt(len(num)) / abs(md)))


def price_of_anarchy(mfg: CostReport, mfc: CostReport) -> PriceOfAnarchy:
    _check_paired(mfg, mfc)
    a, b = mfg.central, mfc.central
    ma, mb = a.mean(), b.mean()
    shift = 0.0 if (ma > 0 and mb > 0) else 1.0 + 2.0 * max(abs(ma), abs(mb))
    return PriceOfAnarchy(
        mfg=Estimate(*mean_se(a)),
        mfc=Estimate(*mean_se(b)),
        difference=Estimate(*mean_se(a - b)),
        ratio=ratio_estimate(a + shift, b + shift),
        shift=shift,
    )


@dataclass(frozen=True)
class Reduction:
    """Relative reduction (baseline - controlled) / baseline, in percent.

    When the baseline is statistically indistinguishable from zero the
    percentage is meaningless: ``flagged`` is set and only ``absolute`` counts.
    """

    absolute: Estimate
    percent: Estimate | None
    flagged: bool


def reduction(controlled: np.ndarray, baseline: np.ndarray) -> Reduction:
    diff = baseline - controlled
    absolute = Estimate(*mean_se(diff))
    bm, bse = mean_se(baseline)
    if abs(bm) <= 3.0 * bse or bm == 0.0:
        return Reduction(absolute, None, True)
    r = ratio_estimate(diff, baseline)
    # percentage relative to |baseline| so that a positive number always means "less cost"
    sign = 1.0 if bm > 0 else -1.0
    return Reduction(absolute, Estimate(100.0 * sign * r.value, 100.0 * r.se), False)


def reduction_stats(controlled: CostReport, baseline: CostReport) -> dict[str, Reduction]:
    """Per-component reductions relative to the no-storage baseline.

    Keys are ``"<region>.<component>"`` and ``"rest_of_world.<component>"``;
    ``max_power`` compares E[max |Q - alpha|] with E[max |Q|].
    """
    _check_paired(controlled, baseline)
    out: dict[str, Reduction] = {}
    for g, name in enumerate(controlled.region_names):
        for comp in ("volumetric", "demand", "bill", "total"):
            out[f"{name}.{comp}"] = reduction(controlled.region[comp][:, g], baseline.region[comp][:, g])
        out[f"{name}.max_power"] = reduction(
            controlled.diagnostics["max_power"][:, g], baseline.diagnostics["max_power"][:, g]
        )
    for comp in ("volumetric", "total"):
        out[f"rest_of_world.{comp}"] = reduction(controlled.world[comp], baseline.world[comp])
    out["central"] = reduction(controlled.central, baseline.central)
    return out
