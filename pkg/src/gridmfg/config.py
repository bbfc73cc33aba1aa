"""Scenario definition: parameter containers, JSON parsing and validation."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any


class GameMode(str, enum.Enum):
    MFG = "mfg"
    MFC = "mfc"


class ScenarioError(ValueError):
    """Raised when a scenario document cannot be turned into a config.

    ``path`` is the dotted location of the offending key.
    """

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class SeasonalFn:
    """mu(t) = offset + amplitude * cos(omega * t + phase)."""

    offset: float = 0.0
    amplitude: float = 0.0
    omega: float = 0.0
    phase: float = 0.0

    def __call__(self, t):
        import numpy as np

        return self.offset + self.amplitude * np.cos(self.omega * np.asarray(t, dtype=float) + self.phase)


@dataclass(frozen=True)
class GaussianInit:
    """Initial value: ``mean`` (None means 'use the seasonal mean at 0') plus optional spread."""

    mean: float | None = None
    std: float = 0.0


@dataclass(frozen=True)
class OUParams:
    mean_reversion: float
    sigma: float
    sigma_common: float
    seasonal: SeasonalFn
    initial: GaussianInit = field(default_factory=GaussianInit)

    @property
    def q0_mean(self) -> float:
        if self.initial.mean is None:
            return float(self.seasonal(0.0))
        return float(self.initial.mean)


@dataclass(frozen=True)
class RegionSpec:
    name: str
    weight: float
    ou: OUParams
    demand_charge: float
    initial_storage: GaussianInit = field(default_factory=lambda: GaussianInit(0.0, 0.0))

    @property
    def s0_mean(self) -> float:
        return 0.0 if self.initial_storage.mean is None else float(self.initial_storage.mean)


@dataclass(frozen=True)
class RestOfWorld:
    ou: OUParams
    demand_charge: float = 0.0


@dataclass(frozen=True)
class StorageCostSpec:
    A2: float
    A1: float
    C: float
    B2: float
    B1: float

    def running(self, s, a):
        return 0.5 * self.A2 * s * s + self.A1 * s + 0.5 * self.C * a * a

    def terminal(self, s):
        return 0.5 * self.B2 * (s - self.B1 / self.B2) ** 2


@dataclass(frozen=True)
class PricingSpec:
    p0: float
    p1: float


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    steps: int

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def times(self):
        import numpy as np

        return np.linspace(0.0, self.horizon, self.steps + 1)


@dataclass(frozen=True)
class MonteCarloSpec:
    paths: int = 1000
    seed: int = 0


@dataclass(frozen=True)
class ScenarioConfig:
    regions: tuple[RegionSpec, ...]
    rest_of_world: RestOfWorld
    storage_cost: StorageCostSpec
    pricing: PricingSpec
    grid: TimeGrid
    monte_carlo: MonteCarloSpec = field(default_factory=MonteCarloSpec)
    name: str = ""

    @property
    def n_regions(self) -> int:
        return len(self.regions)

    @property
    def weights(self):
        import numpy as np

        return np.array([r.weight for r in self.regions])

    def with_grid(self, steps: int) -> "ScenarioConfig":
        return replace(self, grid=replace(self.grid, steps=int(steps)))

    def with_monte_carlo(self, paths: int | None = None, seed: int | None = None) -> "ScenarioConfig":
        mc = self.monte_carlo
        return replace(
            self,
            monte_carlo=MonteCarloSpec(
                paths=mc.paths if paths is None else int(paths),
                seed=mc.seed if seed is None else int(seed),
            ),
        )


# --------------------------------------------------------------------------
# parsing


_MISSING = object()


def _get(tree: dict, key: str, path: str, default: Any = _MISSING) -> Any:
    if not isinstance(tree, dict):
        raise ScenarioError(path, "expected an object")
    if key not in tree:
        if default is _MISSING:
            raise ScenarioError(f"{path}.{key}" if path else key, "missing required key")
        return default
    return tree[key]


def _num(tree: dict, key: str, path: str, default: Any = _MISSING) -> float:
    full = f"{path}.{key}" if path else key
    v = _get(tree, key, path, default)
    if v is None and default is None:
        return None  # type: ignore[return-value]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(full, f"expected a number, got {type(v).__name__}")
    return float(v)


def _int(tree: dict, key: str, path: str, default: Any = _MISSING) -> int:
    full = f"{path}.{key}" if path else key
    v = _get(tree, key, path, default)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ScenarioError(full, f"expected an integer, got {type(v).__name__}")
    return int(v)


def _parse_init(tree: Any, path: str, default_mean: float | None) -> GaussianInit:
    if tree is None:
        return GaussianInit(default_mean, 0.0)
    if isinstance(tree, (int, float)) and not isinstance(tree, bool):
        return GaussianInit(float(tree), 0.0)
    if not isinstance(tree, dict):
        raise ScenarioError(path, "expected a number or an object with mean/std")
    mean = _get(tree, "mean", path, default_mean)
    if mean is not None and (isinstance(mean, bool) or not isinstance(mean, (int, float))):
        raise ScenarioError(f"{path}.mean", "expected a number or null")
    return GaussianInit(None if mean is None else float(mean), _num(tree, "std", path, 0.0))


def _parse_seasonal(tree: Any, path: str) -> SeasonalFn:
    if isinstance(tree, (int, float)) and not isinstance(tree, bool):
        return SeasonalFn(offset=float(tree))
    return SeasonalFn(
        offset=_num(tree, "offset", path, 0.0),
        amplitude=_num(tree, "amplitude", path, 0.0),
        omega=_num(tree, "omega", path, 0.0),
        phase=_num(tree, "phase", path, 0.0),
    )


def _parse_ou(tree: Any, path: str, idiosyncratic: bool = True) -> OUParams:
    seasonal = _parse_seasonal(_get(tree, "seasonal", path), f"{path}.seasonal")
    return OUParams(
        mean_reversion=_num(tree, "mean_reversion", path),
        sigma=_num(tree, "sigma", path, 0.0 if not idiosyncratic else _MISSING),
        sigma_common=_num(tree, "sigma_common", path),
        seasonal=seasonal,
        initial=_parse_init(_get(tree, "initial", path, None), f"{path}.initial", None),
    )


def parse_scenario(text: str | dict) -> ScenarioConfig:
    """Build a :class:`ScenarioConfig` from a JSON document (text or already-decoded tree)."""
    if isinstance(text, (str, bytes)):
        try:
            tree = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError("<document>", f"malformed JSON: {exc}") from exc
    else:
        tree = text
    if not isinstance(tree, dict):
        raise ScenarioError("<document>", "top level must be an object")

    raw_regions = _get(tree, "regions", "")
    if not isinstance(raw_regions, list) or not raw_regions:
        raise ScenarioError("regions", "expected a non-empty array")
    regions = []
    for i, r in enumerate(raw_regions):
        p = f"regions[{i}]"
        name = _get(r, "name", p, f"region{i + 1}")
        if not isinstance(name, str):
            raise ScenarioError(f"{p}.name", "expected a string")
        regions.append(
            RegionSpec(
                name=name,
                weight=_num(r, "weight", p),
                ou=_parse_ou(_get(r, "ou", p), f"{p}.ou"),
                demand_charge=_num(r, "demand_charge", p),
                initial_storage=_parse_init(
                    _get(r, "initial_storage", p, None), f"{p}.initial_storage", 0.0
                ),
            )
        )

    row = _get(tree, "rest_of_world", "")
    rest = RestOfWorld(
        ou=_parse_ou(_get(row, "ou", "rest_of_world"), "rest_of_world.ou", idiosyncratic=False),
        demand_charge=_num(row, "demand_charge", "rest_of_world", 0.0),
    )

    sc = _get(tree, "storage_cost", "")
    storage = StorageCostSpec(
        A2=_num(sc, "A2", "storage_cost"),
        A1=_num(sc, "A1", "storage_cost"),
        C=_num(sc, "C", "storage_cost"),
        B2=_num(sc, "B2", "storage_cost"),
        B1=_num(sc, "B1", "storage_cost"),
    )
    pr = _get(tree, "pricing", "")
    pricing = PricingSpec(p0=_num(pr, "p0", "pricing"), p1=_num(pr, "p1", "pricing"))
    gr = _get(tree, "grid", "")
    grid = TimeGrid(horizon=_num(gr, "horizon", "grid"), steps=_int(gr, "steps", "grid"))
    mc_tree = _get(tree, "monte_carlo", "", {})
    mc = MonteCarloSpec(
        paths=_int(mc_tree, "paths", "monte_carlo", 1000),
        seed=_int(mc_tree, "seed", "monte_carlo", 0),
    )
    name = _get(tree, "name", "", "")
    return ScenarioConfig(
        regions=tuple(regions),
        rest_of_world=rest,
        storage_cost=storage,
        pricing=pricing,
        grid=grid,
        monte_carlo=mc,
        name=str(name),
    )


def load_scenario(path: str | Path) -> ScenarioConfig:
    return parse_scenario(Path(path).read_text(encoding="utf-8"))


def to_tree(cfg: ScenarioConfig) -> dict:
    """Inverse of :func:`parse_scenario` (JSON-compatible tree)."""
    tree = asdict(cfg)
    tree["regions"] = list(tree["regions"])
    return tree


def serialize(cfg: ScenarioConfig) -> str:
    return json.dumps(to_tree(cfg), indent=2, sort_keys=True)


# --------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    constraint: str
    path: str
    value: Any

    def __str__(self) -> str:
        return f"{self.path}: violates '{self.constraint}' (value={self.value!r})"


def validate(cfg: ScenarioConfig) -> list[Violation]:
    """Return the list of violated invariants; empty means the scenario is usable."""
    out: list[Violation] = []

    def check(ok: bool, constraint: str, path: str, value: Any) -> None:
        if not ok:
            out.append(Violation(constraint, path, value))

    def finite(path: str, value: Any) -> bool:
        if value is None:
            return True
        if not math.isfinite(value):
            out.append(Violation("finite", path, value))
            return False
        return True

    def check_ou(ou: OUParams, path: str) -> None:
        for name in ("mean_reversion", "sigma", "sigma_common"):
            finite(f"{path}.{name}", getattr(ou, name))
        for name in ("offset", "amplitude", "omega", "phase"):
            finite(f"{path}.seasonal.{name}", getattr(ou.seasonal, name))
        finite(f"{path}.initial.mean", ou.initial.mean)
        check(ou.mean_reversion >= 0, "a >= 0", f"{path}.mean_reversion", ou.mean_reversion)
        check(ou.sigma >= 0, "sigma >= 0", f"{path}.sigma", ou.sigma)
        check(ou.sigma_common >= 0, "sigma_common >= 0", f"{path}.sigma_common", ou.sigma_common)
        check(ou.initial.std >= 0, "std >= 0", f"{path}.initial.std", ou.initial.std)

    sc = cfg.storage_cost
    for name in ("A2", "A1", "C", "B2", "B1"):
        finite(f"storage_cost.{name}", getattr(sc, name))
    check(sc.A2 > 0, "A2 > 0", "storage_cost.A2", sc.A2)
    check(sc.C > 0, "C > 0", "storage_cost.C", sc.C)
    check(sc.B2 > 0, "B2 > 0", "storage_cost.B2", sc.B2)

    finite("pricing.p0", cfg.pricing.p0)
    finite("pricing.p1", cfg.pricing.p1)
    check(cfg.pricing.p1 > 0, "p1 > 0", "pricing.p1", cfg.pricing.p1)

    check(len(cfg.regions) >= 1, "at least one region", "regions", len(cfg.regions))
    for i, r in enumerate(cfg.regions):
        p = f"regions[{i}]"
        finite(f"{p}.weight", r.weight)
        finite(f"{p}.demand_charge", r.demand_charge)
        check(r.weight > 0, "pi > 0", f"{p}.weight", r.weight)
        check(r.demand_charge >= 0, "K >= 0", f"{p}.demand_charge", r.demand_charge)
        check(sc.C + r.demand_charge > 0, "C + K > 0", f"{p}.demand_charge", sc.C + r.demand_charge)
        check_ou(r.ou, f"{p}.ou")
        finite(f"{p}.initial_storage.mean", r.initial_storage.mean)
        check(r.initial_storage.std >= 0, "std >= 0", f"{p}.initial_storage.std", r.initial_storage.std)
    total = float(sum(r.weight for r in cfg.regions))
    check(abs(total - 1.0) <= 1e-12, "sum(pi) = 1", "regions[*].weight", total)

    check_ou(cfg.rest_of_world.ou, "rest_of_world.ou")
    check(cfg.rest_of_world.ou.sigma == 0, "rest of world has no idiosyncratic noise",
          "rest_of_world.ou.sigma", cfg.rest_of_world.ou.sigma)
    check(cfg.rest_of_world.demand_charge >= 0, "K0 >= 0", "rest_of_world.demand_charge",
          cfg.rest_of_world.demand_charge)

    finite("grid.horizon", cfg.grid.horizon)
    check(cfg.grid.horizon > 0, "T > 0", "grid.horizon", cfg.grid.horizon)
    check(cfg.grid.steps >= 2, "n >= 2", "grid.steps", cfg.grid.steps)
    check(cfg.monte_carlo.paths >= 1, "paths >= 1", "monte_carlo.paths", cfg.monte_carlo.paths)
    check(0 <= cfg.monte_carlo.seed < 2**64, "0 <= seed < 2^64", "monte_carlo.seed", cfg.monte_carlo.seed)
    return out


def require_valid(cfg: ScenarioConfig) -> ScenarioConfig:
    bad = validate(cfg)
    if bad:
        raise ScenarioError(bad[0].path, "; ".join(str(v) for v in bad))
    return cfg
