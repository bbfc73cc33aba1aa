"""Command-line driver: ``gridmfg {solve,simulate,compare,verify} SCENARIO``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .accounting import price_of_anarchy, realized_costs, reduction_stats
from .config import GameMode, ScenarioConfig, ScenarioError, load_scenario, validate
from .engine import baseline_no_storage, simulate_mean_field
from .oracle import run_suite
from .processes import simulate_exogenous
from .solver import RiccatiError, build_policy

log = logging.getLogger("gridmfg")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_BAD_INPUT = 2
EXIT_NUMERICAL = 3


def fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


class Writer:
    """Writes CSV files into one directory and remembers their hashes."""

    def __init__(self, out: Path):
        self.out = out
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: dict[str, str] = {}

    def table(self, name: str, header, rows) -> None:
        path = self.out / name
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([fmt(v) for v in row])
        self.files[name] = hashlib.sha256(path.read_bytes()).hexdigest()

    def manifest(self, info: dict) -> None:
        info = dict(info, files=dict(sorted(self.files.items())))
        (self.out / "manifest.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def resolve_scenario(name: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    shipped = resources.files("gridmfg") / "scenarios" / f"{name.removesuffix('.json')}.json"
    if shipped.is_file():
        return Path(str(shipped))
    raise ScenarioError("<scenario>", f"no such file or shipped scenario: {name}")


def load(args) -> tuple[ScenarioConfig, Path]:
    path = resolve_scenario(args.scenario)
    cfg = load_scenario(path)
    if args.grid_steps is not None:
        cfg = cfg.with_grid(args.grid_steps)
    cfg = cfg.with_monte_carlo(paths=getattr(args, "paths", None), seed=getattr(args, "seed", None))
    bad = validate(cfg)
    if bad:
        raise ScenarioError(bad[0].path, "\n  ".join(str(v) for v in bad))
    return cfg, path


def manifest_info(args, cfg: ScenarioConfig, path: Path, **extra) -> dict:
    info = {
        "command": args.command,
        "scenario": str(args.scenario),
        "scenario_sha256": hashlib.sha256(path.read_bytes()).hexdigest(),
        "grid_steps": cfg.grid.steps,
        "paths": cfg.monte_carlo.paths,
        "seed": cfg.monte_carlo.seed,
        "out": str(args.out),
    }
    info.update(extra)
    return info


def _cost_rows(report, label=None):
    for region, comp, m, s in report.rows():
        yield ([label] if label else []) + [region, comp, m, s]


# --------------------------------------------------------------------------
# commands


def cmd_solve(args) -> int:
    cfg, path = load(args)
    mode = GameMode(args.mode)
    pol = build_policy(cfg, mode, paper_literal_b=args.paper_literal_b)
    w = Writer(Path(args.out))
    names = [r.name for r in cfg.regions]
    G = cfg.n_regions
    t = pol.times
    w.table("phi.csv", ["t"] + names, ([t[k]] + list(pol.phi[k]) for k in range(len(t))))
    cols = [f"{names[a]}|{names[b]}" for a in range(G) for b in range(G)]
    phibar = pol.ric.phibar
    w.table("phibar.csv", ["t"] + cols, ([t[k]] + list(phibar[k].ravel()) for k in range(len(t))))
    w.table("transition.csv", ["t"] + cols,
            ([t[k]] + list(pol.ric.transition(len(t) - 1, k).ravel()) for k in range(len(t))))
    w.manifest(manifest_info(args, cfg, path, mode=mode.value, paper_literal_b=args.paper_literal_b))
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg, path = load(args)
    mode = GameMode(args.mode)
    seed = cfg.monte_carlo.seed
    paths = simulate_exogenous(cfg, cfg.monte_carlo.paths, seed)
    pol = build_policy(cfg, mode, paper_literal_b=args.paper_literal_b)
    b = simulate_mean_field(cfg, pol, paths=paths, seed=seed)
    rep = realized_costs(b, cfg)
    base = base_rep = None
    if args.baseline:
        base = baseline_no_storage(cfg, paths=paths, seed=seed)
        base_rep = realized_costs(base, cfg)
    w = Writer(Path(args.out))
    P, n1 = b.price.shape
    t = b.times

    def price_rows():
        for p in range(P):
            for k in range(n1):
                row = [p, t[k], b.price[p, k]]
                if base is not None:
                    row.append(base.price[p, k])
                yield row

    w.table("price.csv", ["path", "t", "price"] + (["baseline_price"] if base is not None else []), price_rows())
    names = [r.name for r in cfg.regions]

    def storage_rows():
        for p in range(P):
            for k in range(n1):
                for g, name in enumerate(names):
                    yield [p, t[k], name, b.S[p, k, g], b.alpha[p, k, g]]

    w.table("storage.csv", ["path", "t", "region", "S", "alpha"], storage_rows())
    if base_rep is None:
        w.table("costs.csv", ["region", "component", "mean", "stderr"], _cost_rows(rep))
    else:
        rows = [a + b_[2:] for a, b_ in zip(_cost_rows(rep), _cost_rows(base_rep))]
        w.table("costs.csv", ["region", "component", "mean", "stderr", "baseline_mean", "baseline_stderr"], rows)
    w.manifest(manifest_info(args, cfg, path, mode=mode.value, baseline=bool(args.baseline),
                             paper_literal_b=args.paper_literal_b))
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg, path = load(args)
    seed = cfg.monte_carlo.seed
    paths = simulate_exogenous(cfg, cfg.monte_carlo.paths, seed)
    bundles = {"baseline": baseline_no_storage(cfg, paths=paths, seed=seed)}
    for mode in GameMode:
        pol = build_policy(cfg, mode, paper_literal_b=args.paper_literal_b)
        bundles[mode.value] = simulate_mean_field(cfg, pol, paths=paths, seed=seed)
    reports = {k: realized_costs(b, cfg) for k, b in bundles.items()}
    w = Writer(Path(args.out))
    w.table("costs.csv", ["regime", "region", "component", "mean", "stderr"],
            (row for k, r in reports.items() for row in _cost_rows(r, k)))
    poa = price_of_anarchy(reports["mfg"], reports["mfc"])
    rows = []
    for label, est in (("J_C_mfg", poa.mfg), ("J_C_mfc", poa.mfc), ("difference", poa.difference),
                       ("ratio", poa.ratio)):
        lo, hi = est.ci
        rows.append([label, est.value, lo, hi])
    rows.append(["ratio_shift", poa.shift, poa.shift, poa.shift])
    w.table("poa.csv", ["quantity", "value", "ci_lo", "ci_hi"], rows)

    def red_rows():
        for mode in GameMode:
            for key, red in reduction_stats(reports[mode.value], reports["baseline"]).items():
                pct = red.percent
                yield [mode.value, key, red.absolute.value, red.absolute.se,
                       pct.value if pct else "", pct.se if pct else "", int(red.flagged)]

    w.table("reductions.csv", ["regime", "quantity", "absolute", "absolute_se", "percent", "percent_se",
                               "baseline_near_zero"], red_rows())
    t = bundles["baseline"].times
    means = {k: b.price.mean(axis=0) for k, b in bundles.items()}
    w.table("mean_price.csv", ["t", "baseline", "mfg", "mfc"],
            ([t[k], means["baseline"][k], means["mfg"][k], means["mfc"][k]] for k in range(len(t))))
    w.manifest(manifest_info(args, cfg, path, modes=["baseline", "mfg", "mfc"],
                             paper_literal_b=args.paper_literal_b))
    lo, hi = poa.difference.ci
    print(f"J^C(MFG) - J^C(MFC) = {poa.difference.value:.6g}  (95% CI {lo:.6g} .. {hi:.6g})")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg, path = load(args)
    rep = run_suite(cfg, n_paths=cfg.monte_carlo.paths, seed=cfg.monte_carlo.seed,
                    corrupt_slope=args.corrupt_slope)
    w = Writer(Path(args.out))
    w.table("oracle.csv", ["check", "statistic", "tolerance", "passed"],
            ([c.name, c.statistic, c.tolerance, int(c.passed)] for c in rep.checks
             if c.name != "riccati.runtime_seconds"))
    w.manifest(manifest_info(args, cfg, path, corrupt_slope=args.corrupt_slope))
    print(rep.text())
    return EXIT_OK if rep.passed else EXIT_CHECK_FAILED


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridmfg", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, mc=True):
        p.add_argument("scenario", help="scenario JSON file or the name of a shipped scenario")
        p.add_argument("--grid-steps", type=int, default=None)
        p.add_argument("--out", default="out", help="output directory")
        if mc:
            p.add_argument("--paths", type=int, default=None)
            p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("solve", help="dump Riccati solutions and transitions")
    common(p, mc=False)
    p.add_argument("--mode", choices=[m.value for m in GameMode], default="mfg")
    p.add_argument("--paper-literal-b", action="store_true")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="simulate one regime and report costs")
    common(p)
    p.add_argument("--mode", choices=[m.value for m in GameMode], default="mfg")
    p.add_argument("--baseline", action="store_true", help="add paired no-storage columns")
    p.add_argument("--paper-literal-b", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="baseline vs MFG vs MFC with price of anarchy")
    common(p)
    p.add_argument("--paper-literal-b", action="store_true")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("verify", help="run the oracle suite; nonzero exit on failure")
    common(p)
    p.add_argument("--corrupt-slope", action="store_true",
                   help="build every policy with the other mode's price slope (negative control)")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except (RiccatiError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
