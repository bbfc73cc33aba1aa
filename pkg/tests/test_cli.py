import csv
import hashlib
import json

from gridmfg.cli import main

from conftest import shipped_tree


def read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_solve_one_region(tmp_path):
    assert main(["solve", "one_region", "--out", str(tmp_path)]) == 0
    for name in ("phi.csv", "phibar.csv"):
        rows = read(tmp_path / name)
        assert rows[0][0] == "t"
        assert len(rows) - 1 == 257
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["files"]["phi.csv"] == digest(tmp_path / "phi.csv")
    assert man["mode"] == "mfg"


def test_solve_two_regions_has_square_columns(tmp_path):
    assert main(["solve", "two_zones", "--mode", "mfc", "--grid-steps", "32", "--out", str(tmp_path)]) == 0
    rows = read(tmp_path / "phibar.csv")
    assert len(rows[0]) == 1 + 4 and len(rows) == 34
    assert float(rows[-1][1]) == 0.0


def test_invalid_scenario(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    tree = shipped_tree("two_zones")
    tree["pricing"]["p1"] = 0.0
    tree["regions"][0]["weight"] = 0.6
    bad.write_text(json.dumps(tree))
    assert main(["solve", str(bad), "--out", str(tmp_path / "o")]) != 0
    err = capsys.readouterr().err
    assert "p1 > 0" in err and "sum(pi) = 1" in err


def test_unknown_scenario(tmp_path):
    assert main(["simulate", "no_such_scenario", "--out", str(tmp_path)]) == 2


def test_simulate_schema(tmp_path):
    out = tmp_path / "run"
    assert main(["simulate", "one_region", "--paths", "6", "--out", str(out)]) == 0
    assert read(out / "price.csv")[0] == ["path", "t", "price"]
    assert read(out / "storage.csv")[0] == ["path", "t", "region", "S", "alpha"]
    costs = read(out / "costs.csv")
    assert costs[0] == ["region", "component", "mean", "stderr"]
    comps = {r[1] for r in costs[1:] if r[0] == "prosumers"}
    assert {"volumetric", "demand", "storage", "terminal"} <= comps
    assert len(read(out / "price.csv")) == 1 + 6 * 257
    value = read(out / "price.csv")[5][2]
    assert float(value) == float(format(float(value), ".17g"))


def test_simulate_baseline_columns(tmp_path):
    assert main(["simulate", "one_region", "--paths", "4", "--baseline", "--out", str(tmp_path)]) == 0
    assert read(tmp_path / "price.csv")[0][-1] == "baseline_price"
    assert read(tmp_path / "costs.csv")[0][-2:] == ["baseline_mean", "baseline_stderr"]


def test_simulate_is_reproducible(tmp_path):
    args = ["simulate", "two_zones", "--mode", "mfc", "--paths", "8", "--seed", "3", "--grid-steps", "64"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("price.csv", "storage.csv", "costs.csv"):
        assert digest(tmp_path / "a" / name) == digest(tmp_path / "b" / name)
    assert main(args[:-1] + ["4", "--out", str(tmp_path / "c")]) == 0
    assert digest(tmp_path / "a" / "price.csv") != digest(tmp_path / "c" / "price.csv")


def test_compare_one_region(tmp_path, capsys):
    assert main(["compare", "one_region", "--paths", "100", "--out", str(tmp_path)]) == 0
    poa = {r[0]: r[1:] for r in read(tmp_path / "poa.csv")[1:]}
    lo, hi = float(poa["difference"][1]), float(poa["difference"][2])
    assert lo <= float(poa["difference"][0]) <= hi
    assert hi >= 0
    assert read(tmp_path / "mean_price.csv")[0] == ["t", "baseline", "mfg", "mfc"]
    assert "J^C(MFG) - J^C(MFC)" in capsys.readouterr().out


def test_compare_zero_regimes_identical(tmp_path):
    assert main(["compare", "zero", "--paths", "5", "--out", str(tmp_path)]) == 0
    for row in read(tmp_path / "mean_price.csv")[1:]:
        assert row[1] == row[2] == row[3]
    costs = read(tmp_path / "costs.csv")[1:]
    by_regime = {}
    for regime, region, comp, mean, _ in costs:
        by_regime.setdefault((region, comp), set()).add(mean)
    assert all(len(v) == 1 for v in by_regime.values())


def test_verify_zero_passes(tmp_path, capsys):
    assert main(["verify", "zero", "--paths", "10", "--grid-steps", "32", "--out", str(tmp_path)]) == 0
    rows = read(tmp_path / "oracle.csv")
    assert rows[0] == ["check", "statistic", "tolerance", "passed"]
    assert all(r[3] == "1" for r in rows[1:])
    assert "FAIL" not in capsys.readouterr().out


def test_verify_corrupted_slope_fails(tmp_path, capsys):
    code = main(["verify", "one_region", "--corrupt-slope", "--paths", "20", "--out", str(tmp_path)])
    assert code == 1
    out = capsys.readouterr().out
    assert "FAIL  coupling.mfg" in out and "FAIL  gateaux.mfc.slope" in out
