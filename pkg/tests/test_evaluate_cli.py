import csv
import json

import numpy as np
import pytest

from ilpbinom.boundary import BoundaryFn
from ilpbinom.cli import main
from ilpbinom.config import ConfigError, config_from_dict, load_config
from ilpbinom.core import Design, Outcome, Theta
from ilpbinom.evaluate import (
    MissingCacheError,
    TestContext,
    case_study,
    compare_tests,
    power_table,
    profile_type1,
    resolve_region,
    triangle_grid,
)
from ilpbinom.ilp import read_mps
from ilpbinom.knapsack import build_model, spec_for
from ilpbinom.space import enumerate_space
from oracles import joint_pmf_grid


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def run(tmp_path, *args):
    return main([*args, "--output-dir", str(tmp_path / "out"), "--cache-dir", str(tmp_path / "cache")])


def test_power_table_function():
    d = Design(10, 10)
    ctx = TestContext()
    regions = {d: {t: resolve_region(t, d, ctx) for t in ("FE", "ZP*")}}
    rows = power_table([(d, Theta(0.01, 0.51))], regions)
    assert rows[0]["power"] == {"FE": 60.30, "ZP*": 80.08}
    assert rows[0]["max"] == ["ZP*"] and rows[0]["min"] == ["FE"]
    empty = power_table([(d, Theta(0.2, 0.5))], {d: {}})
    assert empty[0]["power"] == {} and empty[0]["max"] == []


def test_profile_matches_direct_sum():
    d = Design(6, 5)
    ctx = TestContext()
    dec = resolve_region("FE", d, ctx)
    t, prof = profile_type1(d, {"FE": dec}, BoundaryFn.identity(), 0.1)
    assert t.size == 11
    for k, th in enumerate(t):
        ref = joint_pmf_grid(6, 5, th, th).reshape(-1)[dec].sum()
        assert prof["FE"][k] == pytest.approx(ref, abs=1e-14)


def test_compare_self_and_average_diff():
    d = Design(10, 10)
    ctx = TestContext()
    regions = {t: resolve_region(t, d, ctx) for t in ("FE", "APK")}
    cells = compare_tests(d, regions)
    assert cells[("FE", "FE")].relation == "equal"
    assert cells[("FE", "FE")].label() == "= (+0.00)"
    c = cells[("FE", "APK")]
    assert c.relation == "uniformly_le"
    # the average power difference agrees with a brute triangle average
    tc, td = triangle_grid(0.001)
    sp = enumerate_space(d)
    diff = regions["FE"].astype(float) - regions["APK"].astype(float)
    from scipy.stats import binom

    pc = binom.pmf(np.arange(11)[None, :], 10, tc[:, None])
    pd = binom.pmf(np.arange(11)[None, :], 10, td[:, None])
    g = diff.reshape(11, 11)
    brute = np.mean(np.einsum("ki,ij,kj->k", pc, g, pd))
    assert c.avg_power_diff == pytest.approx(brute, abs=2e-3)
    assert cells[("APK", "FE")].avg_power_diff == pytest.approx(-c.avg_power_diff)


def test_missing_cache_and_pending(tmp_path):
    ctx = TestContext(max_inline_size=10)
    with pytest.raises(MissingCacheError):
        resolve_region("APK", Design(5, 5), ctx)
    rows = case_study(Design(5, 5), Outcome(1, 4), TestContext(), tests=("FE", "APK"))
    assert rows[1]["p_value"] is None and "pending" in rows[1]["note"]
    assert rows[0]["p_value"] > 0
    with pytest.raises(ValueError):
        case_study(Design(5, 5), Outcome(1, 4), TestContext(), tests=("nope",))


def test_config_parsing(tmp_path):
    cfg = config_from_dict({"designs": [[3, 4]], "boundary": {"kind": "margin", "delta": 0.1}, "levels": "reduced"})
    assert cfg.designs == [Design(3, 4)] and cfg.delta == 0.1
    assert len(cfg.level_set()) == 20
    assert cfg.with_overrides(alpha=0.05, tests=None).alpha == 0.05
    for bad in (
        {"alpha": 1.5},
        {"unknown": 1},
        {"boundary": {"kind": "margin"}},
        {"designs": [[0, 3]]},
        {"observed": [9, 9], "designs": [[3, 3]]},
    ):
        with pytest.raises(ConfigError):
            config_from_dict(bad)
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_cli_exit_codes(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"alpha": -1}))
    assert run(tmp_path, "construct", "--config", str(bad)) == 2
    assert run(tmp_path, "power-table", "--design", "4,4") == 2
    assert run(tmp_path, "case-study", "--design", "4,4") == 2
    assert run(tmp_path, "export-mps", "--design", "4,4", "--test", "FE") == 2
    assert run(tmp_path, "pvalue", "--design", "4,4", "--test", "nope") == 2
    code = run(tmp_path, "construct", "--design", "25,25", "--tests", "APK", "--no-cache", "--time-limit", "0.05")
    assert code == 3


def test_cli_outputs_byte_stable(tmp_path):
    args = ["--design", "5,5", "--tests", "FE,APK"]
    first = {}
    for rep in range(2):
        base = tmp_path / f"r{rep}"
        for cmd in (["construct"], ["profile", "--figure", "svg"], ["compare"], ["power-table", "--theta", "0.2,0.6"]):
            assert main([*cmd, *args, "--output-dir", str(base), "--cache-dir", str(tmp_path / f"c{rep}")]) == 0
        files = {p.name: p.read_bytes() for p in base.iterdir()}
        if rep == 0:
            first = files
        else:
            assert files == first
    rows = read_rows(tmp_path / "r0" / "power_table.csv")
    assert rows[0] == ["n_C", "n_D", "theta_C", "theta_D", "FE", "APK", "row_max", "row_min"]
    assert len(rows) == 2


def test_cli_empty_roster(tmp_path):
    assert run(tmp_path, "power-table", "--design", "4,4", "--tests", "", "--theta", "0.1,0.5") == 0
    rows = read_rows(tmp_path / "out" / "power_table.csv")
    assert rows[0] == ["n_C", "n_D", "theta_C", "theta_D", "row_max", "row_min"]


def test_cli_pvalue_and_case_study(tmp_path):
    assert run(tmp_path, "pvalue", "--design", "4,4", "--test", "APK", "--levels", "0.025,0.05,1.0", "--observed", "0,4") == 0
    rows = read_rows(tmp_path / "out" / "pvalues_APK_4x4.csv")
    assert rows[0] == ["s_C", "s_D", "p_value"] and len(rows) == 26
    p = {(int(a), int(b)): float(c) for a, b, c in rows[1:]}
    assert p[(0, 4)] <= 0.025 and p[(4, 0)] == 1.0
    assert run(tmp_path, "case-study", "--design", "4,4", "--observed", "0,4", "--tests", "FE,APK",
               "--levels", "0.025,0.05,1.0") == 0
    rows = read_rows(tmp_path / "out" / "case_study.csv")
    assert rows[2][0] == "APK" and float(rows[2][1]) == pytest.approx(p[(0, 4)], abs=5e-5)


def test_cli_export_mps(tmp_path):
    assert run(tmp_path, "export-mps", "--design", "4,4", "--test", "APK") == 0
    path = tmp_path / "out" / "APK_4x4.mps"
    model = read_mps(path)
    ref = build_model(spec_for("APK", Design(4, 4)))
    assert model.n_binary == ref.n_binary
    assert np.allclose(model.objective, ref.objective, rtol=0, atol=1e-15)
