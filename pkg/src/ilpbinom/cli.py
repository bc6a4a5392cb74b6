"""Command-line driver.

Exit codes: 0 success, 2 configuration error, 3 solver resource limit.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from .classical import TESTS, named_test_pvalues
from .config import ConfigError, RunConfig, load_config
from .core import Design, Outcome, Theta
from .evaluate import (
    KNAPSACK_TESTS,
    MissingCacheError,
    SolverLimitError,
    case_study,
    compare_tests,
    power_table,
    profile_type1,
    resolve_region,
)
from .boundary import BoundaryFn
from .ilp import export_mps
from .knapsack import build_model, construct, ladder_pvalues, pvalue_ladder
from .space import enumerate_space, write_decision_csv

log = logging.getLogger("ilpbinom")

EXIT_OK, EXIT_CONFIG, EXIT_LIMIT = 0, 2, 3


def _pair(text, kind):
    try:
        a, b = (kind(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two comma-separated values, got {text!r}") from None
    return a, b


def _common(p):
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--design", action="append", type=lambda s: _pair(s, int), help="n_C,n_D (repeatable)")
    p.add_argument("--alpha", type=float)
    p.add_argument("--delta", type=float, help="non-inferiority margin; 0 for the identity boundary")
    p.add_argument("--tests", help="comma-separated test roster")
    p.add_argument("--observed", type=lambda s: _pair(s, int), help="s_C,s_D")
    p.add_argument("--output-dir")
    p.add_argument("--cache-dir")
    p.add_argument("--no-cache", action="store_true")
    p.add_argument("--abs-tol", type=float)
    p.add_argument("--time-limit", type=float)
    p.add_argument("--node-limit", type=int)
    p.add_argument("--levels", help="'default', 'reduced' or comma-separated levels")
    p.add_argument("--figure", choices=["svg", "png", "pdf"], help="also write a figure in this format")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ilpbinom", description="Exact one-sided tests for two binomial proportions.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, text in [
        ("construct", "solve knapsack regions and write them as CSV"),
        ("pvalue", "p-values of one test, for one outcome or the whole sample space"),
        ("profile", "type I error rates along the null boundary"),
        ("power-table", "power at chosen parameter points"),
        ("compare", "pairwise power comparison on the alternative triangle"),
        ("case-study", "p-values of the test roster at one observed outcome"),
        ("export-mps", "write the 0-1 program of a knapsack test in MPS format"),
    ]:
        p = sub.add_parser(name, help=text)
        _common(p)
        if name in ("pvalue", "export-mps"):
            p.add_argument("--test", required=True)
        if name == "case-study":
            p.add_argument("--solve-missing", action="store_true", help="solve uncached knapsack ladders")
        if name == "power-table":
            p.add_argument("--theta", action="append", type=lambda s: _pair(s, float), help="theta_C,theta_D")
    return ap


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    levels = None
    if args.levels:
        levels = args.levels if args.levels in ("default", "reduced") else [float(v) for v in args.levels.split(",")]
    delta = args.delta
    over = dict(
        designs=[Design(*d) for d in args.design] if args.design else None,
        alpha=args.alpha,
        tests=[t.strip() for t in args.tests.split(",") if t.strip()] if args.tests is not None else None,
        observed=Outcome(*args.observed) if args.observed else None,
        output_dir=args.output_dir,
        cache_dir=args.cache_dir,
        abs_tol=args.abs_tol,
        time_limit=args.time_limit,
        node_limit=args.node_limit,
        levels=levels,
        figure_format=args.figure,
    )
    if delta is not None:
        if not 0.0 <= delta < 1.0:
            raise ConfigError(f"delta must lie in [0, 1), got {delta}")
        over["delta"] = delta
        over["boundary_kind"] = "margin" if delta > 0 else "identity"
    if getattr(args, "theta", None):
        over["theta_points"] = [Theta(*t) for t in args.theta]
    cfg = cfg.with_overrides(**over)
    if args.no_cache:
        cfg.cache_dir = None
    for t in cfg.tests:
        if t not in TESTS and t.upper() not in KNAPSACK_TESTS:
            raise ConfigError(f"unknown test {t!r}")
    return cfg


def _boundary(cfg: RunConfig) -> BoundaryFn:
    return BoundaryFn.margin(cfg.delta) if cfg.delta > 0 else BoundaryFn.identity()


def _tag(design: Design) -> str:
    return f"{design.n_c}x{design.n_d}"


def _safe(name: str) -> str:
    return name.replace("*", "star")


def _out(cfg) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _writer(path):
    fh = open(path, "w", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def _fmt(v: float, digits: int = 10) -> str:
    return f"{v:.{digits}f}"


def _regions(cfg, design):
    ctx = cfg.context()
    return {t: resolve_region(t, design, ctx) for t in cfg.tests}


def cmd_construct(cfg: RunConfig) -> int:
    out = _out(cfg)
    ctx = cfg.context()
    limited = False
    fh, w = _writer(out / "construct.csv")
    with fh:
        w.writerow(["n_C", "n_D", "test", "objective_value", "best_bound", "abs_gap", "status"])
        for design in cfg.designs:
            space = enumerate_space(design)
            for t in cfg.tests:
                if t.upper() in KNAPSACK_TESTS:
                    spec = ctx.knapsack_spec(t, design)
                    kw = dict(time_limit=cfg.time_limit, node_limit=cfg.node_limit)
                    res = ctx.cache.region(spec, cfg.abs_tol, **kw) if ctx.cache else construct(spec, cfg.abs_tol, **kw)
                    row = [res.objective_value, res.best_bound, res.abs_gap]
                    status = res.status
                    d = res.decision
                else:
                    d = resolve_region(t, design, ctx)
                    row, status = [float("nan")] * 3, "closed_form"
                limited |= status in ("time_limit", "node_limit")
                w.writerow([design.n_c, design.n_d, t, *(_fmt(v) for v in row), status])
                path = out / f"region_{_safe(t)}_{_tag(design)}.csv"
                write_decision_csv(space, d, path)
                if cfg.figure_format:
                    from .plotting import region_figure

                    region_figure(space.grid(d), path.with_suffix("." + cfg.figure_format), f"{t} {_tag(design)}")
                print(f"{t} {_tag(design)}: {status} -> {path}")
    return EXIT_LIMIT if limited else EXIT_OK


def cmd_pvalue(cfg: RunConfig, test: str) -> int:
    out = _out(cfg)
    ctx = cfg.context()
    limited = False
    for design in cfg.designs:
        space = enumerate_space(design)
        if test.upper() in KNAPSACK_TESTS:
            spec = ctx.knapsack_spec(test, design)
            levels = cfg.level_set()
            kw = dict(time_limit=cfg.time_limit, node_limit=cfg.node_limit)
            if ctx.cache:
                lad = ctx.cache.ladder(spec, levels, cfg.abs_tol, **kw)
            else:
                lad = pvalue_ladder(spec, levels, cfg.abs_tol, **kw)
            p = ladder_pvalues(lad)
            limited |= not lad.ok
        elif test in TESTS:
            p = named_test_pvalues(test, design, delta=cfg.delta, gamma=cfg.gamma)
        else:
            raise ConfigError(f"unknown test {test!r}")
        path = out / f"pvalues_{_safe(test)}_{_tag(design)}.csv"
        fh, w = _writer(path)
        with fh:
            w.writerow(["s_C", "s_D", "p_value"])
            for i in range(space.size):
                w.writerow([int(space.s_c[i]), int(space.s_d[i]), _fmt(float(p[i]))])
        if cfg.observed is not None:
            i = space.index(cfg.observed)
            print(f"{test} {_tag(design)} observed ({cfg.observed.s_c},{cfg.observed.s_d}): p = {p[i]:.4f}")
        print(f"wrote {path}")
    return EXIT_LIMIT if limited else EXIT_OK


def cmd_profile(cfg: RunConfig) -> int:
    out = _out(cfg)
    for design in cfg.designs:
        regions = _regions(cfg, design)
        t, prof = profile_type1(design, regions, _boundary(cfg), cfg.profile_step)
        path = out / f"profile_{_tag(design)}.csv"
        fh, w = _writer(path)
        with fh:
            w.writerow(["theta_C", *regions])
            for k in range(t.size):
                w.writerow([_fmt(t[k], 4), *(_fmt(prof[n][k], 12) for n in regions)])
        if cfg.figure_format:
            from .plotting import profile_figure

            profile_figure(t, prof, cfg.alpha, path.with_suffix("." + cfg.figure_format), _tag(design))
        print(f"wrote {path}")
    return EXIT_OK


def cmd_power_table(cfg: RunConfig) -> int:
    if not cfg.theta_points:
        raise ConfigError("power-table needs theta_points (config) or --theta")
    out = _out(cfg)
    regions = {d: _regions(cfg, d) for d in cfg.designs}
    cells = [(d, th) for d in cfg.designs for th in cfg.theta_points]
    rows = power_table(cells, regions)
    path = out / "power_table.csv"
    fh, w = _writer(path)
    with fh:
        w.writerow(["n_C", "n_D", "theta_C", "theta_D", *cfg.tests, "row_max", "row_min"])
        for r in rows:
            d, th = r["design"], r["theta"]
            vals = [f"{r['power'][t]:.2f}" for t in cfg.tests]
            w.writerow([d.n_c, d.n_d, th.theta_c, th.theta_d, *vals, ";".join(r["max"]), ";".join(r["min"])])
    print(f"wrote {path}")
    return EXIT_OK


def cmd_compare(cfg: RunConfig) -> int:
    out = _out(cfg)
    for design in cfg.designs:
        regions = _regions(cfg, design)
        cells = compare_tests(design, regions, cfg.compare_step)
        path = out / f"compare_{_tag(design)}.csv"
        fh, w = _writer(path)
        with fh:
            w.writerow(["row", "column", "relation", "fraction", "avg_power_diff"])
            for (a, b), c in cells.items():
                frac = "" if c.fraction is None else f"{c.fraction:.4f}"
                w.writerow([a, b, c.relation, frac, f"{c.avg_power_diff:.6f}"])
        print(f"wrote {path}")
        names = list(regions)
        width = max(len(n) for n in names) + 2
        print(" " * width + "".join(f"{n:>16}" for n in names))
        for a in names:
            print(f"{a:<{width}}" + "".join(f"{cells[(a, b)].label():>16}" for b in names))
    return EXIT_OK


def cmd_case_study(cfg: RunConfig, solve_missing: bool) -> int:
    if cfg.observed is None:
        raise ConfigError("case-study needs an observed outcome")
    out = _out(cfg)
    ctx = cfg.context()
    design = cfg.designs[0]
    rows = case_study(design, cfg.observed, ctx, cfg.tests, cfg.level_set(), solve_missing)
    path = out / "case_study.csv"
    fh, w = _writer(path)
    with fh:
        w.writerow(["test", "p_value", "note"])
        for r in rows:
            p = "" if r["p_value"] is None else f"{r['p_value']:.4f}"
            w.writerow([r["test"], p, r["note"]])
            print(f"{r['test']:<6} {p or '-':>8}  {r['note']}")
    print(f"wrote {path}")
    limited = any("solver limit" in r["note"] for r in rows)
    return EXIT_LIMIT if limited else EXIT_OK


def cmd_export_mps(cfg: RunConfig, test: str) -> int:
    if test.upper() not in KNAPSACK_TESTS:
        raise ConfigError(f"export-mps needs a knapsack test, got {test!r}")
    out = _out(cfg)
    ctx = cfg.context()
    for design in cfg.designs:
        model = build_model(ctx.knapsack_spec(test, design))
        path = out / f"{_safe(test)}_{_tag(design)}.mps"
        export_mps(model, path)
        print(f"wrote {path}")
    return EXIT_OK


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
        if args.command == "construct":
            return cmd_construct(cfg)
        if args.command == "pvalue":
            return cmd_pvalue(cfg, args.test)
        if args.command == "profile":
            return cmd_profile(cfg)
        if args.command == "power-table":
            return cmd_power_table(cfg)
        if args.command == "compare":
            return cmd_compare(cfg)
        if args.command == "case-study":
            return cmd_case_study(cfg, args.solve_missing)
        if args.command == "export-mps":
            return cmd_export_mps(cfg, args.test)
    except (ConfigError, MissingCacheError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverLimitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_LIMIT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
