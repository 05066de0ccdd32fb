"""Command-line front end: calibrate, solve, simulate, verify.

Every command reads one JSON config (see ``configs/example.json``), applies
flag overrides, writes its outputs atomically under ``--out`` and finishes with
a ``manifest.json`` holding the resolved config. Passing that manifest back as
``--config`` reruns the command with identical settings.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._io import atomic_writer, write_json
from .analytic import AnalyticSolution, supports
from .calibrate import (
    FitError,
    average_spread,
    calibrate_scenario,
    realized_volatility,
    to_solver_form,
)
from .hjb import (
    SolverError,
    SolverGrid,
    compare_policies,
    convergence_study,
    extract_policy_path,
    oracle_error,
    price_independence_check,
    solve,
)
from .hjb.grid import PolicyPath
from .impact import ImpactForm, ProblemSpec
from .lob import SnapshotParseError, read_snapshots, synthetic_series
from .presets import SCENARIO_NU_MAX, SCENARIOS, SIGMA, SPREAD, all_labels, parse_label, scenario_spec
from .simulate import (
    Naive,
    NumericPolicy,
    ParametricInventory,
    ReplayError,
    compare_strategies,
    inventory_sweep,
    replay,
    upsilon_sweep,
    write_ranking_csv,
    write_reports_json,
)

log = logging.getLogger("liquidation")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

DEFAULT_CONFIG = {
    "seed": 0,
    "data": {
        "snapshots": None,
        "synthetic": {
            "n": 360,
            "best_bid": 400.0,
            "tick": 0.1,
            "level_qty": 250.0,
            "depth": 100,
            "vol_ticks": 0.0,
            "trend_ticks": 2.0,
        },
    },
    "calibrate": {
        "scenarios": dict(SCENARIO_NU_MAX),
        "m": 50,
        "tau": 5.0,
        "depth_policy": "saturate",
        "level_qty": 170.0,
    },
    "grid": {"T": 1.0, "s_max": 300.0, "q_max": 1.0, "n_t": 360, "n_s": 10, "n_q": 100},
    "solve": {
        "coefficients": "presets",
        "strategies": None,
        "q0": 0.5,
        "sigma": SIGMA,
        "spread": SPREAD,
        "spec": None,
        "export_surfaces": False,
    },
    "simulate": {
        "upsilon": 4000.0,
        "tau": 5.0,
        "horizon": 1800.0,
        "naive_index": None,
        "on_insufficient": "carry",
        "paths_dir": None,
        "d2": [0.1, 0.5, 1.0, 5.0, 10.0],
        "d2_sweep": None,
        "upsilon_sweep": None,
    },
    "verify": {
        "refinements": 3,
        "q_base": {"n_t": 5760, "n_q": 25},
        "s_base": {"n_s": 4},
        "t_base": {"n_t": 20, "n_q": 6400},
        "price_independence": True,
    },
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key!r}")
        if isinstance(base[key], dict) and key not in ("scenarios",) and isinstance(value, dict):
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def load_config(path) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if isinstance(raw, dict) and "config" in raw and "command" in raw:
        raw = raw["config"]  # a manifest from an earlier run
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return _merge(DEFAULT_CONFIG, raw)


def parse_range(text: str) -> list[float]:
    """``LO:HI:STEP`` -> inclusive ladder."""
    try:
        lo, hi, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise ConfigError(f"expected LO:HI:STEP, got {text!r}") from None
    if not (step > 0 and hi >= lo):
        raise ConfigError(f"bad range {text!r}")
    n = int(np.floor((hi - lo) / step + 1e-9))
    return [round(lo + i * step, 12) for i in range(n + 1)]


def _grid(cfg: dict, **override) -> SolverGrid:
    return SolverGrid(**{**cfg["grid"], **override})


def _snapshots(cfg: dict, level_qty=None):
    data = cfg["data"]
    if data["snapshots"]:
        path = Path(data["snapshots"])
        if not path.is_file():
            raise ConfigError(f"snapshot file not found: {path}")
        return read_snapshots(path)
    syn = dict(data["synthetic"])
    if level_qty is not None:
        syn["level_qty"] = level_qty
    return synthetic_series(tau=cfg["simulate"]["tau"], seed=cfg["seed"], **syn)


def _selected_labels(cfg: dict) -> list[str]:
    labels = cfg["solve"]["strategies"] or all_labels()
    for lab in labels:
        parse_label(lab)
    return list(labels)


def _specs(cfg: dict) -> dict[str, ProblemSpec]:
    """Label -> solver-ready spec, from the presets or a calibration report."""
    sol = cfg["solve"]
    labels = _selected_labels(cfg)
    source = sol["coefficients"]
    if source == "presets":
        specs = {lab: scenario_spec(*parse_label(lab), upsilon=sol["q0"]) for lab in labels}
        return {
            lab: ProblemSpec(s.tpi, s.ppi, sol["sigma"], sol["spread"], s.horizon, s.upsilon, lab)
            for lab, s in specs.items()
        }
    path = Path(source)
    if not path.is_file():
        raise ConfigError(f"calibration report not found: {path}")
    report = json.loads(path.read_text())
    forms = {}
    for scen in report["scenarios"]:
        for fit in scen["fits"]:
            forms[(scen["scenario"], fit["impact"], fit["model"])] = ImpactForm(fit["model"], fit["params"])
    sigma = report.get("sigma") if report.get("sigma") is not None else sol["sigma"]
    spread = report.get("spread") if report.get("spread") is not None else sol["spread"]
    out = {}
    for lab in labels:
        scen, tk, pk = parse_label(lab)
        try:
            tpi, ppi = forms[(scen, "tpi", tk)], forms[(scen, "ppi", pk)]
        except KeyError:
            raise ConfigError(f"{path} has no {scen} fits needed for {lab}") from None
        out[lab] = ProblemSpec(to_solver_form(tpi), to_solver_form(ppi), sigma, spread, 1.0, sol["q0"], lab)
    return out


def _write_manifest(out: Path, command: str, cfg: dict, outputs: list, extra: dict | None = None):
    payload = {
        "command": command,
        "version": __version__,
        "config": cfg,
        "outputs": sorted(str(Path(p).relative_to(out)) for p in outputs),
    }
    if extra:
        payload["results"] = extra
    write_json(out / "manifest.json", payload)


def cmd_calibrate(cfg: dict, out: Path) -> dict:
    c = cfg["calibrate"]
    snaps = _snapshots(cfg, level_qty=None if cfg["data"]["snapshots"] else c["level_qty"])
    outputs, results, scen_reports = [], {}, []
    for scen, nu_max in c["scenarios"].items():
        log.info("calibrating %s (nu_max=%g)", scen, nu_max)
        cal = calibrate_scenario(snaps, scen, nu_max, c["tau"], c["m"], c["depth_policy"])
        scen_reports.append(cal.to_dict())
        curve_path = out / f"curve_{scen}.csv"
        with atomic_writer(curve_path) as fh:
            w = csv.writer(fh)
            w.writerow(["rate", "tpi", "ppi", "count", "skipped", "saturated"])
            for s in cal.curve.samples:
                w.writerow([repr(s.rate), repr(s.tpi), repr(s.ppi), s.count, s.skipped, s.saturated])
        outputs.append(curve_path)
        results[scen] = {
            f"{t}_{k}_exponent": f.exponent for (t, k), f in cal.fits.items() if k == "power"
        }
    mids = np.array([s.mid for s in snaps])
    report = {
        "sigma": realized_volatility(mids) if len(snaps) > 1 else None,
        "spread": average_spread(snaps),
        "scenarios": scen_reports,
    }
    write_json(out / "calibration.json", report)
    outputs.append(out / "calibration.json")
    fits_path = out / "fits.csv"
    with atomic_writer(fits_path) as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "impact", "model", "total", "mean", "std", "r_squared", "params", "solver_params"])
        for scen in scen_reports:
            for f in scen["fits"]:
                solver = to_solver_form(ImpactForm(f["model"], f["params"])).params
                w.writerow([
                    scen["scenario"], f["impact"], f["model"], repr(f["total_sq_resid"]),
                    repr(f["mean_sq_resid"]), repr(f["std_sq_resid"]), repr(f["r_squared"]),
                    " ".join(repr(p) for p in f["params"]), " ".join(repr(p) for p in solver),
                ])
    outputs.append(fits_path)
    results["sigma"], results["spread"] = report["sigma"], report["spread"]
    _write_manifest(out, "calibrate", cfg, outputs, results)
    return results


def _solve_paths(cfg: dict, out: Path | None, outputs: list) -> dict[str, PolicyPath]:
    grid = _grid(cfg)
    q0 = cfg["solve"]["q0"]
    paths = {}
    for lab, spec in _specs(cfg).items():
        t0 = time.perf_counter()
        value, policy = solve(spec, grid)
        path = extract_policy_path(policy, q0, lab)
        log.info("solved %s in %.1fs", lab, time.perf_counter() - t0)
        paths[lab] = path
        if out is not None:
            outputs.append(path.to_csv(out / "paths" / f"{lab}.csv"))
            if cfg["solve"]["export_surfaces"]:
                outputs.append(value.to_csv(out / "surfaces" / f"{lab}_value.csv"))
                outputs.append(policy.to_csv(out / "surfaces" / f"{lab}_policy.csv"))
    return paths


def cmd_solve(cfg: dict, out: Path) -> dict:
    outputs, results = [], {}
    explicit = cfg["solve"]["spec"]
    if explicit is not None:
        spec = ProblemSpec.from_dict(explicit)
        value, policy = solve(spec, _grid(cfg))
        label = spec.label or "custom"
        outputs.append(value.to_csv(out / "surfaces" / f"{label}_value.csv"))
        outputs.append(policy.to_csv(out / "surfaces" / f"{label}_policy.csv"))
        outputs.append(extract_policy_path(policy, cfg["solve"]["q0"], label).to_csv(out / "paths" / f"{label}.csv"))
        if supports(spec):
            oracle = AnalyticSolution(spec)
            results["oracle_max_error"] = oracle_error(value, oracle)
            results["chi_square"] = compare_policies(policy, oracle.policy).__dict__
            log.info("max error vs closed form: %.3e", results["oracle_max_error"])
    else:
        paths = _solve_paths(cfg, out, outputs)
        results["terminal_inventory"] = {lab: float(p.q[-1]) for lab, p in paths.items()}
    _write_manifest(out, "solve", cfg, outputs, results)
    return results


def _load_paths(directory: Path, labels) -> dict[str, PolicyPath]:
    paths = {}
    for lab in labels:
        f = directory / f"{lab}.csv"
        if not f.is_file():
            raise ConfigError(f"missing policy path {f}")
        paths[lab] = PolicyPath.from_csv(f, lab)
    return paths


def cmd_simulate(cfg: dict, out: Path) -> dict:
    sim = cfg["simulate"]
    snaps = _snapshots(cfg)
    if sim["paths_dir"]:
        paths = _load_paths(Path(sim["paths_dir"]), _selected_labels(cfg))
    else:
        paths = _solve_paths(cfg, None, [])
    strategies = [NumericPolicy(p, lab) for lab, p in paths.items()]
    kw = dict(tau=sim["tau"], horizon=sim["horizon"], on_insufficient=sim["on_insufficient"])
    naive = Naive(sim["naive_index"])
    base = replay(naive, snaps, upsilon=sim["upsilon"], **kw)
    reports = [replay(s, snaps, upsilon=sim["upsilon"], baseline=base, **kw) for s in strategies]
    param = [
        replay(ParametricInventory(d), snaps, upsilon=sim["upsilon"], baseline=base, **kw)
        for d in sim["d2"]
    ]
    outputs = [
        write_ranking_csv(out / "ranking.csv", compare_strategies(reports + [base], base)),
        write_ranking_csv(out / "parametric.csv", compare_strategies(param, base)),
        write_reports_json(out / "reports.json", [base] + reports + param),
    ]
    results = {"ratios": {r.label: r.ratio for r in reports}}
    if sim["d2_sweep"]:
        sweep = inventory_sweep(parse_range(sim["d2_sweep"]), snaps, sim["upsilon"], baseline=naive, **kw)
        path = out / "d2_sweep.csv"
        with atomic_writer(path) as fh:
            w = csv.writer(fh)
            w.writerow(["d2", "ratio_vs_NS"])
            for d, r in sweep:
                w.writerow([repr(d), repr(r)])
        outputs.append(path)
        results["d2_argmax"] = max(sweep, key=lambda x: x[1])[0]
    if sim["upsilon_sweep"]:
        us = upsilon_sweep(strategies, snaps, parse_range(sim["upsilon_sweep"]), baseline=naive, **kw)
        outputs.append(us.write_csv(out / "upsilon_sweep.csv"))
        results["best_by_upsilon"] = us.best
        results["worst_by_upsilon"] = us.worst
    _write_manifest(out, "simulate", cfg, outputs, results)
    return results


def cmd_verify(cfg: dict, out: Path) -> dict:
    v = cfg["verify"]
    spec = scenario_spec("under", "linear", "linear", drop_ppi_intercept=True)
    base = _grid(cfg)
    value, policy = solve(spec, base, keep_price_policies=True)
    oracle = AnalyticSolution(spec)
    chi = compare_policies(policy, oracle.policy)
    results = {
        "oracle_max_error": oracle_error(value, oracle),
        "chi_square": {**chi.__dict__, "significant": chi.significant},
        "orders": {},
    }
    for axis in ("q", "s", "t"):
        rows = convergence_study(spec, _grid(cfg, **v[f"{axis}_base"]), axis, v["refinements"])
        results["orders"][axis] = [r.__dict__ for r in rows]
        log.info("order in %s: %s", axis, ", ".join(f"{r.order:.2f}" for r in rows[1:]))
    if v["price_independence"]:
        dev = {}
        for lab, s in _specs(cfg).items():
            _, pol = solve(s, base, keep_price_policies=True)
            dev[lab] = {
                "max_deviation": price_independence_check(pol),
                "relative_to_cap": price_independence_check(pol, relative=True),
                "relative_to_cap_inner": price_independence_check(pol, exclude_edges=True, relative=True),
            }
            log.info("%s price dependence %.3e", lab, dev[lab]["max_deviation"])
        results["price_independence"] = dev
    write_json(out / "verify.json", results)
    _write_manifest(out, "verify", cfg, [out / "verify.json"], results)
    return results


COMMANDS = {
    "calibrate": cmd_calibrate,
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="liquidation", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path)
        s.add_argument("--out", type=Path, default=Path("out") / name)
        s.add_argument("--scenario", choices=SCENARIOS)
        s.add_argument("--strategy", action="append", metavar="LABEL")
        s.add_argument("--d2-sweep", metavar="LO:HI:STEP")
        s.add_argument("--upsilon-sweep", metavar="LO:HI:STEP")
        s.add_argument("--seed", type=int)
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def apply_flags(cfg: dict, args) -> dict:
    cfg = copy.deepcopy(cfg)
    if args.seed is not None:
        cfg["seed"] = args.seed
    labels = args.strategy or cfg["solve"]["strategies"] or all_labels()
    if args.scenario:
        letter = args.scenario[0].upper()
        labels = [lab for lab in labels if lab[0] == letter]
        cfg["calibrate"]["scenarios"] = {args.scenario: cfg["calibrate"]["scenarios"].get(
            args.scenario, SCENARIO_NU_MAX[args.scenario])}
    if args.strategy or args.scenario:
        cfg["solve"]["strategies"] = labels
    if args.d2_sweep:
        cfg["simulate"]["d2_sweep"] = args.d2_sweep
    if args.upsilon_sweep:
        cfg["simulate"]["upsilon_sweep"] = args.upsilon_sweep
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
    )
    try:
        cfg = apply_flags(load_config(args.config), args)
        for key in ("d2_sweep", "upsilon_sweep"):
            if cfg["simulate"][key]:
                parse_range(cfg["simulate"][key])
        _grid(cfg)
        args.out.mkdir(parents=True, exist_ok=True)
        results = COMMANDS[args.command](cfg, args.out)
    except (ConfigError, SnapshotParseError, FileNotFoundError, KeyError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, FitError, ReplayError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    json.dump(results, sys.stdout, indent=2, default=str)
    sys.stdout.write("\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
