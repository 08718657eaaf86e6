"""Batch front end: optimize designs, evaluate and compare them, generate networks.

Verbs:
  simulate-network  write a generated river network as JSON (bit-exact per seed)
  optimize          run the coordinate-exchange search, write design + traces
  estimate-utility  evaluate one design file under a scenario
  compare           paired evaluation of several designs across scenarios

All outputs are deterministic for a given config and seed: files carry
the root seed and the config hash, and rerunning reproduces them
byte-exact. Exit codes: 0 success, 1 runtime failure, 2 bad config/usage.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .ace import derive_seed, optimize
from .anomaly import metrics
from .config import ConfigError, load_config
from .design import Design
from .network import generate_network
from .utility import UtilityEvaluator, data_quality_report, estimate_utility

_OBJECTIVE_CHOICES = ("dual", "irmse-only", "specificity-only")


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _stamp(cfg) -> dict:
    return {"seed": cfg.seed, "config_sha256": cfg.config_hash, "name": cfg.name}


def _fmt(value) -> str:
    if value is None:
        return "-"
    return repr(float(value))


def cmd_simulate_network(args) -> int:
    net = generate_network(args.segments, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(net.to_json() + "\n")
    print(f"wrote {out} ({args.segments} segments, seed {args.seed})")
    return 0


def cmd_optimize(args) -> int:
    cfg = _load(args)
    space, model = cfg.build_space_and_model()
    scenario = args.scenario or cfg.default_scenario
    objective = args.objective or cfg.objective
    ucfg = cfg.utility_config(scenario_id=scenario, objective=objective)
    evaluator = UtilityEvaluator(space, model, ucfg)
    result = optimize(space, evaluator, n_sweeps=cfg.opt_sweeps, n_starts=cfg.opt_starts,
                      q_points=cfg.opt_grid_points, b_emulator=cfg.opt_b_emulator,
                      b_test=cfg.opt_b_test, rng_seed=cfg.seed)

    out_dir = Path(args.out or cfg.out_dir)
    stamp = _stamp(cfg)
    _write_json(out_dir / "design.json", {
        **stamp,
        "objective": objective,
        "scenario": scenario,
        "design": result.best_design.to_dict(),
        "utility": result.best_utility,
        "best_start": result.best_start,
    })

    trace_path = out_dir / "trace.csv"
    with trace_path.open("w", newline="") as fh:
        fh.write(f"# seed={cfg.seed} config_sha256={cfg.config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(["start", "sweep", "point", "axis", "current", "proposal",
                         "p_star", "accepted", "utility"])
        for st in result.starts:
            writer.writerow([st.start, 0, -1, -1, "", "", "", True, repr(st.initial_utility)])
            for s in st.steps:
                writer.writerow([s.start, s.sweep, s.point, s.axis, repr(s.current),
                                 repr(s.proposal), repr(s.p_star), s.accepted,
                                 repr(s.utility)])

    _write_json(out_dir / "manifest.json", {
        **stamp,
        "version": __version__,
        "objective": objective,
        "scenario": scenario,
        "optimizer": {"sweeps": cfg.opt_sweeps, "starts": cfg.opt_starts,
                      "grid_points": cfg.opt_grid_points,
                      "b_emulator": cfg.opt_b_emulator, "b_test": cfg.opt_b_test},
        "start_seeds": {str(s.start): derive_seed(cfg.seed, 0, s.start)
                        for s in result.starts},
        "final_utilities": {str(s.start): s.final_utility for s in result.starts},
        "decisions": {
            "emulator": "squared-exponential GP, MLE hyperparameters, 1000-point grid",
            "acceptance": "normal approximation to the difference of sample means",
        },
    })
    print(f"best start {result.best_start}: utility {result.best_utility:.6g} "
          f"-> {out_dir / 'design.json'}")
    return 0


def _load_design(path: str) -> tuple[str, Design]:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"design file not found: {p}")
    payload = json.loads(p.read_text())
    block = payload.get("design", payload)
    try:
        return p.stem, Design.from_dict(block)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"design file {p}: {exc}") from exc


def cmd_estimate_utility(args) -> int:
    cfg = _load(args)
    space, model = cfg.build_space_and_model()
    scenario = args.scenario or cfg.default_scenario
    objective = args.objective or cfg.objective
    ucfg = cfg.utility_config(scenario_id=scenario, objective=objective, b_draws=args.b)
    name, design = _load_design(args.design)
    if not space.contains(design):
        raise ConfigError(f"design {name} lies outside the configured design space")
    est = estimate_utility(design, space, model, ucfg, cfg.seed)
    payload = {**_stamp(cfg), "design": name, "scenario": scenario,
               "objective": objective, "estimate": est.to_dict(),
               "data_quality": data_quality_report(est.confusion_cells)}
    out_dir = Path(args.out or cfg.out_dir)
    _write_json(out_dir / "estimate.json", payload)
    print(json.dumps(payload["estimate"], indent=2, sort_keys=True))
    return 0


_TABLE_COLUMNS = [
    "scenario", "design", "u_irmse_cleaned", "u_irmse_cleaned_sd",
    "u_irmse_anom", "u_irmse_anom_sd", "specificity", "accuracy",
    "sensitivity", "mcc", "pct_anomalies_removed", "pct_good_retained",
    "utility",
]


def compare_rows(cfg, space, model, designs, scenario_ids, b_draws, objective):
    """Paired design comparison: within one scenario every design sees the
    same parameter, field and anomaly draws."""
    rows = []
    for sid in scenario_ids:
        ucfg = cfg.utility_config(scenario_id=sid, objective=objective, b_draws=b_draws)
        pair_seed = derive_seed(cfg.seed, 9, int(sid) if sid.isdigit() else 0)
        for name, design in designs:
            if not space.contains(design):
                raise ConfigError(f"design {name} lies outside the configured design space")
            est = estimate_utility(design, space, model, ucfg, pair_seed)
            m = metrics(est.confusion)
            dq = data_quality_report(est.confusion_cells)
            rows.append({
                "scenario": sid, "design": name,
                "u_irmse_cleaned": est.u_irmse, "u_irmse_cleaned_sd": est.sd_irmse,
                "u_irmse_anom": est.u_irmse_anom, "u_irmse_anom_sd": est.sd_irmse_anom,
                "specificity": None if "specificity" in m.degenerate else m.specificity,
                "accuracy": None if "accuracy" in m.degenerate else m.accuracy,
                "sensitivity": None if "sensitivity" in m.degenerate else m.sensitivity,
                "mcc": None if "mcc" in m.degenerate else m.mcc,
                "pct_anomalies_removed": dq["pct_anomalies_removed"],
                "pct_good_retained": dq["pct_good_retained"],
                "utility": est.value,
            })
    return rows


def cmd_compare(args) -> int:
    cfg = _load(args)
    space, model = cfg.build_space_and_model()
    designs = [_load_design(p) for p in args.design]
    if not designs:
        raise ConfigError("compare needs at least one --design")
    if args.scenario and args.scenario != "all":
        scenario_ids = [args.scenario]
    else:
        scenario_ids = sorted(cfg.scenarios)
    objective = args.objective or cfg.objective
    rows = compare_rows(cfg, space, model, designs, scenario_ids, args.b, objective)

    out_dir = Path(args.out or cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = out_dir / "table.csv"
    with table.open("w", newline="") as fh:
        fh.write(f"# seed={cfg.seed} config_sha256={cfg.config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(_TABLE_COLUMNS)
        for row in rows:
            writer.writerow([row["scenario"], row["design"]]
                            + [_fmt(row[c]) for c in _TABLE_COLUMNS[2:]])
    print(f"wrote {table} ({len(rows)} rows)")
    return 0


def _load(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        raw = dict(cfg.raw)
        raw["seed"] = args.seed
        from .config import parse_config

        cfg = parse_config(raw, base_dir=cfg.base_dir)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sentinet",
        description="Anomaly-aware Bayesian sensor-placement design")
    sub = parser.add_subparsers(dest="command", required=True)

    p_net = sub.add_parser("simulate-network", help="generate a river network JSON")
    p_net.add_argument("--segments", type=int, required=True)
    p_net.add_argument("--seed", type=int, required=True)
    p_net.add_argument("--out", required=True)
    p_net.set_defaults(func=cmd_simulate_network)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="scenario config JSON")
    common.add_argument("--seed", type=int, default=None, help="override config seed")
    common.add_argument("--out", default=None, help="override output directory")
    common.add_argument("--scenario", default=None, help="scenario id (compare: 'all')")
    common.add_argument("--objective", default=None, choices=_OBJECTIVE_CHOICES)

    p_opt = sub.add_parser("optimize", parents=[common],
                           help="search for an optimal design")
    p_opt.set_defaults(func=cmd_optimize)

    p_est = sub.add_parser("estimate-utility", parents=[common],
                           help="evaluate a single design")
    p_est.add_argument("--design", required=True)
    p_est.add_argument("--b", type=int, default=None, help="Monte Carlo draws")
    p_est.set_defaults(func=cmd_estimate_utility)

    p_cmp = sub.add_parser("compare", parents=[common],
                           help="paired comparison of designs across scenarios")
    p_cmp.add_argument("--design", action="append", default=[],
                       help="design JSON (repeatable)")
    p_cmp.add_argument("--b", type=int, default=None, help="Monte Carlo draws")
    p_cmp.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors already
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
