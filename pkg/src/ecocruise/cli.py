"""Command-line orchestration of the whole workbench.

Verbs: gen-scenarios, gen-data, train, gradcheck, simulate, evaluate,
report. Exit codes: 0 success, 2 config error, 3 data error, 4 numerical
failure. All stages derive their randomness from the single --seed.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .errors import (ConfigError, DataError, EcoCruiseError, NumericalError)
from .evaluation import RunRecord, evaluate_runs, record_from_trace
from .grid import (FeatureStats, GridConfig, read_trip_csv, resample_route,
                   write_route_csv, write_trip_csv)
from .nvformer import NvFormerModel, TOY_CONFIG
from .report import report as emit_report
from .simulator import (BsfcMap, Scenario, generate_scenarios, read_trace_csv,
                        run_cruise, run_npc, synth_trips, write_trace_csv)
from .training import (build_examples, corpus_stats, grad_check,
                       make_synthetic_examples, train)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _load_bsfc(cfg: RunConfig) -> BsfcMap:
    if cfg.bsfc_csv:
        return BsfcMap.from_csv(cfg.bsfc_csv)
    return BsfcMap()


def _check_model_wiring(cfg: RunConfig) -> None:
    """The network shapes must agree with the sampler/horizon geometry."""
    problems = []
    if cfg.model.l_h != cfg.sampler.l_h:
        problems.append("model.l_h != sampler.l_h")
    if cfg.model.l_f != cfg.future.l_f:
        problems.append("model.l_f != future.l_f")
    if cfg.model.p != cfg.sampler.p:
        problems.append("model.p != sampler.p")
    if (cfg.model.m, cfg.model.m_f) != (cfg.grid.m, cfg.grid.m_f):
        problems.append("model feature split != grid feature split")
    if problems:
        raise ConfigError("inconsistent config: " + "; ".join(problems))
    cfg.sampler.validate(cfg.grid)


def _horizon_m(cfg: RunConfig) -> float:
    return cfg.future.l_f * cfg.grid.delta_s


def _make_scenarios(cfg: RunConfig) -> list[Scenario]:
    return generate_scenarios(cfg.scenarios.n, cfg.scenario_seed, cfg.grid,
                              cfg.scenarios.drive_length, _horizon_m(cfg))


def _scenario_file(i: int, label: str) -> str:
    return f"scenario_{i:02d}_{label}.csv"


def cmd_gen_scenarios(cfg: RunConfig, out: Path) -> int:
    sdir = out / "scenarios"
    sdir.mkdir(parents=True, exist_ok=True)
    scenarios = _make_scenarios(cfg)
    entries = []
    for i, sc in enumerate(scenarios):
        name = _scenario_file(i, sc.label)
        write_route_csv(sdir / name, sc.profile.s, sc.profile.z)
        entries.append({"index": i, "label": sc.label, "file": name,
                        "sha256": _sha256(sdir / name)})
    combined = hashlib.sha256(
        "".join(e["sha256"] for e in entries).encode()).hexdigest()
    _write_json(sdir / "manifest.json",
                {"seed": cfg.scenario_seed, "hash": combined,
                 "files": entries})
    print(f"wrote {len(entries)} scenarios to {sdir} (hash {combined[:12]})")
    return EXIT_OK


def _load_scenarios(cfg: RunConfig, out: Path) -> list[Scenario]:
    """Scenarios are regenerated from the seed; the CSVs are for inspection."""
    return _make_scenarios(cfg)


def cmd_gen_data(cfg: RunConfig, out: Path) -> int:
    tdir = out / "trips"
    tdir.mkdir(parents=True, exist_ok=True)
    scenarios = _load_scenarios(cfg, out)
    bsfc = _load_bsfc(cfg)
    trips = synth_trips(scenarios, cfg.driver, cfg.data_seed, cfg.vehicle,
                        bsfc, cfg.grid, cfg.sim.dt)
    entries = []
    total_km = 0.0
    for i, trip in enumerate(trips):
        name = f"trip_{i:02d}.csv"
        write_trip_csv(tdir / name, trip)
        total_km += (trip.end_s - trip.start_s) / 1000.0
        entries.append({"index": i, "file": name,
                        "sha256": _sha256(tdir / name)})
    combined = hashlib.sha256(
        "".join(e["sha256"] for e in entries).encode()).hexdigest()
    _write_json(tdir / "manifest.json",
                {"seed": cfg.data_seed, "hash": combined,
                 "total_km": total_km, "files": entries})
    print(f"wrote {len(entries)} trips ({total_km:.1f} km) to {tdir} "
          f"(hash {combined[:12]})")
    return EXIT_OK


def cmd_train(cfg: RunConfig, out: Path) -> int:
    _check_model_wiring(cfg)
    tdir = out / "trips"
    manifest_path = tdir / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"no trip corpus at {tdir}; run gen-data first")
    manifest = json.loads(manifest_path.read_text())
    trips = [read_trip_csv(tdir / e["file"], cfg.grid)
             for e in manifest["files"]]
    examples, stats = build_examples(trips, cfg.grid, cfg.sampler,
                                     cfg.future.l_f)
    print(f"built {len(examples)} examples from {len(trips)} trips")
    model = NvFormerModel(cfg.model, stats, seed=cfg.model_seed)
    result = train(model, examples, replace(cfg.train, seed=cfg.train_seed),
                   log=print)
    model.save(out / "model.nvf")
    _write_json(out / "training_log.json", {
        "train_loss": result.train_loss, "val_loss": result.val_loss,
        "lr": result.lr, "best_epoch": result.best_epoch,
        "best_val": result.best_val, "steps": result.steps,
        "n_examples": len(examples),
    })
    print(f"best val loss {result.best_val:.3e} at epoch {result.best_epoch}; "
          f"saved {out / 'model.nvf'}")
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig, out: Path) -> int:
    stats = FeatureStats(np.zeros(6), np.ones(6))
    model = NvFormerModel(TOY_CONFIG, stats, seed=cfg.model_seed)
    example = make_synthetic_examples(TOY_CONFIG, 1, seed=cfg.seed)[0]
    err = grad_check(model, example, n_coords=200, seed=cfg.seed)
    ok = err < 1e-3
    print(f"gradcheck max relative error {err:.3e} "
          f"({'PASS' if ok else 'FAIL'} at 1e-3)")
    return EXIT_OK if ok else EXIT_NUMERIC


def _merge_trace_manifest(tdir: Path, new_runs: list[dict]) -> None:
    path = tdir / "manifest.json"
    runs = []
    if path.exists():
        runs = json.loads(path.read_text())["runs"]
    keyed = {(r["method"], r["scenario"], r["v_target"]): r for r in runs}
    for r in new_runs:
        keyed[(r["method"], r["scenario"], r["v_target"])] = r
    merged = [keyed[k] for k in sorted(keyed)]
    _write_json(path, {"runs": merged})


def cmd_simulate(cfg: RunConfig, out: Path, method: str, targets: list[float],
                 scenario_index: int | None) -> int:
    scenarios = _load_scenarios(cfg, out)
    if scenario_index is not None:
        if not 0 <= scenario_index < len(scenarios):
            raise ConfigError(f"scenario index {scenario_index} out of range")
        scenarios = [scenarios[scenario_index]]
    bsfc = _load_bsfc(cfg)
    model = None
    if method in ("npc", "npc-noformer"):
        _check_model_wiring(cfg)
        model_path = out / "model.nvf"
        if not model_path.exists():
            raise DataError(f"no model at {model_path}; run train first")
        model = NvFormerModel.load(model_path)
        if method == "npc-noformer":
            model = model.with_sample_former(False)

    tdir = out / "traces"
    tdir.mkdir(parents=True, exist_ok=True)
    new_runs = []
    for sc in scenarios:
        for target in targets:
            run_cfg = cfg.with_target(target)
            if method == "cruise":
                trace = run_cruise(sc, target, cfg.vehicle, bsfc, cfg.grid,
                                   cfg.sim.dt, cfg.scenarios.drive_length)
            else:
                trace = run_npc(sc, model, cfg.grid, run_cfg.sampler,
                                run_cfg.future, run_cfg.weights, cfg.vehicle,
                                bsfc, cfg.sim.dt, cfg.scenarios.drive_length)
            name = f"trace_{method}_{sc.label}_{target:g}.csv"
            write_trace_csv(tdir / name, trace)
            new_runs.append({"method": method, "scenario": sc.label,
                             "v_target": target, "file": name})
            print(f"{method} {sc.label} @ {target:g} m/s: "
                  f"{trace.fuel_per_100km:.3f} L/100km, "
                  f"mean v {trace.mean_speed:.3f}")
    _merge_trace_manifest(tdir, new_runs)
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig, out: Path) -> int:
    tdir = out / "traces"
    manifest_path = tdir / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"no traces at {tdir}; run simulate first")
    manifest = json.loads(manifest_path.read_text())
    records = []
    for r in manifest["runs"]:
        trace = read_trace_csv(tdir / r["file"], cfg.grid)
        records.append(record_from_trace(r["method"], r["scenario"],
                                         r["v_target"], trace, r["file"]))
    results = evaluate_runs(records, cfg.sim.eval_speed)
    edir = out / "eval"
    edir.mkdir(parents=True, exist_ok=True)
    _write_json(edir / "results.json", results)
    for row in results["per_method"]:
        saving = row.get("fuel_saving_pct")
        extra = "" if saving is None else f", saving {saving:.2f}%"
        print(f"{row['method']}: {row['fuel_per_100km']:.2f} L/100km, "
              f"dv {row['speed_diff']:.2f} m/s, cost {row['cost']:.2f}{extra}")
    print(f"wrote {edir / 'results.json'}")
    return EXIT_OK


def cmd_report(cfg: RunConfig, out: Path) -> int:
    results_path = out / "eval" / "results.json"
    if not results_path.exists():
        raise DataError(f"no evaluation at {results_path}; run evaluate first")
    results = json.loads(results_path.read_text())
    files = emit_report(results, out / "report", traces_root=out / "traces",
                        grid=cfg.grid)
    print(f"wrote {len(files)} report files to {out / 'report'}")
    return EXIT_OK


def _parse_targets(spec: str, cfg: RunConfig) -> list[float]:
    if spec == "eval":
        return [cfg.sim.eval_speed]
    if spec == "all":
        return list(cfg.sim.target_speeds)
    try:
        return [float(x) for x in spec.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --targets value {spec!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ecocruise",
        description="Predictive cruise control workbench: synthetic truck "
                    "simulator, sequence model and fuel-saving planner.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None,
                        help="JSON run config (defaults are built in)")
    common.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    common.add_argument("--out", type=Path, default=Path("runs"),
                        help="working directory for all artifacts")

    sub = parser.add_subparsers(dest="verb", required=True)
    sub.add_parser("gen-scenarios", parents=[common],
                   help="write the scenario route CSVs")
    sub.add_parser("gen-data", parents=[common],
                   help="synthesize the training trip corpus")
    sub.add_parser("train", parents=[common],
                   help="build examples from trips and train the model")
    sub.add_parser("gradcheck", parents=[common],
                   help="finite-difference check of the model gradient")
    sim = sub.add_parser("simulate", parents=[common],
                         help="closed-loop runs over the scenarios")
    sim.add_argument("--method", required=True,
                     choices=["cruise", "npc", "npc-noformer"])
    sim.add_argument("--targets", default="eval",
                     help="'eval', 'all', or comma-separated m/s values")
    sim.add_argument("--scenario", type=int, default=None,
                     help="restrict to one scenario index")
    sub.add_parser("evaluate", parents=[common],
                   help="aggregate traces into fuel/cost results")
    sub.add_parser("report", parents=[common],
                   help="emit CSV and SVG reports from the evaluation")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        out: Path = args.out
        if args.verb == "gen-scenarios":
            return cmd_gen_scenarios(cfg, out)
        if args.verb == "gen-data":
            return cmd_gen_data(cfg, out)
        if args.verb == "train":
            return cmd_train(cfg, out)
        if args.verb == "gradcheck":
            return cmd_gradcheck(cfg, out)
        if args.verb == "simulate":
            targets = _parse_targets(args.targets, cfg)
            return cmd_simulate(cfg, out, args.method, targets, args.scenario)
        if args.verb == "evaluate":
            return cmd_evaluate(cfg, out)
        if args.verb == "report":
            return cmd_report(cfg, out)
        raise ConfigError(f"unknown verb {args.verb}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, EcoCruiseError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
