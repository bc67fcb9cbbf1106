"""Experiment runner: every benchmark is a subcommand with JSON configs.

Outputs per run: a trace CSV (or the diagnostic/lint CSV), a summary JSON
echoing the full config, and a rendered figure next to them.  Same config
and seed produce byte-identical CSVs.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import dataclasses
import json
import os
import sys
import time

from . import branin, engine, plots, smiles, testbed
from .bnn import AlphaTrainConfig
from .gp import AdamConfig

EXPERIMENTS = (
    "branin_sequential",
    "branin_parallel",
    "branin_random",
    "diagnostic",
    "testbed_constrained",
    "testbed_unconstrained",
    "smiles_lint",
)

_BO_EXPERIMENTS = ("branin_sequential", "branin_parallel",
                   "testbed_constrained", "testbed_unconstrained")

# Top-level config keys accepted for each experiment.
_ALLOWED_KEYS = {
    "branin_sequential": {"bo"},
    "branin_parallel": {"bo"},
    "branin_random": {"budget"},
    "diagnostic": {"diagnostic"},
    "testbed_constrained": {"bo", "problem"},
    "testbed_unconstrained": {"bo", "problem"},
    "smiles_lint": {"input"},
}


class ConfigError(ValueError):
    """Invalid experiment config; maps to exit status 2."""


def default_bo_config(experiment: str, seed: int) -> engine.BoConfig:
    """Per-experiment optimizer defaults before user overrides."""
    if experiment == "branin_parallel":
        return engine.BoConfig(iterations=10, batch_size=5, init_points=10,
                               seed=seed)
    if experiment == "branin_sequential":
        # Larger designs tolerate shorter fits; this keeps 40 sequential
        # refits fast without hurting the optimum found.
        return engine.BoConfig(
            iterations=40, batch_size=1, init_points=50, seed=seed,
            gp_adam=AdamConfig(epochs=200, minibatch_size=512),
            bnn_train=AlphaTrainConfig(minibatch_size=512, epochs=120,
                                       prior_variance=25.0))
    if experiment in ("testbed_constrained", "testbed_unconstrained"):
        return engine.BoConfig(
            iterations=20, batch_size=10, init_points=200, seed=seed,
            gp_adam=AdamConfig(epochs=200, minibatch_size=512),
            bnn_train=AlphaTrainConfig(minibatch_size=512, epochs=120,
                                       prior_variance=25.0))
    raise ValueError(f"{experiment} takes no optimizer config")


def default_testbed_problem(seed: int) -> testbed.TestbedProblem:
    """Latent problem sized so a full constrained-vs-plain pair runs in
    minutes.  Low methane bias keeps far-field decodes mostly invalid, so
    the objective model stays blind there while labels keep arriving, and
    the decoy anchors outscore every drug-like bump (amplitudes cap at 3)
    without ever labeling feasible.  The 0.3 margin keeps the lure decisive
    for a constraint-blind incumbent yet small enough that the constraint
    probability still dominates the acquisition near the decoys."""
    return testbed.TestbedProblem(dimension=8, seed=seed, methane_bias=0.3,
                                  num_decoy_anchors=8, trivial_modal_score=3.3,
                                  negative_pool_size=300, decode_attempts=100)


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seed: int
    output_dir: str
    bo: engine.BoConfig | None = None
    problem: testbed.TestbedProblem | None = None
    diagnostic: testbed.DiagnosticConfig | None = None
    budget: int = 60
    input_path: str | None = None


def _apply_overrides(obj, overrides: dict, path: str):
    """Rebuild a config dataclass with nested dict overrides applied."""
    if not isinstance(overrides, dict):
        raise ConfigError(f"{path.rstrip('.')}: expected an object")
    names = {f.name for f in dataclasses.fields(obj)}
    updates = {}
    for key, value in overrides.items():
        if key == "seed":
            raise ConfigError(f"{path}{key}: seed is set at the top level")
        if key not in names:
            raise ConfigError(f"{path}{key}: unknown key")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current) and isinstance(value, dict):
            updates[key] = _apply_overrides(current, value, f"{path}{key}.")
        elif isinstance(current, tuple) and isinstance(value, list):
            updates[key] = tuple(value)
        else:
            updates[key] = value
    try:
        return dataclasses.replace(obj, **updates)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path.rstrip('.') or 'config'}: {exc}") from exc


def load_experiment_config(path: str, seed: int | None = None,
                           output_dir: str | None = None) -> ExperimentConfig:
    """Parse and fully validate a config file before any artifact exists."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")

    experiment = raw.get("experiment")
    if experiment not in EXPERIMENTS:
        raise ConfigError(
            f"experiment: must be one of {', '.join(EXPERIMENTS)}; "
            f"got {experiment!r}")
    allowed = {"experiment", "seed", "output_dir"} | _ALLOWED_KEYS[experiment]
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"{key}: unknown key for {experiment}")

    if seed is None:
        seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"seed: must be an integer, got {seed!r}")
    if output_dir is None:
        output_dir = raw.get("output_dir", experiment)
    if not isinstance(output_dir, str) or not output_dir:
        raise ConfigError("output_dir: must be a non-empty string")

    bo = problem = diagnostic = None
    budget = 60
    input_path = None
    if experiment in _BO_EXPERIMENTS:
        bo = _apply_overrides(default_bo_config(experiment, seed),
                              raw.get("bo", {}), "bo.")
        bo = dataclasses.replace(bo, seed=seed)
    if experiment.startswith("testbed_"):
        problem = _apply_overrides(default_testbed_problem(seed),
                                   raw.get("problem", {}), "problem.")
    if experiment == "diagnostic":
        diagnostic = _apply_overrides(
            testbed.DiagnosticConfig(seed=seed),
            raw.get("diagnostic", {}), "diagnostic.")
        diagnostic = dataclasses.replace(diagnostic, seed=seed)
    if experiment == "branin_random":
        budget = raw.get("budget", 60)
        if not isinstance(budget, int) or budget < 1:
            raise ConfigError(f"budget: must be a positive integer, got {budget!r}")
    if experiment == "smiles_lint":
        input_path = raw.get("input")
        if not isinstance(input_path, str):
            raise ConfigError("input: smiles_lint requires an input file path")
        if not os.path.isfile(input_path):
            raise ConfigError(f"input: no such file: {input_path}")

    return ExperimentConfig(experiment=experiment, seed=seed,
                            output_dir=output_dir, bo=bo, problem=problem,
                            diagnostic=diagnostic, budget=budget,
                            input_path=input_path)


def _write_json(doc: dict, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(engine._jsonable(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _config_echo(cfg: ExperimentConfig) -> dict:
    echo = {"experiment": cfg.experiment, "seed": cfg.seed,
            "output_dir": cfg.output_dir}
    if cfg.bo is not None:
        echo["bo"] = dataclasses.asdict(cfg.bo)
    if cfg.problem is not None:
        echo["problem"] = {f.name: getattr(cfg.problem, f.name)
                           for f in dataclasses.fields(cfg.problem)}
    if cfg.diagnostic is not None:
        echo["diagnostic"] = dataclasses.asdict(cfg.diagnostic)
    if cfg.experiment == "branin_random":
        echo["budget"] = cfg.budget
    if cfg.input_path is not None:
        echo["input"] = cfg.input_path
    return echo


def _run_bo_experiment(cfg: ExperimentConfig, out: str):
    if cfg.experiment.startswith("branin"):
        problem = branin.BraninProblem()
    else:
        problem = cfg.problem
    if cfg.experiment == "testbed_unconstrained":
        trace = engine.run_unconstrained_bo(problem, cfg.bo)
    else:
        trace = engine.run_constrained_bo(problem, cfg.bo)
    extras = {"experiment": cfg.experiment,
              "final_best_feasible": trace.final_best_feasible()}
    if cfg.experiment.startswith("testbed_"):
        extras["collected_feasible_fraction"] = \
            engine.collected_feasible_fraction(trace)
        extras["problem"] = _config_echo(cfg)["problem"]
    trace_path = os.path.join(out, "trace.csv")
    engine.write_trace_csv(trace, trace_path)
    plots.plot_trace_csv(trace_path, os.path.join(out, "best_feasible.png"),
                         cfg.experiment)
    return trace_path, extras, trace


def _run_random_experiment(cfg: ExperimentConfig, out: str):
    trace = engine.random_sampling_baseline(branin.BraninProblem(),
                                            cfg.budget, cfg.seed)
    extras = {"experiment": cfg.experiment, "budget": cfg.budget,
              "final_best_feasible": trace.final_best_feasible()}
    trace_path = os.path.join(out, "trace.csv")
    engine.write_trace_csv(trace, trace_path)
    plots.plot_trace_csv(trace_path, os.path.join(out, "best_feasible.png"),
                         "random sampling baseline")
    return trace_path, extras, trace


def _run_diagnostic(cfg: ExperimentConfig, out: str) -> dict:
    rows = testbed.diagnostic_experiment(testbed.make_diagnostic_decoder(),
                                         cfg.diagnostic)
    csv_path = os.path.join(out, "diagnostic.csv")
    testbed.write_diagnostic_csv(rows, csv_path)
    plots.plot_diagnostic_csv(csv_path, os.path.join(out, "diagnostic.png"))
    return {"experiment": cfg.experiment,
            "rows": [dataclasses.asdict(r) for r in rows]}


def lint_report(s: str) -> dict:
    """One string's ValidityReport as a JSON-ready dict."""
    report = smiles.check_validity(s)
    return {"string": s, "valid": report.valid,
            "failure_kind": None if report.failure_kind is None
            else report.failure_kind.value,
            "failure_position": report.failure_position}


def run_lint(input_path: str, out: str) -> dict:
    """Validity-lint a file of strings, one per line; blank lines skipped."""
    with open(input_path) as fh:
        strings = [line.rstrip("\n") for line in fh if line.strip()]
    return _lint_strings(strings, input_path, out)


def _lint_strings(strings: list[str], input_label: str, out: str) -> dict:
    csv_path = os.path.join(out, "lint.csv")
    n_valid = 0
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["string", "valid", "failure_kind", "failure_position"])
        for s in strings:
            report = smiles.check_validity(s)
            n_valid += report.valid
            writer.writerow([
                s,
                int(report.valid),
                "" if report.failure_kind is None else report.failure_kind.value,
                "" if report.failure_position is None else report.failure_position,
            ])
    plots.plot_lint_counts(n_valid, len(strings) - n_valid,
                           os.path.join(out, "lint.png"))
    return {"experiment": "smiles_lint", "input": input_label,
            "num_strings": len(strings), "num_valid": n_valid,
            "num_invalid": len(strings) - n_valid}


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Execute one experiment, writing all artifacts under cfg.output_dir."""
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    started = time.perf_counter()
    if cfg.experiment in _BO_EXPERIMENTS:
        _, extras, trace = _run_bo_experiment(cfg, out)
    elif cfg.experiment == "branin_random":
        _, extras, trace = _run_random_experiment(cfg, out)
    elif cfg.experiment == "diagnostic":
        extras, trace = _run_diagnostic(cfg, out), None
    else:
        extras, trace = run_lint(cfg.input_path, out), None
    extras["wall_time_seconds"] = time.perf_counter() - started
    summary_path = os.path.join(out, "summary.json")
    if trace is not None:
        engine.write_summary_json(trace, summary_path,
                                  config=_config_echo(cfg), seed=cfg.seed,
                                  extras=extras)
    else:
        _write_json({"seed": cfg.seed, "config": _config_echo(cfg), **extras},
                    summary_path)
    with open(summary_path) as fh:
        return json.load(fh)


def _load_curve(path: str) -> list[float | None]:
    """Best-feasible curve from either a trace CSV or a summary JSON."""
    if path.endswith(".json"):
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        curve = doc.get("best_feasible_per_iteration")
        if not isinstance(curve, list):
            raise ConfigError(
                f"{path}: missing best_feasible_per_iteration; not a run summary")
        return curve
    try:
        return engine.best_feasible_curve(engine.read_trace_csv(path))
    except (OSError, ValueError) as exc:
        message = str(exc)
        if path not in message:
            message = f"{path}: {message}"
        raise ConfigError(message) from exc


def run_compare(path_a: str, path_b: str, output_dir: str) -> dict:
    """Align two runs' best-feasible curves and report final deltas."""
    curve_a, curve_b = _load_curve(path_a), _load_curve(path_b)
    if len(curve_a) != len(curve_b):
        raise ConfigError(
            f"budget mismatch: {len(curve_a)} vs {len(curve_b)} recording points")
    final_a = curve_a[-1] if curve_a else None
    final_b = curve_b[-1] if curve_b else None
    delta = None if final_a is None or final_b is None else final_a - final_b
    doc = {
        "trace_a": path_a,
        "trace_b": path_b,
        "recording_points": len(curve_a),
        "best_feasible_a": curve_a,
        "best_feasible_b": curve_b,
        "final_best_feasible_a": final_a,
        "final_best_feasible_b": final_b,
        "final_delta": delta,
    }
    os.makedirs(output_dir, exist_ok=True)
    _write_json(doc, os.path.join(output_dir, "compare.json"))
    plots.plot_best_feasible({path_a: curve_a, path_b: curve_b},
                             os.path.join(output_dir, "compare.png"),
                             "best feasible comparison")
    return doc


def _parse_seed_range(text: str) -> range:
    lo, sep, hi = text.partition("..")
    if not sep:
        raise ConfigError(f"--seeds: expected A..B, got {text!r}")
    try:
        lo, hi = int(lo), int(hi)
    except ValueError as exc:
        raise ConfigError(f"--seeds: expected integers A..B, got {text!r}") from exc
    if hi < lo:
        raise ConfigError(f"--seeds: empty range {text!r}")
    return range(lo, hi + 1)


def _sweep_worker(config_path: str, seed: int, out: str) -> tuple[int, float | None]:
    cfg = load_experiment_config(config_path, seed=seed, output_dir=out)
    summary = run_experiment(cfg)
    return seed, summary.get("final_best_feasible")


def _cmd_lint(args) -> int:
    """JSON-lines reports on stdout, artifacts under --output."""
    if args.path == "-":
        strings = [line.rstrip("\n") for line in sys.stdin if line.strip()]
        label = "<stdin>"
    else:
        if not os.path.isfile(args.path):
            raise ConfigError(f"no such file: {args.path}")
        with open(args.path) as fh:
            strings = [line.rstrip("\n") for line in fh if line.strip()]
        label = args.path
    for s in strings:
        print(json.dumps(lint_report(s)))
    os.makedirs(args.output, exist_ok=True)
    doc = _lint_strings(strings, label, args.output)
    print(f"{doc['num_valid']}/{doc['num_strings']} strings valid"
          f"; artifacts in {args.output}", file=sys.stderr)
    return 0


def _cmd_run(args) -> int:
    if args.seeds is None:
        cfg = load_experiment_config(args.config, seed=args.seed,
                                     output_dir=args.output)
        summary = run_experiment(cfg)
        best = summary.get("final_best_feasible")
        print(f"{cfg.experiment} seed={cfg.seed}: artifacts in {cfg.output_dir}"
              + (f", final best feasible {best}" if best is not None else ""))
        return 0
    seeds = _parse_seed_range(args.seeds)
    base_cfg = load_experiment_config(args.config, seed=args.seed,
                                      output_dir=args.output)
    jobs = [(s, os.path.join(base_cfg.output_dir, f"seed_{s}")) for s in seeds]
    workers = min(len(jobs), os.cpu_count() or 1)
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_sweep_worker, args.config, s, out)
                   for s, out in jobs]
        for fut in futures:
            seed, best = fut.result()
            print(f"{base_cfg.experiment} seed={seed}: final best feasible {best}")
    print(f"{len(jobs)} runs under {base_cfg.output_dir}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="cbolt",
        description="Constrained Bayesian optimization experiment runner.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one experiment from a JSON config")
    run_p.add_argument("--config", required=True, help="experiment config path")
    run_p.add_argument("--seed", type=int, help="override the config seed")
    run_p.add_argument("--output", help="override the output directory")
    run_p.add_argument("--seeds",
                       help="inclusive sweep A..B, one subdirectory per seed")

    cmp_p = sub.add_parser("compare",
                           help="compare two runs (trace CSV or summary JSON)")
    cmp_p.add_argument("trace_a")
    cmp_p.add_argument("trace_b")
    cmp_p.add_argument("--output", default=".", help="where compare.json goes")

    lint_p = sub.add_parser("smiles-lint",
                            help="validity-lint strings from a file or stdin, "
                                 "one JSON report per line on stdout")
    lint_p.add_argument("path", nargs="?", default="-",
                        help="input file, or - for stdin (default)")
    lint_p.add_argument("--output", default="smiles_lint",
                        help="where lint.csv goes")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "compare":
            doc = run_compare(args.trace_a, args.trace_b, args.output)
            print(f"final delta (a - b): {doc['final_delta']}"
                  f"; artifacts in {args.output}")
            return 0
        return _cmd_lint(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
