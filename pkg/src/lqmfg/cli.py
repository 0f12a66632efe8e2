"""Command-line front end.

    lqmfg --preset netsec-closed-form --out results/
    lqmfg --config scenario.json --seed 7 --steps 2000

Exactly one of --config / --preset selects the scenario. Every run solves
the Riccati system first and writes the solve artifacts; the experiment
kind then decides what else is produced:

* ``solve``      — Riccati tables and the solve report only;
* ``simulate``   — one N-agent population draw: mean-field CSV, one CSV per
  agent, and a cost summary;
* ``rate_state`` / ``rate_cost`` — gap statistics across the population
  ladder ``Ns`` with a log-log slope fit;
* ``deviation``  — unilateral-deviation sweep over the candidate family.

A manifest JSON is written last; it echoes the effective configuration, so
a run can be reproduced from its own manifest. All files are written
atomically, and everything except the manifest's wall-time entry is
byte-identical across reruns with the same seed.

Exit codes: 0 success, 2 usage/config error, 3 model validation failure,
4 numerical failure. Failures also emit a one-line JSON error record on
stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import platform
import sys
import time

import numpy as np
import scipy

from . import __version__
from .errors import LqmfgError, UsageError, ValidationError
from .io import (deviation_report_dict, rate_report_dict, write_agent_csv,
                 write_json, write_meanfield_csv, write_rate_csv,
                 write_riccati_csv)
from .meanfield import integrate_Em
from .model import validate, wellposedness_diagnostic
from .population import (deviation_experiment, rate_experiment_cost,
                         rate_experiment_state, simulate_population)
from .riccati import solve_riccati
from .scenario import (FORMAT_VERSION, ScenarioConfig, build_candidates,
                       load_scenario, preset)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lqmfg",
        description="Solve and simulate linear-quadratic mean-field games "
                    "with common noise and filtered (partial) observations.")
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--config", metavar="PATH",
                        help="scenario JSON file")
    source.add_argument("--preset", metavar="NAME",
                        help="built-in scenario "
                             "(netsec-closed-form, netsec-numeric)")
    parser.add_argument("--out", metavar="DIR",
                        help="output directory (overrides the scenario)")
    parser.add_argument("--seed", type=int, metavar="U64",
                        help="experiment seed (overrides the scenario)")
    parser.add_argument("--steps", type=int, metavar="M",
                        help="time-grid steps (overrides the scenario)")
    parser.add_argument("--quiet", action="store_true",
                        help="suppress the artifact listing on stdout")
    return parser


def _apply_overrides(config: ScenarioConfig, args) -> ScenarioConfig:
    if args.steps is not None:
        if args.steps < 1:
            raise UsageError(f"--steps must be positive, got {args.steps}")
        config = config.replace(
            solver=dataclasses.replace(config.solver, steps=args.steps))
    if args.seed is not None:
        if not 0 <= args.seed < (1 << 64):
            raise UsageError("--seed must fit in 64 bits")
        config = config.replace(
            experiment=dataclasses.replace(config.experiment,
                                           seed=args.seed))
    if args.out is not None:
        config = config.replace(
            output=dataclasses.replace(config.output, directory=args.out))
    return config


def _validation_dict(report) -> list[dict]:
    return [{"name": c.name, "passed": bool(c.passed),
             "node": c.node, "value": c.value, "threshold": c.threshold}
            for c in report.checks]


def _diagnostic_dict(diag) -> dict:
    return {"lambda_star": float(diag.lambda_star),
            "norms": {key: float(val) for key, val in diag.norms.items()},
            "lhs": float(diag.lhs), "rhs": float(diag.rhs),
            "holds": bool(diag.holds)}


def _cross_check_dict(summary) -> dict:
    out = {"p_method": summary.p_method,
           "gamma_method": summary.gamma_method,
           "p_agreement": summary.p_agreement,
           "gamma_agreement": summary.gamma_agreement,
           "iterative_iterations": summary.iterative_iterations,
           "pi": None, "pi_error": summary.pi_error}
    if summary.pi_report is not None:
        rep = summary.pi_report
        out["pi"] = {"delta": float(rep.delta),
                     "condition_ok": bool(rep.condition_ok),
                     "min_margin": float(min(rep.condition_margins)),
                     "violated_nodes": [int(j) for j in rep.violated_nodes]}
    return out


def _require(value, name: str, kind: str):
    if value is None:
        raise UsageError(f"experiment.{name} is required for kind '{kind}'")
    return value


def run(config: ScenarioConfig, quiet: bool = False) -> list[str]:
    """Execute a scenario; returns the artifact paths in creation order."""
    started = time.perf_counter()
    outdir = config.output.directory
    os.makedirs(outdir, exist_ok=True)
    prefix = config.output.prefix

    def dest(suffix: str) -> str:
        return os.path.join(outdir, f"{prefix}_{suffix}")

    model = config.model.build(config.solver.steps)
    report = validate(model)
    if not report.all_passed:
        raise ValidationError(report)
    diag = wellposedness_diagnostic(model)

    solver = config.solver
    summary = solve_riccati(model, p_method=solver.p_method,
                            gamma_method=solver.gamma_method,
                            max_iters=solver.max_iters, tol=solver.tol)

    artifacts: list[str] = []

    def emit(suffix, writer, *payload):
        path = dest(suffix)
        writer(path, *payload)
        artifacts.append(path)

    emit("riccati.csv", write_riccati_csv, summary.solution, summary.feedback)
    emit("solve_report.json", write_json, {
        "format_version": FORMAT_VERSION,
        "validation": _validation_dict(report),
        "diagnostic": _diagnostic_dict(diag),
        "cross_check": _cross_check_dict(summary),
    })

    exp = config.experiment
    law = summary.feedback
    beta_literal = solver.m00_beta_literal

    if exp.kind == "simulate":
        N = _require(exp.N, "N", exp.kind)
        Em = integrate_Em(model, law)
        sample = simulate_population(model, law, Em, N, exp.seed,
                                     beta_literal=beta_literal)
        emit("meanfield.csv", write_meanfield_csv,
             model.grid, sample.m, sample.Em)
        width = max(3, len(str(N)))
        for i in range(N):
            emit(f"agent_{i + 1:0{width}d}.csv", write_agent_csv,
                 model.grid, sample.z_hat[i], sample.u[i])
        gaps = np.abs(sample.J_central - sample.J_limit)
        state_gap = float(np.max(
            np.sum((sample.state_average - sample.m) ** 2, axis=1)))
        emit("costs.json", write_json, {
            "format_version": FORMAT_VERSION,
            "N": N,
            "J_central": [float(v) for v in sample.J_central],
            "J_limit": [float(v) for v in sample.J_limit],
            "mean_J_central": math.fsum(sample.J_central) / N,
            "mean_J_limit": math.fsum(sample.J_limit) / N,
            "mean_abs_cost_gap": math.fsum(gaps) / N,
            "sup_sq_state_average_gap": state_gap,
        })
    elif exp.kind in ("rate_state", "rate_cost"):
        Ns = _require(exp.Ns, "Ns", exp.kind)
        runner = (rate_experiment_state if exp.kind == "rate_state"
                  else rate_experiment_cost)
        rate = runner(model, law, Ns, exp.S, exp.seed,
                      beta_literal=beta_literal)
        payload = rate_report_dict(rate)
        payload["format_version"] = FORMAT_VERSION
        emit(f"{exp.kind}.json", write_json, payload)
        emit(f"{exp.kind}.csv", write_rate_csv, rate)
    elif exp.kind == "deviation":
        N = _require(exp.N, "N", exp.kind)
        candidates = build_candidates(exp.candidates)
        dev = deviation_experiment(model, law, N, exp.S, candidates,
                                   exp.seed, beta_literal=beta_literal)
        payload = deviation_report_dict(dev)
        payload["format_version"] = FORMAT_VERSION
        emit("deviation.json", write_json, payload)
    elif exp.kind != "solve":
        raise UsageError(f"unknown experiment kind '{exp.kind}'")

    manifest_path = dest("manifest.json")
    write_json(manifest_path, {
        "format_version": FORMAT_VERSION,
        "kind": exp.kind,
        "config": config.to_dict(),
        "seed": exp.seed,
        "versions": {"package": __version__,
                     "numpy": np.__version__,
                     "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "wall_time_s": time.perf_counter() - started,
        "artifacts": [os.path.basename(p) for p in artifacts],
    })
    artifacts.append(manifest_path)

    if not quiet:
        for path in artifacts:
            print(path)
    return artifacts


def _fail(exc: Exception, code: int) -> int:
    record = {"error": type(exc).__name__, "message": str(exc),
              "exit_code": code}
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed its message
        return int(exc.code or 0)
    try:
        if args.config is not None:
            config = load_scenario(args.config)
        else:
            config = preset(args.preset)
        config = _apply_overrides(config, args)
        run(config, quiet=args.quiet)
        return 0
    except UsageError as exc:
        return _fail(exc, 2)
    except ValidationError as exc:
        return _fail(exc, 3)
    except LqmfgError as exc:
        return _fail(exc, 4)


if __name__ == "__main__":
    sys.exit(main())
