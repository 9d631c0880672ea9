"""``sepcount`` command-line interface.

Exit codes: 0 success, 1 validation failure, 2 estimation failure,
3 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .design import REGIME_NAMES, build_design
from .estimation import (
    EstimationError,
    FitResult,
    coefficient_curve,
    extract_random_effects,
    fit,
    fit_report,
    write_coefficients,
)
from .gof import gof_report, simulate_panel
from .network import write_events
from .selection import compare_suite

OK, INVALID, ESTIMATION, IO = 0, 1, 2, 3
CURVE_POINTS = 101


class _Fail(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _num(x: float) -> str:
    return format(float(x), ".12g")


def _load(args) -> cfgmod.RunConfig:
    try:
        cfg = cfgmod.parse_config(args.config)
    except FileNotFoundError:
        raise _Fail(IO, f"config not found: {args.config}") from None
    except cfgmod.ConfigError as exc:
        raise _Fail(INVALID, str(exc)) from None
    try:
        return cfg.with_overrides(
            out=args.out, seed=args.seed, threads=args.threads,
            time_constant=args.time_constant, no_random_effects=args.no_random_effects,
            lag=args.lag, weights=args.weights,
        )
    except ValueError as exc:
        raise _Fail(INVALID, str(exc)) from None


def _checked(cfg: cfgmod.RunConfig):
    problems = cfgmod.validate(cfg)
    if problems:
        raise _Fail(INVALID, "validation failed:\n" + "\n".join(f"  {p}" for p in problems))
    panel, table = cfgmod.load_inputs(cfg)
    try:
        cfg.output.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise _Fail(IO, f"cannot create output directory: {exc}") from None
    return panel, table


def _fit(cfg, panel, table) -> FitResult:
    design = build_design(panel, table, cfg.model)
    try:
        result = fit(design, cfg.estimation)
    except EstimationError as exc:
        trace = "\n".join(f"  {t}" for t in exc.trace)
        raise _Fail(ESTIMATION, f"estimation failed: {exc}\n{trace}") from None
    return result


def _write_curves(result: FitResult, out: Path) -> list[Path]:
    L = result.layout
    grid = np.linspace(L.first_period, L.last_period, CURVE_POINTS)
    written = []
    for b in L.blocks:
        path = out / f"curve_{b.regime}_{b.term}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "estimate", "lower", "upper"])
            for row in coefficient_curve(result, b.key, grid):
                w.writerow([_num(v) for v in row])
        written.append(path)
    return written


def _write_random_effects(result: FitResult, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["actor", "sender_effect", "sender_sd", "receiver_effect", "receiver_sd"])
        if not result.layout.spec.random_effects:
            return
        re = extract_random_effects(result)
        for a in result.layout.actors:
            s = re.sender.get(a)
            r = re.receiver.get(a)
            w.writerow([a,
                        _num(s[0]) if s else "NA", _num(s[1]) if s else "NA",
                        _num(r[0]) if r else "NA", _num(r[1]) if r else "NA"])


def cmd_validate(cfg) -> int:
    problems = cfgmod.validate(cfg)
    for p in problems:
        print(p)
    if problems:
        print(f"{len(problems)} violation(s)")
        return INVALID
    print("valid")
    return OK


def cmd_build_design(cfg) -> int:
    panel, table = _checked(cfg)
    d = build_design(panel, table, cfg.model)
    names = d.layout.column_names()
    with open(cfg.output / "design.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["period", "sender", "receiver", "regime", "y", "weight"] + names)
        for k in range(d.n_rows):
            w.writerow([panel.period_labels[d.period[k] - 1], panel.actors[d.sender[k]],
                        panel.actors[d.receiver[k]], REGIME_NAMES[d.regime[k]], int(d.y[k]),
                        _num(d.weights[k])] + [_num(v) for v in d.X[k]])
    print(f"{d.n_rows} rows, {len(names)} fixed columns")
    return OK


def cmd_fit(cfg) -> int:
    panel, table = _checked(cfg)
    result = _fit(cfg, panel, table)
    out = cfg.output
    write_coefficients(result, out / "coefficients.csv")
    _write_curves(result, out)
    _write_random_effects(result, out / "random_effects.csv")
    (out / "fit_summary.txt").write_text(fit_report(result), encoding="utf-8")
    if not result.converged:
        print("estimation did not converge; see fit_summary.txt", file=sys.stderr)
        return ESTIMATION
    print(f"converged: loglik {_num(result.loglik)}, edf {_num(result.edf)}")
    if cfg.compare:
        return _run_compare(cfg, panel, table)
    return OK


def cmd_compare(cfg) -> int:
    panel, table = _checked(cfg)
    return _run_compare(cfg, panel, table)


def _run_compare(cfg, panel, table) -> int:
    comp = compare_suite(panel, table, cfg.model, cfg.estimation, threads=cfg.estimation.threads)
    comp.write_csv(cfg.output / "comparison.csv")
    failed = [e for e in comp.entries if e.error is not None]
    for e in failed:
        print(f"{e.label} failed: {e.error}", file=sys.stderr)
    return ESTIMATION if failed else OK


def cmd_simulate(cfg) -> int:
    panel, table = _checked(cfg)
    result = _fit(cfg, panel, table)
    sim = simulate_panel(result, panel, table, seed=cfg.seed, trajectory=cfg.trajectory)
    write_events(sim, cfg.output / "simulated_events.csv")
    return OK


def cmd_gof(cfg) -> int:
    panel, table = _checked(cfg)
    result = _fit(cfg, panel, table)
    summary = gof_report(result, panel, table, n_sims=cfg.n_sims, seed=cfg.seed,
                         threads=cfg.estimation.threads, trajectory=cfg.trajectory)
    summary.write(cfg.output / "gof_summary.csv", cfg.output / "gof_replicates.csv")
    return OK


COMMANDS = {
    "validate": cmd_validate,
    "build-design": cmd_build_design,
    "fit": cmd_fit,
    "compare": cmd_compare,
    "simulate": cmd_simulate,
    "gof": cmd_gof,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sepcount", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=list(COMMANDS))
    parser.add_argument("--config", required=True, help="YAML run configuration")
    parser.add_argument("--out", help="output directory (overrides the config)")
    parser.add_argument("--seed", type=int, help="simulation seed (unsigned 64-bit)")
    parser.add_argument("--threads", type=int, help="worker threads for estimation and simulation")
    parser.add_argument("--time-constant", action="store_true", help="fit every effect as constant over time")
    parser.add_argument("--no-random-effects", action="store_true", help="drop sender/receiver effects")
    parser.add_argument("--lag", type=int, help="separability lag L")
    parser.add_argument("--weights", choices=["unit", "tiv_log"])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("--seed must be an unsigned 64-bit integer", file=sys.stderr)
        return INVALID
    if args.threads is not None and args.threads < 1:
        print("--threads must be >= 1", file=sys.stderr)
        return INVALID
    try:
        cfg = _load(args)
        return COMMANDS[args.command](cfg)
    except _Fail as exc:
        print(exc, file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return INVALID


if __name__ == "__main__":
    sys.exit(main())
