"""Command-line pipelines: simulate, estimate, solve, validate, report.

Each command reads a JSON run config (``--config``) and/or files from the run
directory (``--out``) and writes exactly its own artifacts there. Exit codes:
0 success, 1 usage, 2 data (missing or malformed input), 3 numerical
(degenerate system, failed validation).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from .estimation import EstimationError, build_kernel, build_rhs
from .io import (
    DataFormatError,
    dump_json,
    fmt,
    read_kernel_csv,
    read_rhs_csv,
    read_samples_csv,
    read_theta_csv,
    write_kernel_csv,
    write_rhs_csv,
    write_samples_csv,
    write_solution,
)
from .model import ModelError, Scenario, draw_sample_set, true_theta
from .rng import derive_seed
from .solver import (
    PENALTIES,
    QuadratureGrid,
    RegularizationWarning,
    SolverError,
    TikhonovProblem,
    assemble_system,
    make_grid,
    select_lambda,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class CheckFailed(Exception):
    pass


@dataclass
class RunConfig:
    scenario: Scenario | None = None
    n_per_level: int = 100_000
    seed: int = 0
    j_points: int = 201
    pad_fraction: float = 0.1
    penalty: str = "second-difference"
    lam: float | str = "auto:discrepancy"
    output: Path = Path("run")
    validate: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()[:16]

    def stamp(self) -> dict:
        return {"seed": self.seed, "config_hash": self.config_hash}


def load_config(path: str | None, seed: int | None = None, out: str | None = None) -> RunConfig:
    raw: dict = {}
    base = Path(".")
    if path is not None:
        p = Path(path)
        try:
            raw = json.loads(p.read_text(encoding="utf-8"))
        except OSError as exc:
            raise DataFormatError(p, None, f"cannot read config ({exc.strerror})") from None
        except json.JSONDecodeError as exc:
            raise DataFormatError(p, exc.lineno, f"invalid JSON: {exc.msg}") from None
        base = p.parent
    if seed is not None:
        raw["seed"] = seed
    scen = raw.get("scenario")
    if isinstance(scen, str):
        sp = base / scen
        try:
            scen = json.loads(sp.read_text(encoding="utf-8"))
        except OSError as exc:
            raise DataFormatError(sp, None, f"cannot read scenario ({exc.strerror})") from None
        except json.JSONDecodeError as exc:
            raise DataFormatError(sp, exc.lineno, f"invalid JSON: {exc.msg}") from None
        raw["scenario"] = scen
    grid = raw.get("grid", {})
    solver = raw.get("solver", {})
    cfg = RunConfig(
        scenario=Scenario.from_dict(scen) if scen else None,
        n_per_level=int(raw.get("n_per_level", 100_000)),
        seed=int(raw.get("seed", 0)),
        j_points=int(grid.get("j_points", 201)),
        pad_fraction=float(grid.get("pad_fraction", 0.1)),
        penalty=solver.get("penalty", "second-difference"),
        lam=solver.get("lambda", "auto:discrepancy"),
        output=Path(out or raw.get("output", "run")),
        validate=raw.get("validate", {}),
        raw=raw,
    )
    if cfg.penalty not in PENALTIES:
        raise UsageError(f"solver.penalty must be one of {PENALTIES}")
    if isinstance(cfg.lam, str) and cfg.lam not in ("auto:discrepancy", "auto:l-curve"):
        raise UsageError("solver.lambda must be a number, 'auto:discrepancy' or 'auto:l-curve'")
    return cfg


def _say(args, msg: str) -> None:
    if not args.quiet:
        print(msg)


def _need_scenario(cfg: RunConfig, what: str) -> Scenario:
    if cfg.scenario is None:
        raise UsageError(f"{what} needs a scenario in the config")
    return cfg.scenario


def _outdir(cfg: RunConfig) -> Path:
    cfg.output.mkdir(parents=True, exist_ok=True)
    return cfg.output


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig, args) -> int:
    scenario = _need_scenario(cfg, "simulate")
    ss = draw_sample_set(scenario, cfg.n_per_level, cfg.seed)
    path = _outdir(cfg) / "samples.csv"
    write_samples_csv(
        ss, path, {**cfg.stamp(), "scenario_id": ss.scenario_id, "baseline_z": ss.baseline_z}
    )
    _say(args, f"wrote {path} ({len(ss.levels)} levels x {cfg.n_per_level})")
    return EXIT_OK


def _estimate(cfg: RunConfig, samples_path: Path | None):
    if samples_path is not None:
        ss = read_samples_csv(samples_path)
    else:
        ss = draw_sample_set(_need_scenario(cfg, "estimate without samples"), cfg.n_per_level, cfg.seed)
    grid = make_grid(ss, cfg.j_points, cfg.pad_fraction)
    return ss, grid, build_kernel(ss, grid.x_grid), build_rhs(ss)


def cmd_estimate(cfg: RunConfig, args) -> int:
    out = _outdir(cfg)
    samples = Path(args.samples) if args.samples else out / "samples.csv"
    _, _, kernel, rhs = _estimate(cfg, samples if samples.exists() or args.samples else None)
    write_kernel_csv(kernel, out / "kernel.csv", cfg.stamp())
    write_rhs_csv(rhs, out / "rhs.csv", cfg.stamp())
    _say(args, f"wrote {out / 'kernel.csv'} {kernel.shape} and {out / 'rhs.csv'}")
    return EXIT_OK


def _choose_lambda(cfg: RunConfig, A, rhs, problem) -> tuple[float, str, list[str]]:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RegularizationWarning)
        if isinstance(cfg.lam, str):
            method = cfg.lam.split(":", 1)[1]
            lam = select_lambda(A, rhs, method, cfg.penalty, problem=problem)
        else:
            method = "fixed"
            lam = float(cfg.lam)
    return lam, method, [str(w.message) for w in caught]


def cmd_solve(cfg: RunConfig, args) -> int:
    out = _outdir(cfg)
    kernel = read_kernel_csv(Path(args.kernel) if args.kernel else out / "kernel.csv")
    rhs = read_rhs_csv(Path(args.rhs) if args.rhs else out / "rhs.csv")
    if tuple(kernel.z_levels) != tuple(rhs.z_levels):
        raise DataFormatError(args.rhs or out / "rhs.csv", None, "z levels do not match the kernel")
    grid = QuadratureGrid.from_points(kernel.x_grid)
    A = assemble_system(kernel, grid)
    problem = TikhonovProblem(A, cfg.penalty)
    lam, method, notes = _choose_lambda(cfg, A, rhs, problem)
    sol = problem.solve(np.asarray(rhs.values), lam)
    extra = {**cfg.stamp(), "lambda_method": method, "warnings": notes}
    if cfg.scenario is not None:
        extra["scenario"] = cfg.scenario.to_dict()
    write_solution(sol, grid.x_grid, out / "theta.csv", out / "solution.json", extra)
    _say(args, f"lambda={lam:.6g} ({method}) residual={sol.residual_norm:.4g}; wrote theta.csv")
    return EXIT_OK


def cmd_validate(cfg: RunConfig, args) -> int:
    scenario = _need_scenario(cfg, "validate")
    v = cfg.validate
    rate_n = int(v.get("rate_n", 1_000_000))
    cond_n = int(v.get("condition_n", 100_000))
    ladder = tuple(v.get("sigma_ladder", (0.4, 0.2, 0.1, 0.05)))
    z_rate = float(v.get("rate_z", 1.0))
    x_rate = float(v.get("rate_x", 0.0))
    ss, grid, kernel, rhs = _estimate(cfg, None)
    A = assemble_system(kernel, grid)
    theta = true_theta(scenario, grid.x_grid)

    checks = {}
    fwd = dg.forward_consistency(A, theta, rhs)
    checks["forward_consistency"] = fwd.to_dict()
    ibp = dg.antiderivative_identity(theta, grid, kernel, ss, rhs)
    checks["antiderivative_identity"] = ibp.to_dict()
    c3 = dg.density_sup_estimate(scenario, cond_n, derive_seed(cfg.seed, "condition3"))
    lo, hi = np.quantile(ss.pooled_x(), [0.1, 0.9])
    c5 = dg.condition5_grid(
        scenario, np.linspace(lo, hi, 5), cond_n, derive_seed(cfg.seed, "condition5")
    )
    c6 = dg.completeness_spectrum(A, kernel.stderr * grid.weights[None, :])
    for rep in (c3, c5, c6):
        checks[f"condition_{rep.condition}"] = rep.to_dict()
    rs = dg.rate_check_sigma(scenario, z_rate, ladder, rate_n, derive_seed(cfg.seed, "rate-sigma"))
    rp = dg.rate_check_phi(scenario, x_rate, z_rate, ladder, rate_n, derive_seed(cfg.seed, "rate-phi"))
    checks["rate_sigma"] = {**rs.to_dict(), "band": [1.7, 2.3]}
    checks["rate_phi"] = {**rp.to_dict(), "floor": 0.4}

    problem = TikhonovProblem(A, cfg.penalty)
    lam, method, notes = _choose_lambda(cfg, A, rhs, problem)
    sol = problem.solve(np.asarray(rhs.values), lam)
    rel_l2, rel_linf = dg.error_metrics(sol.theta, theta, grid, 0.8)
    recovery = {"lambda": lam, "lambda_method": method, "warnings": notes,
                "rel_l2_central80": rel_l2, "rel_linf_central80": rel_linf}

    verdicts = {
        "forward_consistency": fwd.passed,
        "antiderivative_identity": ibp.passed,
        "condition_3": c3.passed,
        "condition_5": c5.passed,
        "condition_6": c6.passed,
        "rate_sigma": rs.passed,
        "rate_phi": rp.passed,
    }
    report = {
        **cfg.stamp(),
        "scenario_id": scenario.scenario_id,
        "mandatory": verdicts,
        "all_passed": all(verdicts.values()),
        "checks": checks,
        "recovery": recovery,
    }
    path = _outdir(cfg) / "report.json"
    path.write_text(dump_json(report), encoding="utf-8")
    for name, ok in verdicts.items():
        _say(args, f"{'PASS' if ok else 'FAIL'}  {name}")
    if not report["all_passed"]:
        raise CheckFailed("one or more mandatory checks failed; see report.json")
    return EXIT_OK


def cmd_report(cfg: RunConfig, args) -> int:
    out = cfg.output
    x, theta_hat = read_theta_csv(out / "theta.csv")
    sol_path = out / "solution.json"
    try:
        sol = json.loads(sol_path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataFormatError(sol_path, None, f"cannot read ({exc.strerror})") from None
    scenario = cfg.scenario
    if scenario is None and "scenario" in sol:
        scenario = Scenario.from_dict(sol["scenario"])
    head = {k: sol.get(k) for k in ("seed", "config_hash")}
    lines = ["# " + json.dumps(head, sort_keys=True, separators=(",", ":"))]
    summary = [
        f"seed: {head['seed']}",
        f"config_hash: {head['config_hash']}",
        f"grid: {len(x)} points on [{fmt(x[0])}, {fmt(x[-1])}]",
        f"lambda: {fmt(sol['lambda'])} ({sol.get('lambda_method', 'unknown')})",
        f"penalty: {sol['penalty_kind']}",
        f"residual_norm: {fmt(sol['residual_norm'])}",
        f"solution_seminorm: {fmt(sol['solution_seminorm'])}",
    ]
    if scenario is not None:
        truth = true_theta(scenario, x)
        lines.append("x,theta_hat,theta_true")
        lines += [f"{fmt(a)},{fmt(b)},{fmt(c)}" for a, b, c in zip(x, theta_hat, truth)]
        rel_l2, rel_linf = dg.error_metrics(theta_hat, truth, QuadratureGrid.from_points(x), 0.8)
        summary.append(f"scenario: {scenario.scenario_id}")
        summary.append(f"rel_l2 (central 80%): {rel_l2:.6f}")
        summary.append(f"rel_linf (central 80%): {rel_linf:.6f}")
    else:
        lines.append("x,theta_hat")
        lines += [f"{fmt(a)},{fmt(b)}" for a, b in zip(x, theta_hat)]
    (out / "plotdata.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / "summary.txt").write_text("\n".join(summary) + "\n", encoding="utf-8")
    _say(args, "\n".join(summary))
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "solve": cmd_solve,
    "validate": cmd_validate,
    "report": cmd_report,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--out", help="run directory (overrides config 'output')")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--quiet", action="store_true")
    parser = _Parser(prog="ivintegral", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("simulate", parents=[common], help="draw samples.csv from the scenario")
    p = sub.add_parser("estimate", parents=[common], help="write kernel.csv and rhs.csv")
    p.add_argument("--samples", help="z,x,y CSV (default: <out>/samples.csv, else simulate)")
    p = sub.add_parser("solve", parents=[common], help="write theta.csv and solution.json")
    p.add_argument("--kernel", help="kernel CSV (default: <out>/kernel.csv)")
    p.add_argument("--rhs", help="rhs CSV (default: <out>/rhs.csv)")
    sub.add_parser("validate", parents=[common], help="run checks, write report.json")
    sub.add_parser("report", parents=[common], help="write plotdata.csv and summary.txt")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed, args.out)
        return COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, ModelError, EstimationError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SolverError, CheckFailed) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
