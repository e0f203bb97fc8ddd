"""Command-line front end: ``targetzone {solve,simulate,evaluate,verify,dump-config}``.

Exit status: 0 success, 2 configuration error, 3 solver failure, 4 a verify
check failed.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .bvp import SolverError, continuation_solve
from .config import (
    ALL_KEYS,
    ConfigError,
    RunConfig,
    build_run_config,
    dump_config,
    load_config_file,
    merge_layers,
)
from .policy import PolicyFn, control_sign_band, fit_blowup_rate, write_value_table
from .simulator import (
    COST_HEADER,
    breach_stats,
    estimate_cost,
    format_cost_line,
    simulate_path,
    write_breach_csv,
    write_path_csv,
)
from .verify import CHECKS, Context, run_checks

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_VERIFY = 0, 2, 3, 4

log = logging.getLogger("targetzone")

_ALIASES = {"horizon_T": ["--T"], "n_paths": ["--paths"], "lambda": ["--lam"]}


def _add_common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", type=Path, help="flat 'key = value' file")
    sp.add_argument("--preset", choices=("fig2", "fig3"))
    sp.add_argument("--output", dest="output_dir", help="output directory (default: out)")
    sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    sp.add_argument("-q", "--quiet", action="store_true", help="only print warnings and errors")
    keys = sp.add_argument_group("config key overrides")
    for key in ALL_KEYS:
        if key in ("preset", "output_dir"):
            continue
        flags = ["--" + key.replace("_", "-")] + _ALIASES.get(key, [])
        keys.add_argument(*flags, dest="key_" + key, metavar="VALUE")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="targetzone", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sp = sub.add_parser("solve", help="solve for U and write value_function.csv")
    _add_common(sp)
    for name, text in (("simulate", "simulate controlled paths"), ("evaluate", "Monte Carlo cost estimate")):
        sp = sub.add_parser(name, help=text)
        _add_common(sp)
        sp.add_argument("--force-zero-control", action="store_true", help="test hook: use u = 0")
    sp = sub.add_parser("verify", help="run the invariant suite")
    _add_common(sp)
    sp.add_argument("--check", action="append", choices=sorted(CHECKS), help="run only these checks")
    sp.add_argument("--tighten", type=float, default=1.0, help="divide residual thresholds by this factor")
    sp = sub.add_parser("dump-config", help="print the effective configuration")
    _add_common(sp)
    return parser


def _flag_values(args) -> dict[str, str]:
    out: dict[str, str] = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = (s.strip() for s in item.split("=", 1))
        if k not in ALL_KEYS:
            raise ConfigError(f"unknown key {k!r}", k)
        out[k] = v
    for key in ALL_KEYS:
        v = getattr(args, "key_" + key, None)
        if v is not None:
            out[key] = v
    if args.output_dir is not None:
        out["output_dir"] = args.output_dir
    return out


def resolve_config(args) -> RunConfig:
    file_values = load_config_file(args.config) if args.config else {}
    return build_run_config(merge_layers(args.preset, file_values, _flag_values(args)))


def _outdir(rc: RunConfig) -> Path:
    rc.output_dir.mkdir(parents=True, exist_ok=True)
    return rc.output_dir


def _solve(rc: RunConfig) -> PolicyFn:
    sol = continuation_solve(rc.params, rc.distance, rc.solver)
    return PolicyFn(sol, rc.distance, rc.params)


def solver_report(pf: PolicyFn) -> str:
    s = pf.solution
    lines = [
        f"grid nodes: {s.grid.n}",
        f"target epsilon: {s.epsilon_used:g}",
        f"residual (max-norm): {s.residual_norm:.3e} (tolerance {s.tolerance_used:.3e})",
        f"Newton iterations: {s.newton_iterations}",
    ]
    for st in s.stages:
        lines.append(f"  epsilon={st.epsilon:g}: {st.newton_iterations} iterations, residual {st.residual_norm:.3e}")
    c = pf.params.blowup_coefficient
    lines.append(f"boundary value U(beta-+) = 2 s^2 eta / g^2 = {c:.17g}")
    for side in ("lower", "upper"):
        try:
            coef, dev = fit_blowup_rate(pf, side)
            lines.append(f"blow-up fit {side}: ratio {coef:.6g} at eps=1e-3, max deviation {dev:.3%}")
        except ValueError as exc:
            lines.append(f"blow-up fit {side}: unavailable ({exc})")
    lines.append(f"inward control band: lower {control_sign_band(pf, 'lower'):.4g}, "
                 f"upper {control_sign_band(pf, 'upper'):.4g}")
    return "\n".join(lines) + "\n"


def cmd_solve(rc: RunConfig) -> PolicyFn:
    out = _outdir(rc)
    pf = _solve(rc)
    write_value_table(pf, out / "value_function.csv")
    report = solver_report(pf)
    (out / "solver_report.txt").write_text(report, encoding="utf-8")
    print(report, end="")
    return pf


def _policy_for_sim(rc: RunConfig) -> PolicyFn:
    if not (rc.output_dir / "value_function.csv").exists():
        return cmd_solve(rc)
    return _solve(rc)


def cmd_simulate(rc: RunConfig, force_zero: bool = False) -> None:
    pf = _policy_for_sim(rc)
    extra = {"force_control": 0.0} if force_zero else {}
    cfg = rc.sim_config("simulate", **extra)
    out = _outdir(rc)
    records = []
    for i in range(cfg.n_paths):
        rec = simulate_path(rc.params, pf, cfg, i)
        write_path_csv(rec, out / f"path_{i}.csv")
        records.append(rec)
    summary = breach_stats(rc.params, records)
    write_breach_csv(summary, records, out / "breach_summary.csv")
    print(f"{len(records)} path(s), {summary.total_steps} steps, {summary.total_clamp_events} clamp events "
          f"(fraction {summary.clamp_fraction:.3g}), exited {summary.exited_paths}")


def cmd_evaluate(rc: RunConfig, force_zero: bool = False) -> None:
    pf = _policy_for_sim(rc)
    extra = {"force_control": 0.0} if force_zero else {}
    cfg = rc.sim_config("evaluate", **extra)
    if cfg.n_paths < 2:
        raise ConfigError("n_paths must be ≥ 2 for stderr", "n_paths")
    est = estimate_cost(rc.params, pf, cfg)
    line = format_cost_line(est, pf.value_at(cfg.x_start))
    (_outdir(rc) / "cost_estimate.csv").write_text(COST_HEADER + "\n" + line + "\n", encoding="utf-8")
    print(COST_HEADER)
    print(line)
    if est.clamp_events:
        log.warning("%d clamp events during the estimate", est.clamp_events)


def cmd_verify(rc: RunConfig, checks=None, tighten: float = 1.0) -> bool:
    x0 = float(rc.values["x_start"]) if "x_start" in rc.values else None
    ctx = Context(rc.params, rc.distance, rc.anchor, rc.solver, rc.preset, x0, tighten=tighten)
    results = run_checks(ctx, checks)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return not failed


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "verify" and not args.tighten > 0:
            raise ConfigError("--tighten must be positive")
        if args.command == "dump-config":
            file_values = load_config_file(args.config) if args.config else {}
            values = merge_layers(args.preset, file_values, _flag_values(args))
            build_run_config(values)
            print(dump_config(values), end="")
            return EXIT_OK
        rc = resolve_config(args)
        if args.command == "solve":
            cmd_solve(rc)
        elif args.command == "simulate":
            cmd_simulate(rc, args.force_zero_control)
        elif args.command == "evaluate":
            cmd_evaluate(rc, args.force_zero_control)
        elif args.command == "verify":
            return EXIT_OK if cmd_verify(rc, args.check, args.tighten) else EXIT_VERIFY
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
