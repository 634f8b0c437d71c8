"""
lagmc CLI — entry point for the lagmc package.

Usage:
    lagmc solve --config run.yaml [--out DIR] [--seed N]
    lagmc verify-operator --config run.yaml
    lagmc dual-check --config run.yaml
    lagmc sweep-tau --config run.yaml [--tau-list "pi/8,pi/4,3*pi/8,pi/2"]
    lagmc refine-study --config run.yaml [--levels 3]
    lagmc version

Exit codes:
    0   success
    1   certificate or identity failure, or f rejected as inadmissible
    2   continuation path failure or convexity breakdown
    64  config error
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional

from lagmc import __version__
from lagmc import operators as ops
from lagmc.config import RunConfig, load_config, parse_tau_list
from lagmc.diagnostics import (
    DUALITY_H2_FACTOR,
    build_report,
    check_duality,
    check_mean_curvature,
    check_obliqueness,
    check_pinching,
    check_uniqueness,
    jsonable,
    operator_suite,
    refinement_deltas,
    two_level_deltas,
    verify_structure_conditions,
)
from lagmc.errors import (
    AdmissibilityError,
    ConfigError,
    ContinuationFailure,
    ConvexityBreakdown,
    OperatorDomainError,
)
from lagmc.fields import write_field, write_json, write_manifest, write_path_csv
from lagmc.solver import ROUNDING_SLACK, continuity_solve, solve_dual

logger = logging.getLogger("lagmc.cli")

EXIT_OK = 0
EXIT_CERTIFICATE = 1
EXIT_PATH_FAILURE = 2
EXIT_CONFIG = 64

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(message)s"


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _configure_logging(args: argparse.Namespace) -> None:
    if getattr(args, "verbose", False):
        level = logging.DEBUG
    elif getattr(args, "quiet", False):
        level = logging.WARNING
    else:
        level = getattr(logging, os.environ.get("LAGMC_LOG_LEVEL", "INFO").upper(), logging.INFO)
    logging.basicConfig(level=level, format=LOG_FORMAT)
    logging.getLogger("lagmc").setLevel(level)


def _attach_file_log(out_dir: Path) -> logging.Handler:
    out_dir.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out_dir / "lagmc.log", mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logging.getLogger("lagmc").addHandler(handler)
    return handler


def _load(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config)
    overrides = {}
    if getattr(args, "out", None):
        overrides["output_dir"] = Path(args.out)
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def _thread_cap() -> int:
    raw = os.environ.get("LAGMC_THREADS", "")
    try:
        value = int(raw)
    except ValueError:
        return os.cpu_count() or 1
    return max(1, value)


def _check(label: str, passed: bool, detail: str = "") -> bool:
    """Print a single check line."""
    status = "OK  " if passed else "FAIL"
    detail_str = f"  ({detail})" if detail else ""
    marker = "+" if passed else "-"
    print(f"  [{marker}] {status}  {label}{detail_str}")
    return passed


def _print_state(label: str, state) -> None:
    print(f"{label}: c = {state.c:.15g}  (t = {state.t:g}, {state.newton_iters} Newton iterations)")
    print(
        f"  residuals: interior {state.residual_interior:.3e}  boundary "
        f"{state.residual_boundary:.3e}  mean {state.residual_mean:.3e}"
    )
    print(f"  min Hessian eigenvalue: {state.min_hessian_eig:.6g}")


def _structure(cfg: RunConfig, tau: Optional[float] = None):
    params = cfg.operator_params(tau)
    return [
        verify_structure_conditions(params, s1, s2, cfg.structure_samples, cfg.seed)
        for s1, s2 in cfg.s_pairs
    ]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_solve(args: argparse.Namespace) -> int:
    cfg = _load(args)
    out = cfg.output_dir
    handler = _attach_file_log(out)
    try:
        problem = cfg.problem()
        logger.info(
            f"solve: tau={cfg.tau:.12g} theta0={problem.theta0:.12g} "
            f"grid={cfg.n_rho}x{cfg.n_theta} |kappa|={problem.kappa_norm:.4g}"
        )
        state = continuity_solve(problem)
        _print_state("primal", state)

        dual_state = None
        if cfg.run_dual:
            try:
                dual_state = solve_dual(problem, state)
                _print_state("dual", dual_state)
            except ContinuationFailure as exc:
                logger.warning(f"dual solve failed, duality certificates skipped: {exc}")
        uniqueness = check_uniqueness(problem, first=state) if cfg.run_uniqueness else None
        structure = _structure(cfg) if cfg.run_structure else None
        refinement = two_level_deltas(problem, state) if cfg.run_refinement else None
        report = build_report(
            state, problem, dual_state, uniqueness, structure, seed=cfg.seed, refinement=refinement
        )

        files = write_field(state.u, out / "u")
        if dual_state is not None:
            files += write_field(dual_state.u, out / "u_dual")
        log = {"primal": state.path, "dual": dual_state.path if dual_state else None}
        files.append(write_json(out / "solve_log.json", jsonable(log)))
        files.append(write_json(out / "report.json", report.to_dict()))
        write_manifest(out, "solve", files, cfg.to_dict())

        tol = problem.tolerances
        failures = report.hard_failures(ROUNDING_SLACK * tol.residual_tol, tol.eps_pos)
        print(f"  obliqueness_min: {report.obliqueness_min:.6g}")
        print(
            f"  mass_err: {report.mass_err:.3e}  "
            f"mean_curvature_err: {report.mean_curvature_err:.3e}"
        )
        for failure in failures:
            _check(failure, False)
        print(f"Outputs written to {out}")
        return EXIT_CERTIFICATE if failures else EXIT_OK
    finally:
        logging.getLogger("lagmc").removeHandler(handler)
        handler.close()


def cmd_verify_operator(args: argparse.Namespace) -> int:
    cfg = _load(args)
    try:
        params = cfg.operator_params()
        low, high = ops.limits(params)
    except OperatorDomainError as exc:
        raise ConfigError(str(exc), key="operator.tau") from exc

    print(
        f"Operator tau = {params.tau:.15g}  branch = {params.branch.value}  "
        f"(a={params.a:.6g}, b={params.b:.6g})"
    )
    print(f"  F(0,0) = {low:.15g}   F(inf,inf) = {high:.15g}")
    checks = operator_suite(params, seed=cfg.seed)
    all_ok = True
    failed = []
    for check in checks:
        ok = _check(check.name, check.passed, f"worst {check.worst:.3e}, tol {check.tolerance:g}")
        if not ok:
            failed.append(dataclasses.asdict(check))
        all_ok &= ok

    structure = _structure(cfg)
    for margins in structure:
        bounds = ops.range_bounds(params, margins.s1, margins.s2)
        print(
            f"  (s1, s2) = ({margins.s1:g}, {margins.s2:g}): "
            f"sum F' in [{bounds.grad_interval[0]:.6g}, {bounds.grad_interval[1]:.6g}], "
            f"sum F' lam^2 in [{bounds.weighted_interval[0]:.6g}, "
            f"{bounds.weighted_interval[1]:.6g}], "
            f"Lambda = [{bounds.lambda1:.6g}, {bounds.lambda2:.6g}]"
        )
        ok = _check(
            f"structure conditions on {margins.samples} samples",
            margins.passed,
            f"slack {margins.slack:.3e}",
        )
        if not ok:
            failed.append(dataclasses.asdict(margins))
        all_ok &= ok

    if args.out:
        write_json(
            Path(args.out) / "operator_report.json",
            jsonable(
                {
                    "tau": params.tau,
                    "branch": params.branch.value,
                    "limits": [low, high],
                    "checks": [dataclasses.asdict(c) for c in checks],
                    "structure": [dataclasses.asdict(m) for m in structure],
                }
            ),
        )
    if failed:
        print(json.dumps(jsonable(failed), indent=2, sort_keys=True))
    return EXIT_OK if all_ok else EXIT_CERTIFICATE


def cmd_dual_check(args: argparse.Namespace) -> int:
    cfg = _load(args)
    out = cfg.output_dir
    handler = _attach_file_log(out)
    try:
        problem = cfg.problem()
        state = continuity_solve(problem)
        dual_state = solve_dual(problem, state)
        record = check_duality(state, dual_state, problem, seed=cfg.seed)
        print(f"c (primal) = {state.c:.15g}")
        print(f"c (dual)   = {dual_state.c:.15g}")
        ok = _check(
            "constants agree", record.c_dual_err <= cfg.c_dual_tol, f"{record.c_dual_err:.3e}"
        )
        bound = DUALITY_H2_FACTOR * record.spacing**2
        ok &= _check(
            "gradient round trip",
            record.roundtrip_passed,
            f"max |D~u(Du(x)) - x| = {record.roundtrip_err:.3e}, tol {bound:.3e}",
        )
        ok &= _check(
            "Hessian reciprocity",
            record.reciprocity_passed,
            f"{record.reciprocity_err:.3e}, tol {bound:.3e}",
        )
        files = [write_json(out / "duality.json", jsonable(dataclasses.asdict(record)))]
        write_manifest(out, "dual-check", files, cfg.to_dict())
        return EXIT_OK if ok else EXIT_CERTIFICATE
    finally:
        logging.getLogger("lagmc").removeHandler(handler)
        handler.close()


def _dedupe(taus: List[float]) -> List[float]:
    seen: List[float] = []
    for tau in taus:
        if any(abs(tau - s) <= 1e-12 for s in seen):
            logger.warning(f"duplicate tau {tau:.12g} dropped from sweep")
            continue
        seen.append(tau)
    return seen


def _sweep_one(cfg: RunConfig, tau: float) -> dict:
    row = {
        "tau": tau,
        "c": None,
        "obliqueness_min": None,
        "mass_err": None,
        "mean_curvature_err": None,
    }
    try:
        problem = cfg.problem(tau)
        state = continuity_solve(problem)
    except (ContinuationFailure, ConvexityBreakdown) as exc:
        logger.warning(f"sweep tau={tau:.6g}: {exc}")
        row["status"] = "path_failure"
        return row
    except AdmissibilityError as exc:
        logger.warning(f"sweep tau={tau:.6g}: {exc}")
        row["status"] = "rejected"
        return row
    oblique = check_obliqueness(state, problem)
    row.update(
        c=state.c,
        obliqueness_min=oblique.minimum,
        mass_err=check_pinching(state, problem).mass_err,
        mean_curvature_err=check_mean_curvature(state, problem).error,
        status="ok" if oblique.passed else "certificate_failure",
    )
    return row


def cmd_sweep_tau(args: argparse.Namespace) -> int:
    cfg = _load(args)
    taus = parse_tau_list(args.tau_list) if args.tau_list else list(cfg.tau_list)
    if not taus:
        raise ConfigError("tau list is empty", key="sweep.tau_list")
    taus = _dedupe(taus)
    out = cfg.output_dir
    handler = _attach_file_log(out)
    try:
        workers = min(len(taus), _thread_cap())
        logger.info(f"sweep: {len(taus)} tau values on {workers} thread(s)")
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda tau: _sweep_one(cfg, tau), taus))

        header = ("tau", "c", "obliqueness_min", "mass_err", "mean_curvature_err", "status")
        print(f"  {'tau':>10}  {'c':>20}  {'obliq':>9}  {'mass_err':>9}  {'mc_err':>9}  status")
        for row in rows:
            cells = [row[h] for h in header[1:5]]
            text = "  ".join(f"{v:>9.3e}" if v is not None else f"{'-':>9}" for v in cells[1:])
            c = f"{cells[0]:>20.15g}" if cells[0] is not None else f"{'-':>20}"
            print(f"  {row['tau']:>10.6f}  {c}  {text}  {row['status']}")
        csv_rows = ([row[h] if row[h] is not None else "" for h in header] for row in rows)
        csv_path = write_path_csv(out / "sweep.csv", header, csv_rows)
        write_manifest(out, "sweep-tau", [csv_path], cfg.to_dict())

        statuses = {row["status"] for row in rows}
        if "path_failure" in statuses:
            return EXIT_PATH_FAILURE
        if statuses - {"ok"}:
            return EXIT_CERTIFICATE
        return EXIT_OK
    finally:
        logging.getLogger("lagmc").removeHandler(handler)
        handler.close()


def cmd_refine_study(args: argparse.Namespace) -> int:
    cfg = _load(args)
    levels = args.levels if args.levels is not None else cfg.levels
    if levels < 3:
        raise ConfigError(f"need >= 3 levels for a refinement study, got {levels}", key="--levels")
    out = cfg.output_dir
    handler = _attach_file_log(out)
    try:
        study = refinement_deltas(cfg.problem(), levels)
        print(f"  {'grid':>10}  {'h':>9}  {'u_error':>10}  {'mass_err':>10}  {'mc_err':>10}")
        for row in study["levels"]:
            grid = f"{row['n_rho']}x{row['n_theta']}"
            print(
                f"  {grid:>10}  {row['spacing']:>9.3e}  {row['u_error']:>10.3e}  "
                f"{row['mass_err']:>10.3e}  {row['mean_curvature_err']:>10.3e}"
            )
        if study["exact_at_all_levels"]:
            print("  u error is at rounding level on every grid (exact at all levels)")
        else:
            print(f"  observed u orders ({study['reference']}): {study['u_order']}")
        print(f"  mass_err orders: {study['mass_err_order']}")
        print(f"  mean_curvature_err orders: {study['mean_curvature_order']}")
        files = [write_json(out / "refinement.json", study)]
        write_manifest(out, "refine-study", files, cfg.to_dict())
        return EXIT_OK
    finally:
        logging.getLogger("lagmc").removeHandler(handler)
        handler.close()


def cmd_version(args: argparse.Namespace) -> int:
    print(f"lagmc  {__version__}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parser
# ---------------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, metavar="<path>", help="YAML run config.")
    parser.add_argument(
        "--out", metavar="<dir>", help="Output directory (overrides output.directory)."
    )
    parser.add_argument("--seed", type=int, metavar="<u64>", help="Seed for sampling-based checks.")
    noise = parser.add_mutually_exclusive_group()
    noise.add_argument("--verbose", "-v", action="store_true", help="Log every Newton iteration.")
    noise.add_argument("--quiet", "-q", action="store_true", help="Only log warnings and errors.")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lagmc",
        description="Solve and certify the second boundary value problem for F_tau[D^2u] = f + c.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=(
            "Examples:\n"
            "  lagmc solve --config configs/ball_to_ball.yaml\n"
            "  lagmc verify-operator --config configs/ball_to_ball.yaml\n"
            "  lagmc sweep-tau --config configs/sweep.yaml --tau-list 'pi/8,pi/4,pi/2'\n"
            "  lagmc refine-study --config configs/ball_to_ball.yaml --levels 3\n"
        ),
    )
    parser.add_argument("--version", "-V", action="version", version=f"lagmc {__version__}")

    sub = parser.add_subparsers(dest="command", metavar="<command>")
    sub.required = True

    _add_common(sub.add_parser("solve", help="Continuation solve plus the diagnostics report."))
    _add_common(
        sub.add_parser("verify-operator", help="Operator identity suite and structure conditions.")
    )
    _add_common(
        sub.add_parser("dual-check", help="Primal and dual solves with the duality certificate.")
    )

    sweep = sub.add_parser("sweep-tau", help="Independent solves over a list of tau values.")
    _add_common(sweep)
    sweep.add_argument(
        "--tau-list", metavar="<angles>", help="Comma-separated angles, e.g. 'pi/8,pi/4,0.9'."
    )

    refine = sub.add_parser(
        "refine-study", help="Solves at doubling resolutions with observed orders."
    )
    _add_common(refine)
    refine.add_argument("--levels", type=int, metavar="<n>", help="Number of resolutions (>= 3).")

    sub.add_parser("version", help="Show lagmc version.")
    return parser


def main(argv: list[str] | None = None) -> None:
    parser = _build_parser()
    args = parser.parse_args(argv)

    dispatch = {
        "solve": cmd_solve,
        "verify-operator": cmd_verify_operator,
        "dual-check": cmd_dual_check,
        "sweep-tau": cmd_sweep_tau,
        "refine-study": cmd_refine_study,
        "version": cmd_version,
    }
    handler = dispatch.get(args.command)
    if handler is None:
        parser.print_help()
        sys.exit(EXIT_CONFIG)

    _configure_logging(args)
    try:
        code = handler(args)
    except ConfigError as exc:
        print(f"Config error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    except AdmissibilityError as exc:
        print(f"Rejected: {exc}", file=sys.stderr)
        code = EXIT_CERTIFICATE
    except ContinuationFailure as exc:
        last = "none" if exc.last_good_t is None else f"{exc.last_good_t:.6g}"
        print(f"Path failure: {exc} (last good t: {last})", file=sys.stderr)
        code = EXIT_PATH_FAILURE
    except ConvexityBreakdown as exc:
        print(f"Convexity breakdown: {exc}", file=sys.stderr)
        code = EXIT_PATH_FAILURE
    sys.exit(code)


if __name__ == "__main__":
    main()
