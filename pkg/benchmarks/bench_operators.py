#!/usr/bin/env python3
"""
bench_operators.py
==================
Benchmarks for the eigenvalue operators in lagmc.operators.

Tests: vectorised evaluation throughput per branch, gradient/Hessian cost,
structure-condition sampling time and the full operator verification suite.
"""

from __future__ import annotations

import math
import sys
import time
from pathlib import Path

_BENCH_DIR = Path(__file__).parent
_PROJECT_ROOT = _BENCH_DIR.parent
if str(_PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(_PROJECT_ROOT))

try:
    import numpy as np

    from lagmc import diagnostics as diag
    from lagmc import operators as ops

    _LAGMC_AVAILABLE = True
except ImportError as _e:
    _LAGMC_AVAILABLE = False
    _LAGMC_IMPORT_ERROR = str(_e)


# One tau per branch: log-quotient, harmonic, arctan-quotient, arctan
_TAUS = {
    "log_quotient": math.pi / 8,
    "harmonic": math.pi / 4,
    "arctan_quotient": 3 * math.pi / 8,
    "arctan": math.pi / 2,
}

_POINTS = 100_000


# ---------------------------------------------------------------------------
# Benchmark helpers
# ---------------------------------------------------------------------------


def _sample_points(count: int, seed: int = 0) -> "np.ndarray":
    return ops.sample_truncated_cone(0.25, 4.0, 2, count, seed)


def bench_eval_throughput(params: "ops.OperatorParams", pts: "np.ndarray") -> dict:
    """Evaluate F, its gradient and diagonal Hessian over a batch of spectra."""
    t0 = time.perf_counter()
    ops.eval_F(params, pts)
    t_eval = time.perf_counter() - t0

    t0 = time.perf_counter()
    ops.grad_F(params, pts)
    ops.hess_F_diag(params, pts)
    t_derivs = time.perf_counter() - t0

    count = len(pts)
    return {
        "points": count,
        "elapsed_s": round(t_eval, 6),
        "ops_per_s": round(count / t_eval) if t_eval > 0 else 0,
        "derivs_elapsed_s": round(t_derivs, 6),
    }


def bench_structure(params: "ops.OperatorParams", samples: int) -> dict:
    t0 = time.perf_counter()
    margins = diag.verify_structure_conditions(params, 0.5, 2.0, samples=samples)
    elapsed = time.perf_counter() - t0
    return {
        "samples": samples,
        "elapsed_s": round(elapsed, 6),
        "per_call_us": round(elapsed / samples * 1e6, 3),
        "passed": margins.passed,
        "slack": margins.slack,
    }


def bench_suite(params: "ops.OperatorParams", samples: int) -> dict:
    t0 = time.perf_counter()
    checks = diag.operator_suite(params, samples=samples)
    elapsed = time.perf_counter() - t0
    failed = [c.name for c in checks if not c.passed]
    return {
        "checks": len(checks),
        "elapsed_s": round(elapsed, 6),
        "failed": failed,
    }


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def run(verbose: bool = False) -> list[dict]:
    """Run all operator benchmarks. Returns list of result dicts."""
    results = []

    if not _LAGMC_AVAILABLE:
        results.append(
            {"benchmark": "import_error", "error": f"Could not import lagmc: {_LAGMC_IMPORT_ERROR}"}
        )
        if verbose:
            print(f"  [ERROR] Could not import lagmc: {_LAGMC_IMPORT_ERROR}")
        return results

    pts = _sample_points(_POINTS)

    for branch, tau in _TAUS.items():
        params = ops.OperatorParams(tau=tau)
        tp = bench_eval_throughput(params, pts)
        results.append(
            {
                "benchmark": f"eval_{branch}",
                "label": f"F on {tp['points']:,} spectra",
                "elapsed_s": tp["elapsed_s"],
                "ops_per_s": tp["ops_per_s"],
                "detail": tp,
            }
        )
        if verbose:
            print(
                f"  [eval_{branch}] {tp['ops_per_s']:,} pts/s | "
                f"derivs={tp['derivs_elapsed_s'] * 1000:.2f}ms"
            )

    for branch, tau in _TAUS.items():
        params = ops.OperatorParams(tau=tau)
        st = bench_structure(params, samples=20_000)
        entry = {
            "benchmark": f"structure_{branch}",
            "label": f"Structure conditions x{st['samples']:,}",
            "elapsed_s": st["elapsed_s"],
            "per_call_us": st["per_call_us"],
            "detail": st,
        }
        if not st["passed"]:
            entry["error"] = f"structure conditions violated (slack={st['slack']:.3g})"
        results.append(entry)
        if verbose:
            print(
                f"  [structure_{branch}] {st['per_call_us']:.2f}us/sample | passed={st['passed']}"
            )

    suite = bench_suite(ops.OperatorParams(tau=_TAUS["arctan_quotient"]), samples=2000)
    entry = {
        "benchmark": "operator_suite",
        "label": f"{suite['checks']} operator checks",
        "elapsed_s": suite["elapsed_s"],
        "detail": suite,
    }
    if suite["failed"]:
        entry["error"] = "failed: " + ", ".join(suite["failed"])
    results.append(entry)
    if verbose:
        print(f"  [operator_suite] {suite['elapsed_s'] * 1000:.2f}ms | failed={suite['failed']}")

    return results


if __name__ == "__main__":
    for r in run(verbose=True):
        print(r)
