#!/usr/bin/env python3
"""
bench_solver.py
===============
Benchmarks for the discretisation and continuation solver.

Tests: stencil assembly time per grid size, the ball-to-ball solve (exact
solution known) and a small affine forcing that exercises the full path.
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

    from lagmc.discretization import build_grid, mean_value
    from lagmc.geometry import make_disk
    from lagmc.operators import OperatorParams
    from lagmc.solver import RightHandSide, build_problem, continuity_solve

    _LAGMC_AVAILABLE = True
except ImportError as _e:
    _LAGMC_AVAILABLE = False
    _LAGMC_IMPORT_ERROR = str(_e)


_GRIDS = [(16, 32), (32, 64), (48, 96)]


# ---------------------------------------------------------------------------
# Benchmark helpers
# ---------------------------------------------------------------------------


def bench_grid_build(n_rho: int, n_theta: int) -> dict:
    """Time stencil assembly on the unit disk."""
    disk = make_disk((0.0, 0.0), 1.0)
    t0 = time.perf_counter()
    grid = build_grid(disk, n_rho, n_theta)
    elapsed = time.perf_counter() - t0
    return {"nodes": grid.size, "elapsed_s": round(elapsed, 6)}


def _ball_problem(n_rho: int, n_theta: int, f=None):
    return build_problem(
        OperatorParams(tau=math.pi / 2),
        make_disk((0.0, 0.0), 1.0),
        make_disk((0.0, 0.0), 2.0),
        f=f,
        n_rho=n_rho,
        n_theta=n_theta,
    )


def bench_ball_solve(n_rho: int, n_theta: int) -> dict:
    """Solve the disk-to-disk problem and report the error against |x|^2."""
    problem = _ball_problem(n_rho, n_theta)
    t0 = time.perf_counter()
    state = continuity_solve(problem)
    elapsed = time.perf_counter() - t0

    grid = problem.grid
    exact = np.sum(grid.nodes**2, axis=1)
    exact -= mean_value(grid, exact)
    return {
        "nodes": grid.size,
        "elapsed_s": round(elapsed, 6),
        "newton_iters": state.newton_iters,
        "u_err": float(np.abs(state.u.values - exact).max()),
        "c_err": abs(state.c - 2 * math.atan(2.0)),
    }


def bench_affine_solve(n_rho: int, n_theta: int, kappa: float = 0.05) -> dict:
    problem = _ball_problem(n_rho, n_theta, f=RightHandSide.affine((kappa, 0.0)))
    t0 = time.perf_counter()
    state = continuity_solve(problem)
    elapsed = time.perf_counter() - t0
    return {
        "nodes": problem.grid.size,
        "elapsed_s": round(elapsed, 6),
        "path_steps": len(state.path),
        "newton_iters": sum(entry.get("newton_iters", 0) for entry in state.path),
        "residual": state.residual_max,
        "c": state.c,
    }


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def run(verbose: bool = False) -> list[dict]:
    """Run all solver benchmarks. Returns list of result dicts."""
    results = []

    if not _LAGMC_AVAILABLE:
        results.append(
            {"benchmark": "import_error", "error": f"Could not import lagmc: {_LAGMC_IMPORT_ERROR}"}
        )
        if verbose:
            print(f"  [ERROR] Could not import lagmc: {_LAGMC_IMPORT_ERROR}")
        return results

    for n_rho, n_theta in _GRIDS:
        gb = bench_grid_build(n_rho, n_theta)
        results.append(
            {
                "benchmark": f"grid_build_{n_rho}x{n_theta}",
                "label": f"Stencils for {gb['nodes']} nodes",
                "elapsed_s": gb["elapsed_s"],
                "detail": gb,
            }
        )
        if verbose:
            print(f"  [grid_build_{n_rho}x{n_theta}] {gb['elapsed_s'] * 1000:.2f}ms")

    for n_rho, n_theta in _GRIDS[:2]:
        bs = bench_ball_solve(n_rho, n_theta)
        entry = {
            "benchmark": f"ball_solve_{n_rho}x{n_theta}",
            "label": "Disk to disk, exact solution",
            "elapsed_s": bs["elapsed_s"],
            "detail": bs,
        }
        if bs["u_err"] > 1e-8 or bs["c_err"] > 1e-8:
            entry["error"] = f"u_err={bs['u_err']:.2e} c_err={bs['c_err']:.2e}"
        results.append(entry)
        if verbose:
            print(
                f"  [ball_solve_{n_rho}x{n_theta}] {bs['elapsed_s'] * 1000:.1f}ms | "
                f"u_err={bs['u_err']:.2e}"
            )

    n_rho, n_theta = _GRIDS[1]
    af = bench_affine_solve(n_rho, n_theta)
    results.append(
        {
            "benchmark": f"affine_solve_{n_rho}x{n_theta}",
            "label": f"Affine forcing, {af['path_steps']} path points",
            "elapsed_s": af["elapsed_s"],
            "detail": af,
        }
    )
    if verbose:
        print(
            f"  [affine_solve] {af['elapsed_s'] * 1000:.1f}ms | steps={af['path_steps']} | "
            f"residual={af['residual']:.2e}"
        )

    return results


if __name__ == "__main__":
    for r in run(verbose=True):
        print(r)
