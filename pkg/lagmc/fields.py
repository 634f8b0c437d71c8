"""
lagmc.fields — field dumps, JSON reports and run manifests.

Fields are written as CSV with columns rho_index, theta_index, x, y, value
(doubles in %.17g, so they read back bit-exactly) plus a JSON sidecar with
the grid metadata. All JSON is written with sorted keys so identical runs
produce identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Dict, Iterable, List

import numpy as np

from lagmc.discretization import MappedGrid, ScalarField

FIELD_COLUMNS = ("rho_index", "theta_index", "x", "y", "value")


def _fmt(value: float) -> str:
    return f"{value:.17g}"


def write_json(path: Path, payload) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def write_field(field: ScalarField, path: Path) -> List[Path]:
    """Write <path>.csv and its <path>.grid.json sidecar; returns both paths."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    grid = field.grid
    csv_path = path.with_suffix(".csv")
    with csv_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FIELD_COLUMNS)
        for k in range(grid.size):
            writer.writerow(
                [
                    int(grid.rho_index[k]),
                    int(grid.theta_index[k]),
                    _fmt(grid.nodes[k, 0]),
                    _fmt(grid.nodes[k, 1]),
                    _fmt(field.values[k]),
                ]
            )
    sidecar = write_json(path.with_suffix(".grid.json"), grid.metadata())
    return [csv_path, sidecar]


def read_field_values(path: Path, grid: MappedGrid) -> np.ndarray:
    """Read nodal values back from a field CSV written for `grid`.

    Raises:
        ValueError: if the file's node layout does not match the grid.
    """
    values = np.full(grid.size, np.nan)
    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != FIELD_COLUMNS:
            raise ValueError(f"unexpected field columns {reader.fieldnames}")
        for row in reader:
            i, j = int(row["rho_index"]), int(row["theta_index"])
            if not (0 <= i < grid.n_rho and 0 <= j < grid.n_theta):
                raise ValueError(
                    f"node ({i}, {j}) in {path} does not match a {grid.n_rho}x{grid.n_theta} grid"
                )
            node = grid.node(i, j)
            values[node] = float(row["value"])
    if np.isnan(values).any():
        raise ValueError(f"field file {path} does not cover all {grid.size} grid nodes")
    return values


def write_path_csv(path: Path, header: Iterable[str], rows: Iterable[Iterable]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([_fmt(v) if isinstance(v, float) else v for v in row])
    return path


def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir: Path, command: str, files: Iterable[Path], config: dict) -> Path:
    """List every output file with its SHA-256 so a run can be checked for completeness."""
    out_dir = Path(out_dir)
    entries: Dict[str, str] = {}
    for f in files:
        f = Path(f)
        entries[f.relative_to(out_dir).as_posix()] = file_digest(f)
    return write_json(
        out_dir / "manifest.json", {"command": command, "config": config, "files": entries}
    )
