"""
lagmc.config — YAML run configs.

A run config is a YAML mapping of sections (operator, source, target, rhs,
grid, tolerances, homotopy, output, sweep, refine, structure, diagnostics)
plus a top-level seed. Keys are addressed by dotted path ("operator.tau",
"grid.n_rho") in every error message, together with the YAML line they came
from. Unknown keys are errors.

Usage:
    cfg = load_config("configs/ball_to_ball.yaml")
    problem = cfg.problem()
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import yaml

from lagmc.errors import ConfigError, GeometryError, OperatorDomainError
from lagmc.geometry import ConvexDomain, make_disk, make_ellipse, make_smooth_convex
from lagmc.operators import OperatorParams
from lagmc.solver import (
    HomotopyControls,
    ProblemSpec,
    RightHandSide,
    Tolerances,
    build_problem,
)

REQUIRED = object()

_DOMAIN_SECTION = {
    "kind": REQUIRED,
    "center": [0.0, 0.0],
    "radius": None,
    "semi_axes": None,
    "rotation": 0.0,
    "mean_radius": None,
    "harmonics": [],
    "concavity_boost": None,
}

# Defaults, one entry per dotted key; REQUIRED marks keys with no default.
DEFAULTS: Dict[str, Any] = {
    "operator": {"tau": REQUIRED, "experimental": False},
    "source": dict(_DOMAIN_SECTION),
    "target": dict(_DOMAIN_SECTION),
    "rhs": {"kind": "affine", "kappa": [0.0, 0.0], "curvature": 0.0, "anchor": [0.0, 0.0]},
    "grid": {"n_rho": 32, "n_theta": 64},
    "tolerances": {
        "residual_tol": Tolerances.residual_tol,
        "step_tol": Tolerances.step_tol,
        "eps_pos": Tolerances.eps_pos,
        "max_newton": Tolerances.max_newton,
    },
    "homotopy": {
        "initial_step": HomotopyControls.initial_step,
        "min_step": HomotopyControls.min_step,
        "max_steps": HomotopyControls.max_steps,
    },
    "output": {"directory": "runs/default"},
    "sweep": {"tau_list": []},
    "refine": {"levels": 3},
    "structure": {"samples": 10_000, "s_pairs": [[1.0, 1.0], [0.5, 2.0]]},
    "diagnostics": {
        "dual": True,
        "uniqueness": True,
        "structure": True,
        "refinement": True,
        "c_dual_tol": 1e-6,
    },
    "seed": 0,
}

REQUIRED_SECTIONS = ("operator", "source", "target")

_ANGLE = re.compile(r"^\s*(?:(\d+(?:\.\d*)?)\s*\*?\s*)?pi\s*(?:/\s*(\d+(?:\.\d*)?))?\s*$")


# ---------------------------------------------------------------------------
# Value coercion
# ---------------------------------------------------------------------------


class _Reader:
    """Typed access to the parsed mapping with line-addressed errors."""

    def __init__(self, data: dict, lines: Dict[str, int]):
        self.data = data
        self.lines = lines

    def line(self, key: str) -> Optional[int]:
        while key:
            if key in self.lines:
                return self.lines[key]
            key = key.rpartition(".")[0]
        return None

    def error(self, key: str, message: str) -> ConfigError:
        return ConfigError(message, key=key, line=self.line(key))

    def raw(self, key: str) -> Any:
        section, _, name = key.partition(".")
        default = DEFAULTS[section] if not name else DEFAULTS[section][name]
        if not name:
            value = self.data.get(section, default)
        else:
            value = (self.data.get(section) or {}).get(name, default)
        if value is REQUIRED:
            raise self.error(key, "required key is missing")
        return value

    def number(self, key: str, positive: bool = False) -> Optional[float]:
        value = self.raw(key)
        if value is None:
            return None
        out = self._to_float(key, value)
        if positive and not out > 0.0:
            raise self.error(key, f"must be positive, got {out}")
        return out

    def integer(self, key: str, minimum: Optional[int] = None) -> int:
        value = self.raw(key)
        out = self._to_float(key, value)
        if out != int(out):
            raise self.error(key, f"must be an integer, got {value!r}")
        if minimum is not None and out < minimum:
            raise self.error(key, f"must be >= {minimum}, got {int(out)}")
        return int(out)

    def boolean(self, key: str) -> bool:
        value = self.raw(key)
        if not isinstance(value, bool):
            raise self.error(key, f"must be true or false, got {value!r}")
        return value

    def vector(self, key: str, length: int = 2) -> Optional[Tuple[float, ...]]:
        value = self.raw(key)
        if value is None:
            return None
        if not isinstance(value, (list, tuple)) or len(value) != length:
            raise self.error(key, f"must be a list of {length} numbers, got {value!r}")
        return tuple(self._to_float(key, v) for v in value)

    def angle(self, key: str, value: Any = REQUIRED) -> float:
        if value is REQUIRED:
            value = self.raw(key)
        try:
            return parse_angle(value)
        except ValueError as exc:
            raise self.error(key, str(exc)) from None

    def _to_float(self, key: str, value: Any) -> float:
        # pyyaml reads "1e-9" (no dot) as a string
        if isinstance(value, bool):
            raise self.error(key, f"expected a number, got {value!r}")
        try:
            out = float(value)
        except (TypeError, ValueError):
            raise self.error(key, f"expected a number, got {value!r}") from None
        if not math.isfinite(out):
            raise self.error(key, f"must be finite, got {value!r}")
        return out


def parse_angle(value: Any) -> float:
    """Read an angle as a float or a rational multiple of pi ("pi/8", "3*pi/8", "pi/2")."""
    if isinstance(value, bool):
        raise ValueError(f"expected an angle, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        match = _ANGLE.match(value)
        if match:
            num = float(match.group(1)) if match.group(1) else 1.0
            den = float(match.group(2)) if match.group(2) else 1.0
            if den == 0.0:
                raise ValueError(f"angle {value!r} divides by zero")
            return num * math.pi / den
        try:
            return float(value)
        except ValueError:
            pass
    raise ValueError(f"expected an angle such as 0.785 or 'pi/4', got {value!r}")


def _key_lines(node, prefix: str = "") -> Dict[str, int]:
    lines: Dict[str, int] = {}
    if not isinstance(node, yaml.MappingNode):
        return lines
    for key_node, value_node in node.value:
        key = f"{prefix}{key_node.value}"
        lines[key] = key_node.start_mark.line + 1
        if not prefix:
            lines.update(_key_lines(value_node, f"{key}."))
    return lines


# ---------------------------------------------------------------------------
# Config objects
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DomainConfig:
    kind: str
    center: Tuple[float, float] = (0.0, 0.0)
    radius: Optional[float] = None
    semi_axes: Optional[Tuple[float, float]] = None
    rotation: float = 0.0
    mean_radius: Optional[float] = None
    harmonics: Tuple[Tuple[int, float, float], ...] = ()
    concavity_boost: Optional[float] = None

    def build(self) -> ConvexDomain:
        if self.kind == "disk":
            return make_disk(self.center, self.radius)
        if self.kind == "ellipse":
            return make_ellipse(self.center, self.semi_axes, self.rotation)
        return make_smooth_convex(self.mean_radius, self.harmonics, self.center)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "center": list(self.center)}
        if self.kind == "disk":
            out["radius"] = self.radius
        elif self.kind == "ellipse":
            out["semi_axes"] = list(self.semi_axes)
            out["rotation"] = self.rotation
        else:
            out["mean_radius"] = self.mean_radius
            out["harmonics"] = [list(h) for h in self.harmonics]
        if self.concavity_boost is not None:
            out["concavity_boost"] = self.concavity_boost
        return out


@dataclass(frozen=True)
class RunConfig:
    tau: float
    source: DomainConfig
    target: DomainConfig
    rhs: RightHandSide
    n_rho: int = 32
    n_theta: int = 64
    experimental: bool = False
    tolerances: Tolerances = field(default_factory=Tolerances)
    homotopy: HomotopyControls = field(default_factory=HomotopyControls)
    output_dir: Path = Path("runs/default")
    seed: int = 0
    tau_list: Tuple[float, ...] = ()
    levels: int = 3
    structure_samples: int = 10_000
    s_pairs: Tuple[Tuple[float, float], ...] = ((1.0, 1.0), (0.5, 2.0))
    run_dual: bool = True
    run_uniqueness: bool = True
    run_structure: bool = True
    run_refinement: bool = True
    c_dual_tol: float = 1e-6
    path: Optional[Path] = None

    def operator_params(self, tau: Optional[float] = None) -> OperatorParams:
        return OperatorParams(
            tau=self.tau if tau is None else tau, n=2, experimental=self.experimental
        )

    def problem(self, tau: Optional[float] = None) -> ProblemSpec:
        """Build the ProblemSpec; geometry and operator errors surface as ConfigError."""
        try:
            return build_problem(
                self.operator_params(tau),
                self.source.build(),
                self.target.build(),
                f=self.rhs,
                n_rho=self.n_rho,
                n_theta=self.n_theta,
                tolerances=self.tolerances,
                homotopy=self.homotopy,
                source_boost=self.source.concavity_boost,
                target_boost=self.target.concavity_boost,
            )
        except OperatorDomainError as exc:
            raise ConfigError(str(exc), key="operator.tau") from exc
        except GeometryError as exc:
            raise ConfigError(str(exc), key="source/target") from exc
        except ValueError as exc:
            raise ConfigError(str(exc), key="grid") from exc

    def to_dict(self) -> dict:
        """Normalized config, as recorded in run manifests."""
        return {
            "operator": {"tau": self.tau, "experimental": self.experimental},
            "source": self.source.to_dict(),
            "target": self.target.to_dict(),
            "rhs": self.rhs.to_dict(),
            "grid": {"n_rho": self.n_rho, "n_theta": self.n_theta},
            "tolerances": {
                "residual_tol": self.tolerances.residual_tol,
                "step_tol": self.tolerances.step_tol,
                "eps_pos": self.tolerances.eps_pos,
                "max_newton": self.tolerances.max_newton,
            },
            "homotopy": {
                "initial_step": self.homotopy.initial_step,
                "min_step": self.homotopy.min_step,
                "max_steps": self.homotopy.max_steps,
            },
            "seed": self.seed,
        }


def _domain(reader: _Reader, section: str) -> DomainConfig:
    kind = reader.raw(f"{section}.kind")
    if kind not in ("disk", "ellipse", "fourier"):
        raise reader.error(f"{section}.kind", f"must be disk, ellipse or fourier, got {kind!r}")
    center = reader.vector(f"{section}.center")
    boost = reader.number(f"{section}.concavity_boost")
    if kind == "disk":
        radius = reader.number(f"{section}.radius", positive=True)
        if radius is None:
            raise reader.error(f"{section}.radius", "required key is missing for a disk")
        return DomainConfig(kind, center, radius=radius, concavity_boost=boost)
    if kind == "ellipse":
        axes = reader.vector(f"{section}.semi_axes")
        if axes is None:
            raise reader.error(f"{section}.semi_axes", "required key is missing for an ellipse")
        rotation = reader.angle(f"{section}.rotation")
        return DomainConfig(kind, center, semi_axes=axes, rotation=rotation, concavity_boost=boost)
    mean_radius = reader.number(f"{section}.mean_radius", positive=True)
    if mean_radius is None:
        raise reader.error(f"{section}.mean_radius", "required key is missing for a fourier shape")
    raw = reader.raw(f"{section}.harmonics") or []
    if not isinstance(raw, list):
        raise reader.error(f"{section}.harmonics", "must be a list of [k, a_k, b_k] triples")
    harmonics = []
    for entry in raw:
        if not isinstance(entry, list) or len(entry) != 3:
            raise reader.error(
                f"{section}.harmonics", f"bad harmonic {entry!r}; expected [k, a_k, b_k]"
            )
        k, a_k, b_k = (reader._to_float(f"{section}.harmonics", v) for v in entry)
        harmonics.append((int(k), a_k, b_k))
    return DomainConfig(
        kind, center, mean_radius=mean_radius, harmonics=tuple(harmonics), concavity_boost=boost
    )


def _rhs(reader: _Reader) -> RightHandSide:
    kind = reader.raw("rhs.kind")
    kappa = reader.vector("rhs.kappa")
    if kind == "affine":
        return RightHandSide(kappa=kappa)
    if kind == "concave_quadratic":
        return RightHandSide(
            kappa=kappa,
            curvature=reader.number("rhs.curvature"),
            anchor=reader.vector("rhs.anchor"),
        )
    raise reader.error("rhs.kind", f"must be affine or concave_quadratic, got {kind!r}")


def parse_config(text: str, path: Optional[Path] = None) -> RunConfig:
    """Parse YAML text into a RunConfig.

    Raises:
        ConfigError: for YAML syntax errors, unknown or missing keys, and bad values.
    """
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(
            f"invalid YAML: {getattr(exc, 'problem', exc)}",
            key="<document>",
            line=mark.line + 1 if mark else None,
        ) from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping of sections", key="<document>", line=1)
    reader = _Reader(data, _key_lines(node))

    for section, value in data.items():
        if section not in DEFAULTS:
            raise reader.error(str(section), "unknown section")
        if isinstance(DEFAULTS[section], dict):
            if not isinstance(value, dict):
                raise reader.error(section, "must be a mapping")
            for key in value:
                if key not in DEFAULTS[section]:
                    raise reader.error(f"{section}.{key}", "unknown key")
    for section in REQUIRED_SECTIONS:
        if section not in data:
            raise reader.error(section, "required section is missing")

    tau = reader.angle("operator.tau")
    tau_list = reader.raw("sweep.tau_list")
    if not isinstance(tau_list, list):
        raise reader.error("sweep.tau_list", "must be a list of angles")

    pairs = reader.raw("structure.s_pairs")
    if not isinstance(pairs, list) or not all(isinstance(p, list) and len(p) == 2 for p in pairs):
        raise reader.error("structure.s_pairs", "must be a list of [s1, s2] pairs")

    return RunConfig(
        tau=tau,
        experimental=reader.boolean("operator.experimental"),
        source=_domain(reader, "source"),
        target=_domain(reader, "target"),
        rhs=_rhs(reader),
        n_rho=reader.integer("grid.n_rho", minimum=8),
        n_theta=reader.integer("grid.n_theta", minimum=16),
        tolerances=Tolerances(
            residual_tol=reader.number("tolerances.residual_tol", positive=True),
            step_tol=reader.number("tolerances.step_tol", positive=True),
            eps_pos=reader.number("tolerances.eps_pos", positive=True),
            max_newton=reader.integer("tolerances.max_newton", minimum=1),
        ),
        homotopy=HomotopyControls(
            initial_step=reader.number("homotopy.initial_step", positive=True),
            min_step=reader.number("homotopy.min_step", positive=True),
            max_steps=reader.integer("homotopy.max_steps", minimum=1),
        ),
        output_dir=Path(str(reader.raw("output.directory"))),
        seed=reader.integer("seed", minimum=0),
        tau_list=tuple(reader.angle("sweep.tau_list", v) for v in tau_list),
        levels=reader.integer("refine.levels", minimum=1),
        structure_samples=reader.integer("structure.samples", minimum=1),
        s_pairs=tuple(
            (reader._to_float("structure.s_pairs", a), reader._to_float("structure.s_pairs", b))
            for a, b in pairs
        ),
        run_dual=reader.boolean("diagnostics.dual"),
        run_uniqueness=reader.boolean("diagnostics.uniqueness"),
        run_structure=reader.boolean("diagnostics.structure"),
        run_refinement=reader.boolean("diagnostics.refinement"),
        c_dual_tol=reader.number("diagnostics.c_dual_tol", positive=True),
        path=path,
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}", key=str(path)) from None
    return parse_config(text, path)


def parse_tau_list(text: str) -> List[float]:
    """Comma-separated angles from the command line, e.g. "pi/8,pi/4,0.9"."""
    items = [item.strip() for item in text.split(",") if item.strip()]
    try:
        return [parse_angle(item) for item in items]
    except ValueError as exc:
        raise ConfigError(str(exc), key="--tau-list") from None
