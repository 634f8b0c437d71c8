"""Tests for lagmc.config: YAML parsing, defaults and line-addressed errors."""

import math
from pathlib import Path

import pytest

from lagmc.config import load_config, parse_angle, parse_config, parse_tau_list
from lagmc.errors import ConfigError

CONFIG_DIR = Path(__file__).parent.parent / "configs"

BALL = """\
operator:
  tau: pi/2
source:
  kind: disk
  radius: 1.0
target:
  kind: disk
  radius: 2.0
"""


def test_minimal_config_uses_defaults():
    cfg = parse_config(BALL)
    assert cfg.tau == pytest.approx(math.pi / 2)
    assert (cfg.n_rho, cfg.n_theta) == (32, 64)
    assert cfg.tolerances.residual_tol == 1e-9
    assert cfg.homotopy.initial_step == 0.25
    assert cfg.rhs.is_zero
    assert cfg.source.center == (0.0, 0.0)
    assert cfg.run_dual and cfg.run_uniqueness and cfg.run_structure and cfg.run_refinement


def test_refinement_block_can_be_switched_off():
    cfg = parse_config(BALL + "diagnostics:\n  refinement: false\n")
    assert not cfg.run_refinement
    assert cfg.run_dual


@pytest.mark.parametrize(
    "text, expected",
    [
        ("pi/8", math.pi / 8),
        ("3*pi/8", 3 * math.pi / 8),
        ("pi", math.pi),
        (" 2 pi / 5 ", 2 * math.pi / 5),
        (0.5, 0.5),
        ("0.25", 0.25),
    ],
)
def test_parse_angle(text, expected):
    assert parse_angle(text) == pytest.approx(expected)


@pytest.mark.parametrize("bad", ["tau", "pi/0", True, None])
def test_parse_angle_rejects(bad):
    with pytest.raises(ValueError):
        parse_angle(bad)


def test_missing_tau_reports_key_and_line():
    text = "source:\n  kind: disk\n  radius: 1.0\noperator:\n  experimental: false\n" + BALL[
        BALL.index("target:") :
    ]
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.key == "operator.tau"
    assert info.value.line == 4
    assert "'operator.tau' (line 4)" in str(info.value)


def test_unknown_key_is_an_error():
    with pytest.raises(ConfigError) as info:
        parse_config(BALL + "grid:\n  n_rho: 16\n  n_rhoo: 3\n")
    assert info.value.key == "grid.n_rhoo"
    assert info.value.line == 11


def test_unknown_section_is_an_error():
    with pytest.raises(ConfigError) as info:
        parse_config(BALL + "solver:\n  kind: fast\n")
    assert info.value.key == "solver"


def test_missing_section():
    with pytest.raises(ConfigError, match="required section"):
        parse_config("operator:\n  tau: 1.0\n")


def test_exponent_without_dot_is_read_as_number():
    cfg = parse_config(BALL + "tolerances:\n  residual_tol: 1e-10\n  eps_pos: 1e-7\n")
    assert cfg.tolerances.residual_tol == 1e-10
    assert cfg.tolerances.eps_pos == 1e-7


@pytest.mark.parametrize(
    "extra, key",
    [
        ("tolerances:\n  residual_tol: -1.0\n", "tolerances.residual_tol"),
        ("grid:\n  n_rho: 4\n", "grid.n_rho"),
        ("grid:\n  n_theta: 32.5\n", "grid.n_theta"),
        ("rhs:\n  kind: cubic\n", "rhs.kind"),
        ("rhs:\n  kappa: [1.0]\n", "rhs.kappa"),
        ("diagnostics:\n  dual: maybe\n", "diagnostics.dual"),
        ("seed: -3\n", "seed"),
    ],
)
def test_bad_values(extra, key):
    with pytest.raises(ConfigError) as info:
        parse_config(BALL + extra)
    assert info.value.key == key


def test_bad_domain_kind():
    text = BALL.replace("kind: disk\n  radius: 2.0", "kind: triangle")
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.key == "target.kind"


def test_disk_needs_radius():
    text = BALL.replace("  radius: 2.0\n", "")
    with pytest.raises(ConfigError, match="required key"):
        parse_config(text)


def test_invalid_yaml():
    with pytest.raises(ConfigError) as info:
        parse_config("operator: [\n")
    assert info.value.key == "<document>"


def test_ellipse_and_quadratic_rhs():
    text = BALL.replace(
        "kind: disk\n  radius: 2.0",
        "kind: ellipse\n  semi_axes: [2.0, 1.0]\n  rotation: pi/6\n  center: [0.5, 0.0]",
    )
    text += "rhs:\n  kind: concave_quadratic\n  kappa: [0.1, 0.0]\n  curvature: 0.2\n"
    cfg = parse_config(text)
    assert cfg.target.semi_axes == (2.0, 1.0)
    assert cfg.target.rotation == pytest.approx(math.pi / 6)
    assert cfg.rhs.curvature == 0.2
    assert cfg.to_dict()["target"]["kind"] == "ellipse"


def test_fourier_harmonics():
    text = BALL.replace(
        "kind: disk\n  radius: 1.0",
        "kind: fourier\n  mean_radius: 1.0\n  harmonics: [[2, 0.05, 0.0], [3, 0.0, 0.02]]",
    )
    cfg = parse_config(text)
    assert cfg.source.harmonics == ((2, 0.05, 0.0), (3, 0.0, 0.02))


def test_problem_maps_geometry_errors():
    text = BALL.replace(
        "kind: disk\n  radius: 1.0",
        "kind: fourier\n  mean_radius: 1.0\n  harmonics: [[8, 0.5, 0.0]]",
    )
    cfg = parse_config(text)
    with pytest.raises(ConfigError, match="not uniformly convex"):
        cfg.problem()


def test_problem_maps_operator_errors():
    cfg = parse_config(BALL.replace("tau: pi/2", "tau: 2.0"))
    with pytest.raises(ConfigError) as info:
        cfg.problem()
    assert info.value.key == "operator.tau"


def test_parse_tau_list():
    assert parse_tau_list("pi/8, pi/4,0.9") == pytest.approx([math.pi / 8, math.pi / 4, 0.9])
    assert parse_tau_list("") == []
    with pytest.raises(ConfigError):
        parse_tau_list("pi/8,quarter")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.yaml")


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.yaml")), ids=lambda p: p.name)
def test_shipped_configs_parse(path):
    cfg = load_config(path)
    assert cfg.path == path
    assert 0 < cfg.tau <= math.pi / 2
