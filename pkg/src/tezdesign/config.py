"""Strict INI-style scene configuration.

All lengths in files are nanometers; they are converted to meters at this
boundary and nowhere else.  Unknown sections or keys fail fast with the line
number of the offending entry.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass

import numpy as np

from .costs import COST_KINDS, CostSpec, build_target_focus
from .geometry import AffineParams, BaseShape, Circle, Polygon, RoundedRectangle
from .gradient import ActiveParams
from .optimize import OptimizeConfig
from .solver import ExitLine, PlaneWave, Scene

__all__ = ["ConfigError", "SceneConfig", "parse_config", "build_cost"]

NM = 1e-9

_ALLOWED_KEYS = {
    "simulation": {"lambda0_nm", "panels_per_wavelength", "amplitude_v_per_m"},
    "material": {"eps_r"},
    "atoms": {
        "shape", "lx_nm", "ly_nm", "r_nm", "radius_nm", "vertices_nm",
        "count", "pitch_nm", "start_nm", "params",
    },
    "exit_line": {"endpoints_nm", "nodes"},
    "cost": {"kind", "focal_points_nm", "j0", "point_nm", "normalize_target"},
    "optimize": {
        "max_iterations", "gradient_tolerance", "step_tolerance",
        "sufficient_decrease", "backtrack_factor", "history",
        "lambda_min", "lambda_max", "centroid_halfwidth_nm",
    },
    "active": {"theta", "lambda_x", "lambda_y", "xc", "yc"},
    "grid": {"origin_nm", "spacing_nm", "nx", "ny"},
}

_REQUIRED_SECTIONS = ("simulation", "material", "atoms", "exit_line")


class ConfigError(ValueError):
    """Malformed configuration; carries the offending line when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass
class SceneConfig:
    """Parsed configuration, still unit-converted but not yet a Scene."""

    lambda0: float
    panels_per_wavelength: int
    amplitude: float
    eps_r: float
    atoms: list[tuple[BaseShape, AffineParams]]
    exit_line: ExitLine
    cost_kind: str | None
    focal_points: list[tuple[float, float]]
    j0: float
    point: np.ndarray | None
    normalize_target: bool
    optimize: OptimizeConfig
    active_names: list[str]
    grid: dict | None
    path: str = ""

    def scene(self, panels_per_wavelength: int | None = None) -> Scene:
        return Scene(
            lambda0=self.lambda0,
            atoms=self.atoms,
            exit_line=self.exit_line,
            eps_r=self.eps_r,
            incident=PlaneWave(self.amplitude),
            panels_per_wavelength=panels_per_wavelength or self.panels_per_wavelength,
        )

    def active(self) -> ActiveParams:
        if not self.active_names:
            return ActiveParams.theta_only(len(self.atoms))
        return ActiveParams.from_names(len(self.atoms), self.active_names)


def _find_key_line(text: str, section: str, key: str) -> int | None:
    in_section = False
    for i, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            in_section = stripped[1:-1].strip() == section
        elif in_section and stripped.split("=")[0].split(":")[0].strip() == key:
            return i
    return None


def _find_section_line(text: str, section: str) -> int | None:
    for i, raw in enumerate(text.splitlines(), start=1):
        if raw.strip() == f"[{section}]":
            return i
    return None


def parse_config(path: str) -> SceneConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        parser.read_string(text, source=path)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(f"syntax error in {path}: {exc}", line) from exc

    for section in parser.sections():
        if section not in _ALLOWED_KEYS:
            raise ConfigError(
                f"unknown section [{section}]", _find_section_line(text, section)
            )
        for key in parser[section]:
            if key not in _ALLOWED_KEYS[section]:
                raise ConfigError(
                    f"unknown key {key!r} in [{section}]",
                    _find_key_line(text, section, key),
                )
    for section in _REQUIRED_SECTIONS:
        if section not in parser:
            raise ConfigError(f"missing required section [{section}]")

    def get(section, key, cast, default=None, required=False):
        if key not in parser[section]:
            if required:
                raise ConfigError(f"missing key {key!r} in [{section}]",
                                  _find_section_line(text, section))
            return default
        raw = parser[section][key]
        try:
            return cast(raw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(
                f"bad value for {key!r} in [{section}]: {raw!r} ({exc})",
                _find_key_line(text, section, key),
            ) from exc

    lambda0 = get("simulation", "lambda0_nm", float, required=True) * NM
    ppw = get("simulation", "panels_per_wavelength", int, 16)
    amplitude = get("simulation", "amplitude_v_per_m", float, 1.0)
    eps_r = get("material", "eps_r", float, 5.76)

    atoms = _parse_atoms(parser, text)
    exit_line = _parse_exit_line(parser, text)

    cost_kind = get("cost", "kind", str) if "cost" in parser else None
    if cost_kind is not None and cost_kind not in COST_KINDS:
        raise ConfigError(
            f"unknown cost kind {cost_kind!r} (choose from {', '.join(COST_KINDS)})",
            _find_key_line(text, "cost", "kind"),
        )
    focal_points = []
    j0 = 1.0
    point = None
    normalize_target = True
    if "cost" in parser:
        focal_raw = get("cost", "focal_points_nm", str, "")
        focal_points = [
            (float(px) * NM, float(py) * NM)
            for px, py in (pair.split() for pair in focal_raw.split(";") if pair.strip())
        ]
        j0 = get("cost", "j0", float, 1.0)
        point_raw = get("cost", "point_nm", str, None)
        if point_raw is not None:
            vals = [float(v) for v in point_raw.split()]
            if len(vals) != 2:
                raise ConfigError("point_nm needs exactly two coordinates",
                                  _find_key_line(text, "cost", "point_nm"))
            point = np.array(vals) * NM
        normalize_target = get("cost", "normalize_target", _parse_bool, True)

    opt_kwargs = {}
    if "optimize" in parser:
        for key, cast in (
            ("max_iterations", int), ("gradient_tolerance", float),
            ("step_tolerance", float), ("sufficient_decrease", float),
            ("backtrack_factor", float), ("history", int),
            ("lambda_min", float), ("lambda_max", float),
        ):
            val = get("optimize", key, cast, None)
            if val is not None:
                opt_kwargs[key] = val
        chw = get("optimize", "centroid_halfwidth_nm", float, None)
        if chw is not None:
            opt_kwargs["centroid_halfwidth"] = chw * NM
    try:
        optimize = OptimizeConfig(**opt_kwargs)
    except ValueError as exc:
        raise ConfigError(f"bad [optimize] values: {exc}",
                          _find_section_line(text, "optimize")) from exc

    active_names = []
    if "active" in parser:
        for key in ("theta", "lambda_x", "lambda_y", "xc", "yc"):
            if get("active", key, _parse_bool, False):
                active_names.append(key)

    grid = None
    if "grid" in parser:
        origin_raw = get("grid", "origin_nm", str, required=True).split()
        grid = {
            "origin": (float(origin_raw[0]) * NM, float(origin_raw[1]) * NM),
            "spacing": get("grid", "spacing_nm", float, required=True) * NM,
            "nx": get("grid", "nx", int, required=True),
            "ny": get("grid", "ny", int, required=True),
        }

    return SceneConfig(
        lambda0=lambda0, panels_per_wavelength=ppw, amplitude=amplitude,
        eps_r=eps_r, atoms=atoms, exit_line=exit_line, cost_kind=cost_kind,
        focal_points=focal_points, j0=j0, point=point,
        normalize_target=normalize_target, optimize=optimize,
        active_names=active_names, grid=grid, path=path,
    )


def _parse_bool(raw: str) -> bool:
    low = str(raw).strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_shape(parser, text) -> BaseShape:
    sec = parser["atoms"]
    kind = sec.get("shape", "rounded_rectangle").strip()
    if kind == "rounded_rectangle":
        for key in ("lx_nm", "ly_nm", "r_nm"):
            if key not in sec:
                raise ConfigError(f"rounded_rectangle needs {key}",
                                  _find_section_line(text, "atoms"))
        return RoundedRectangle(
            float(sec["lx_nm"]) * NM, float(sec["ly_nm"]) * NM, float(sec["r_nm"]) * NM
        )
    if kind == "circle":
        if "radius_nm" not in sec:
            raise ConfigError("circle needs radius_nm", _find_section_line(text, "atoms"))
        return Circle(float(sec["radius_nm"]) * NM)
    if kind == "polygon":
        if "vertices_nm" not in sec:
            raise ConfigError("polygon needs vertices_nm",
                              _find_section_line(text, "atoms"))
        rows = [r for r in sec["vertices_nm"].split(";") if r.strip()]
        verts = tuple(
            (float(x) * NM, float(y) * NM) for x, y in (r.split() for r in rows)
        )
        return Polygon(verts)
    raise ConfigError(f"unknown shape {kind!r}", _find_key_line(text, "atoms", "shape"))


def _parse_atoms(parser, text) -> list[tuple[BaseShape, AffineParams]]:
    shape = _parse_shape(parser, text)
    sec = parser["atoms"]
    has_lattice = "count" in sec
    has_params = "params" in sec
    if has_lattice and has_params:
        raise ConfigError("use either the lattice keys or explicit params, not both",
                          _find_key_line(text, "atoms", "params"))
    if has_lattice:
        count = int(sec["count"])
        if count < 0:
            raise ConfigError("count must be >= 0", _find_key_line(text, "atoms", "count"))
        pitch = float(sec.get("pitch_nm", "726")) * NM
        start = sec.get("start_nm", None)
        if start is not None:
            sx, sy = (float(v) * NM for v in start.split())
        else:
            sx, sy = 0.0, -0.5 * (count - 1) * pitch
        return [
            (shape, AffineParams(xc=sx, yc=sy + i * pitch)) for i in range(count)
        ]
    if has_params:
        atoms = []
        for row in (r for r in sec["params"].splitlines() if r.strip()):
            vals = [float(v) for v in row.split()]
            if len(vals) != 5:
                raise ConfigError(
                    "params rows are 'theta lambda_x lambda_y xc_nm yc_nm'",
                    _find_key_line(text, "atoms", "params"),
                )
            atoms.append((shape, AffineParams(
                theta=vals[0], lambda_x=vals[1], lambda_y=vals[2],
                xc=vals[3] * NM, yc=vals[4] * NM,
            )))
        if not atoms:
            raise ConfigError("params given but empty",
                              _find_key_line(text, "atoms", "params"))
        return atoms
    # neither lattice nor params: a single atom at the origin
    return [(shape, AffineParams())]


def _parse_exit_line(parser, text) -> ExitLine:
    sec = parser["exit_line"]
    if "endpoints_nm" not in sec:
        raise ConfigError("exit_line needs endpoints_nm",
                          _find_section_line(text, "exit_line"))
    vals = [float(v) for v in sec["endpoints_nm"].split()]
    if len(vals) != 4:
        raise ConfigError("endpoints_nm is 'x0 y0 x1 y1'",
                          _find_key_line(text, "exit_line", "endpoints_nm"))
    nodes = int(sec.get("nodes", "128"))
    return ExitLine((vals[0] * NM, vals[1] * NM), (vals[2] * NM, vals[3] * NM), nodes)


def build_cost(cfg: SceneConfig, scene: Scene) -> CostSpec:
    """Cost specification (with its target field) for a parsed configuration."""
    if cfg.cost_kind is None:
        raise ConfigError("this command needs a [cost] section")
    if cfg.cost_kind == "point_intensity":
        pt = cfg.point
        if pt is None:
            if not cfg.focal_points:
                raise ConfigError("point_intensity needs point_nm or focal_points_nm")
            pt = np.array(cfg.focal_points[0])
        return CostSpec("point_intensity", point=pt)
    if not cfg.focal_points:
        raise ConfigError(f"cost {cfg.cost_kind!r} needs focal_points_nm")
    target = build_target_focus(cfg.focal_points, cfg.j0, scene)
    if cfg.normalize_target:
        length = float(np.sum(scene.line_weights))
        scale = math.sqrt(target.norm_sq() / length)
        target = target.with_values(target.values / scale)
    return CostSpec(cfg.cost_kind, target=target)
