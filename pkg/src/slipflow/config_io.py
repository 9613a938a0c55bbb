"""Run configuration, snapshot persistence, and CSV artifact writers.

The config format is flat ``key = value`` text with ``[section]`` headers;
sections are organizational only, keys are globally unique.  Four physical
parameters (gamma, beta, delta, epsilon) must always be explicit because the
limit studies sweep them; everything else has a documented default.  Every
rejected config names exactly the one constraint it violates.

Snapshots are hex-float CSV (bit-exact round trips) and carry the predecessor
state as well, so a single file supports a one-step audit of the scheme.
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (InvariantViolation, IoFailure, MissingKey,
                     SchemaVersionMismatch, TypeMismatch)
from .geometry import BodyShape, Domain, Grid, wall_distance
from .momentum import PhysicalParams
from .rigid_body import RigidPose

SNAPSHOT_VERSION = 1

_REQUIRED = ("gamma", "beta", "delta", "epsilon")

_DEFAULTS: dict[str, object] = {
    "dimension": 2,
    "extents": (1.0, 1.0),
    "grid_resolution": (64, 64),
    "shape": "disc",
    "semi_axes": (0.2,),
    "center0": (0.5, 0.5),
    "orientation0": 0.0,
    "ell0": (0.0, 0.0),
    "omega0": 0.0,
    "rho_S0": 2.0,
    "rho_F0": "1.0",
    "a_F": 0.05,
    "mu_F": 0.1,
    "lambda_F": -0.05,
    "alpha": 0.5,
    "N": 10,
    "dt": 1e-3,
    "t_end": 0.2,
    "sigma": 0.05,
    "vartheta": 1.5,
    "picard_tol": 1e-8,
    "picard_maxiter": 40,
    "ode_tol": 1e-12,
    "g_F": (0.0, 0.0),
    "g_S": (0.0, 0.0),
    "mollify_cells": 1.5,
    "snapshot_every": 50,
}

_SECTIONS = {
    "domain": ("dimension", "extents", "grid_resolution"),
    "body": ("shape", "semi_axes", "center0", "orientation0", "ell0", "omega0",
             "rho_S0"),
    "fluid": ("rho_F0", "gamma", "beta", "a_F", "mu_F", "lambda_F", "alpha"),
    "scheme": ("delta", "epsilon", "N", "dt", "t_end", "sigma", "vartheta",
               "picard_tol", "picard_maxiter", "ode_tol", "mollify_cells",
               "snapshot_every"),
    "forcing": ("g_F", "g_S"),
}

_INT_KEYS = {"dimension", "N", "picard_maxiter", "snapshot_every"}
_TUPLE_KEYS = {"extents", "grid_resolution", "semi_axes", "center0", "ell0",
               "g_F", "g_S"}
_STRING_KEYS = {"shape", "rho_F0"}

_EXPR_NAMES = {"x", "y", "z", "pi", "e"}
_EXPR_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt,
               "tanh": np.tanh, "abs": np.abs}


def _check_expression(tree: ast.AST) -> None:
    for node in ast.walk(tree):
        if isinstance(node, (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Constant,
                             ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow,
                             ast.USub, ast.UAdd, ast.Load)):
            continue
        if isinstance(node, ast.Name):
            if node.id not in _EXPR_NAMES and node.id not in _EXPR_FUNCS:
                raise TypeMismatch(f"name '{node.id}' not allowed in density expression")
            continue
        if isinstance(node, ast.Call):
            if not (isinstance(node.func, ast.Name) and node.func.id in _EXPR_FUNCS
                    and not node.keywords):
                raise TypeMismatch("only whitelisted function calls allowed in density expression")
            continue
        raise TypeMismatch(f"density expression uses unsupported syntax ({type(node).__name__})")


def density_profile(spec: str, dim: int):
    """Callable (P, d) points -> values from a constant or whitelisted expression."""
    text = spec.strip()
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise TypeMismatch(f"cannot parse density expression '{text}'") from exc
    _check_expression(tree)
    code = compile(tree, "<density>", "eval")

    def profile(points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        env = {"pi": math.pi, "e": math.e, **_EXPR_FUNCS,
               "x": pts[:, 0], "y": pts[:, 1]}
        if dim == 3:
            env["z"] = pts[:, 2]
        out = eval(code, {"__builtins__": {}}, env)
        return np.broadcast_to(np.asarray(out, dtype=float), (len(pts),)).copy()

    try:
        test = profile(np.full((1, dim), 0.25))
    except Exception as exc:
        raise TypeMismatch(f"density expression '{text}' failed to evaluate") from exc
    if not np.all(np.isfinite(test)):
        raise TypeMismatch(f"density expression '{text}' is not finite")
    return profile


@dataclass
class SimulationConfig:
    dimension: int
    extents: tuple[float, ...]
    grid_resolution: tuple[int, ...]
    shape: str
    semi_axes: tuple[float, ...]
    center0: tuple[float, ...]
    orientation0: float
    ell0: tuple[float, ...]
    omega0: float
    rho_S0: float
    rho_F0: str
    gamma: float
    beta: float
    a_F: float
    mu_F: float
    lambda_F: float
    alpha: float
    delta: float
    epsilon: float
    N: int
    dt: float
    t_end: float
    sigma: float
    vartheta: float
    picard_tol: float
    picard_maxiter: int
    ode_tol: float
    g_F: tuple[float, ...]
    g_S: tuple[float, ...]
    mollify_cells: float
    snapshot_every: int

    def domain(self) -> Domain:
        return Domain(tuple(float(L) for L in self.extents))

    def grid(self) -> Grid:
        return Grid(self.domain(), tuple(int(n) for n in self.grid_resolution))

    def body_shape(self) -> BodyShape:
        kind = self.shape
        axes = tuple(float(a) for a in self.semi_axes)
        if kind in ("disc", "sphere", "ball"):
            r = axes[0]
            return BodyShape.disc(r) if self.dimension == 2 else BodyShape.ball(r)
        if kind in ("ellipse", "ellipsoid"):
            if self.dimension == 2:
                return BodyShape.ellipse(*axes[:2])
            return BodyShape.ellipsoid(*axes[:3])
        raise TypeMismatch(f"unknown body shape '{kind}'")

    def initial_pose(self) -> RigidPose:
        center = np.asarray(self.center0, dtype=float)
        if self.dimension == 2:
            return RigidPose.from_angle(center, float(self.orientation0))
        return RigidPose(center, np.eye(3))

    def physical_params(self) -> PhysicalParams:
        return PhysicalParams(gamma=self.gamma, beta=self.beta, a_f=self.a_F,
                              delta=self.delta, eps=self.epsilon, mu_f=self.mu_F,
                              lam_f=self.lambda_F, alpha=self.alpha,
                              rho_body=self.rho_S0, g_fluid=self.g_F,
                              g_body=self.g_S, mollify_cells=self.mollify_cells)

    def fluid_density_profile(self):
        return density_profile(self.rho_F0, self.dimension)


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in _STRING_KEYS:
        return raw
    parts = [p for p in raw.replace(",", " ").split() if p]
    try:
        if key in _TUPLE_KEYS:
            return tuple(int(p) if key == "grid_resolution" else float(p)
                         for p in parts)
        if key in _INT_KEYS:
            return int(parts[0])
        return float(parts[0])
    except (ValueError, IndexError) as exc:
        raise TypeMismatch(f"cannot parse value for '{key}': '{raw}'") from exc


def parse_config(text: str) -> SimulationConfig:
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body or (body.startswith("[") and body.endswith("]")):
            continue
        if "=" not in body:
            raise TypeMismatch(f"line {lineno} is not 'key = value': '{body}'")
        key, raw = body.split("=", 1)
        key = key.strip()
        all_keys = set(_DEFAULTS) | set(_REQUIRED)
        if key not in all_keys:
            raise TypeMismatch(f"unknown configuration key '{key}'")
        values[key] = _parse_value(key, raw)

    for key in _REQUIRED:
        if key not in values:
            raise MissingKey(f"required parameter '{key}' is missing")
    merged = {**_DEFAULTS, **values}
    cfg = SimulationConfig(**merged)  # type: ignore[arg-type]
    validate_config(cfg)
    return cfg


def validate_config(cfg: SimulationConfig) -> None:
    if cfg.dimension not in (2, 3):
        raise InvariantViolation("dimension must be 2 or 3")
    if not cfg.gamma > 1.5:
        raise InvariantViolation("gamma must exceed 3/2")
    if cfg.beta < max(8.0, cfg.gamma):
        raise InvariantViolation("beta must be at least max(8, gamma)")
    if not cfg.mu_F > 0.0:
        raise InvariantViolation("mu_F must be positive")
    if 3.0 * cfg.lambda_F + 2.0 * cfg.mu_F < 0.0:
        raise InvariantViolation("3*lambda_F + 2*mu_F must be nonnegative")
    if cfg.alpha < 0.0:
        raise InvariantViolation("alpha must be nonnegative")
    if not cfg.delta > 0.0:
        raise InvariantViolation("delta must be positive")
    if not cfg.epsilon > 0.0:
        raise InvariantViolation("epsilon must be positive")
    if not (1.0 < cfg.vartheta < 2.0):
        raise InvariantViolation("vartheta must lie strictly inside (1, 2)")
    if cfg.dt <= 0.0 or cfg.t_end <= 0.0:
        raise InvariantViolation("dt and t_end must be positive")
    if cfg.N < 1:
        raise InvariantViolation("N must be at least 1")
    if cfg.sigma <= 0.0:
        raise InvariantViolation("sigma must be positive")
    if cfg.rho_S0 <= 0.0:
        raise InvariantViolation("rho_S0 must be positive")
    if len(cfg.extents) != cfg.dimension:
        raise InvariantViolation("extents rank must equal dimension")
    if len(cfg.grid_resolution) != cfg.dimension:
        raise InvariantViolation("grid_resolution rank must equal dimension")
    dist = wall_distance(cfg.domain(), cfg.body_shape(), cfg.initial_pose())
    if not dist > 2.0 * cfg.sigma:
        raise InvariantViolation(
            f"initial body wall distance {dist:.6g} must exceed 2*sigma = {2*cfg.sigma:.6g}")
    cfg.fluid_density_profile()  # raises TypeMismatch on a bad expression


def serialize_config(cfg: SimulationConfig) -> str:
    def fmt(key: str) -> str:
        v = getattr(cfg, key)
        if isinstance(v, tuple):
            return ", ".join(repr(float(x)) if key != "grid_resolution" else str(int(x))
                             for x in v)
        if key in _STRING_KEYS:
            return str(v)
        if key in _INT_KEYS:
            return str(int(v))
        return repr(float(v))

    lines = []
    for section, keys in _SECTIONS.items():
        lines.append(f"[{section}]")
        for key in keys:
            lines.append(f"{key} = {fmt(key)}")
        lines.append("")
    return "\n".join(lines)


def load_config(path) -> SimulationConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoFailure(f"cannot read config '{path}': {exc}") from exc
    return parse_config(text)


# -- snapshots ---------------------------------------------------------------


@dataclass
class SnapshotState:
    """One committed step plus its predecessor, enough to audit the update.

    ``g_picard`` is the velocity the final Picard iterate linearized around;
    with it the committed linear system can be reassembled bit-for-bit.
    """

    time: float
    dt: float
    grid_resolution: tuple[int, ...]
    n_modes: int
    rho: np.ndarray
    g: np.ndarray
    pose_center: np.ndarray
    pose_rotation: np.ndarray       # flattened row-major
    rho_prev: np.ndarray
    g_prev: np.ndarray
    pose_prev_center: np.ndarray
    pose_prev_rotation: np.ndarray
    g_picard: np.ndarray


def _hex_row(name: str, values) -> str:
    return ",".join([name] + [float(v).hex() for v in np.asarray(values, dtype=float).ravel()])


def write_snapshot(state: SnapshotState, path) -> None:
    lines = [f"slipflow-snapshot,{SNAPSHOT_VERSION}",
             _hex_row("time", [state.time]),
             _hex_row("dt", [state.dt]),
             "grid," + ",".join(str(int(n)) for n in state.grid_resolution),
             f"n_modes,{int(state.n_modes)}",
             _hex_row("rho", state.rho),
             _hex_row("g", state.g),
             _hex_row("pose_center", state.pose_center),
             _hex_row("pose_rotation", state.pose_rotation),
             _hex_row("rho_prev", state.rho_prev),
             _hex_row("g_prev", state.g_prev),
             _hex_row("pose_prev_center", state.pose_prev_center),
             _hex_row("pose_prev_rotation", state.pose_prev_rotation),
             _hex_row("g_picard", state.g_picard)]
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write snapshot '{path}': {exc}") from exc


def read_snapshot(path) -> SnapshotState:
    try:
        raw = Path(path).read_text()
    except OSError as exc:
        raise IoFailure(f"cannot read snapshot '{path}': {exc}") from exc
    lines = [ln for ln in raw.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("slipflow-snapshot,"):
        raise IoFailure(f"'{path}' is not a snapshot file")
    version = lines[0].split(",", 1)[1].strip()
    if version != str(SNAPSHOT_VERSION):
        raise SchemaVersionMismatch(
            f"snapshot version {version} (supported: {SNAPSHOT_VERSION})")
    rows: dict[str, list[str]] = {}
    for ln in lines[1:]:
        parts = ln.split(",")
        rows[parts[0]] = parts[1:]
    try:
        def vec(name: str) -> np.ndarray:
            return np.array([float.fromhex(v) for v in rows[name]])

        return SnapshotState(
            time=float.fromhex(rows["time"][0]),
            dt=float.fromhex(rows["dt"][0]),
            grid_resolution=tuple(int(v) for v in rows["grid"]),
            n_modes=int(rows["n_modes"][0]),
            rho=vec("rho"), g=vec("g"),
            pose_center=vec("pose_center"),
            pose_rotation=vec("pose_rotation"),
            rho_prev=vec("rho_prev"), g_prev=vec("g_prev"),
            pose_prev_center=vec("pose_prev_center"),
            pose_prev_rotation=vec("pose_prev_rotation"),
            g_picard=vec("g_picard"))
    except (KeyError, ValueError, IndexError) as exc:
        raise IoFailure(f"snapshot '{path}' is truncated or malformed: {exc}") from exc


# -- run artifacts -------------------------------------------------------------

ENERGY_COLUMNS = ("t", "E_kin", "E_elastic", "D_visc", "D_rho", "D_wall",
                  "D_interface", "D_penal", "P_force", "slack")


class CsvWriter:
    """Line-buffered CSV writer with repr() floats for bit-stable output."""

    def __init__(self, path, columns):
        self.path = Path(path)
        self.columns = tuple(columns)
        try:
            self._fh = open(self.path, "w")
        except OSError as exc:
            raise IoFailure(f"cannot open '{path}' for writing: {exc}") from exc
        self._fh.write(",".join(self.columns) + "\n")

    def write_row(self, values) -> None:
        cells = [repr(float(v)) if isinstance(v, (int, float, np.floating)) else str(v)
                 for v in values]
        if len(cells) != len(self.columns):
            raise IoFailure(f"row width {len(cells)} != header width {len(self.columns)}")
        self._fh.write(",".join(cells) + "\n")

    def write_footer(self, lines) -> None:
        for ln in lines:
            self._fh.write(f"# {ln}\n")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def write_rates(path, columns, rows, footers) -> None:
    """rates.csv: sweep table plus '# name = value' footer lines the plots echo."""
    with CsvWriter(path, columns) as w:
        for row in rows:
            w.write_row(row)
        w.write_footer(footers)
