"""Readers for the solver's CSV artifacts, validated against fixed schemas."""

from __future__ import annotations

import configparser
from pathlib import Path

import numpy as np

ENERGY_COLUMNS = ("t", "E_kin", "E_elastic", "D_visc", "D_rho", "D_wall",
                  "D_interface", "D_penal", "P_force", "slack")
BODY_COLUMNS_2D = ("t", "h_x", "h_y", "ell_x", "ell_y", "angle", "omega",
                   "wall_distance", "mass", "J_1")
FIELD_COLUMNS_2D = ("i", "j", "x_0", "x_1", "rho", "u_0", "u_1")
RATES_COLUMNS = ("parameter", "value")


class SchemaMismatch(Exception):
    """A CSV is missing, empty, or does not match its documented schema."""


def read_table(path, required: tuple[str, ...]) -> dict[str, np.ndarray]:
    """Numeric columns of a CSV; footer lines starting with '#' are skipped."""
    path = Path(path)
    if not path.is_file():
        raise SchemaMismatch(f"{path} does not exist")
    lines = [ln for ln in path.read_text().splitlines()
             if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise SchemaMismatch(f"{path} is empty")
    header = lines[0].split(",")
    missing = [c for c in required if c not in header]
    if missing:
        raise SchemaMismatch(f"{path} lacks columns {missing}")
    if len(lines) < 2:
        raise SchemaMismatch(f"{path} has a header but no rows")
    width = len(header)
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != width:
            raise SchemaMismatch(f"{path} row width {len(parts)} != {width}")
        rows.append([_number(p, path) for p in parts])
    data = np.array(rows, dtype=float)
    return {name: data[:, i] for i, name in enumerate(header)
            if name != "parameter"}


def _number(text: str, path: Path) -> float:
    try:
        return float(text)
    except ValueError:
        # the sweep table's first column is a parameter name, not a number
        if text.isidentifier():
            return float("nan")
        raise SchemaMismatch(f"{path} holds non-numeric cell {text!r}") from None


def read_rates(path) -> tuple[dict[str, np.ndarray], list[str]]:
    """Sweep table plus its '# name = value' footer lines, order preserved.

    At least one slope footer is required: the figure annotates the footer
    values verbatim and never fits anything for display.
    """
    path = Path(path)
    table = read_table(path, RATES_COLUMNS)
    footers = [ln[2:].strip() for ln in path.read_text().splitlines()
               if ln.startswith("# ")]
    if not any(f.startswith("slope_") for f in footers):
        raise SchemaMismatch(f"{path} lacks the slope footer lines")
    return table, footers


def footer_values(footers: list[str]) -> dict[str, str]:
    """'slope_r_delta = 0.44...' lines keyed by name, values kept as text."""
    out = {}
    for line in footers:
        name, _, value = line.partition(" = ")
        if name and value:
            out[name] = value
    return out


def read_run_geometry(run_dir) -> dict[str, float]:
    """Extents, body radius and halt margin from the run's config echo."""
    path = Path(run_dir) / "config.txt"
    if not path.is_file():
        raise SchemaMismatch(f"{path} does not exist")
    parser = configparser.ConfigParser()
    parser.read(path)
    try:
        extents = [float(v) for v in parser["domain"]["extents"].split(",")]
        radius = float(parser["body"]["semi_axes"].split(",")[0])
        sigma = float(parser["scheme"]["sigma"])
    except (KeyError, ValueError) as exc:
        raise SchemaMismatch(f"{path} lacks geometry keys: {exc}") from None
    return {"extent_x": extents[0], "extent_y": extents[-1],
            "radius": radius, "sigma": sigma}
