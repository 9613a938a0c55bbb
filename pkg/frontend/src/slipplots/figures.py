"""The four figure kinds, each a pure view of one run directory.

render() returns the numbers it displayed so tests can compare them against
the source CSVs; the figure itself is an artifact, not an oracle.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .schemas import (BODY_COLUMNS_2D, ENERGY_COLUMNS, FIELD_COLUMNS_2D,
                      SchemaMismatch, footer_values, read_rates,
                      read_run_geometry, read_table)

DISSIPATION_TERMS = ("D_visc", "D_rho", "D_wall", "D_interface", "D_penal")

# fixed style so repeated renders of the same data are byte-identical
_STYLE = {"figure.figsize": (7.0, 4.5), "figure.dpi": 110,
          "savefig.dpi": 110, "font.size": 9.0}
_METADATA = {"Software": "slipplots"}


def render(run_dir, kind: str, out_path, style: dict | None = None) -> dict:
    """Render one figure kind from a run directory; returns displayed values."""
    try:
        draw = _KINDS[kind]
    except KeyError:
        raise SchemaMismatch(f"unknown figure kind {kind!r}; "
                             f"expected one of {sorted(_KINDS)}") from None
    rc = dict(_STYLE)
    if style:
        rc.update(style)
    with plt.rc_context(rc):
        fig, meta = draw(Path(run_dir))
        try:
            fig.savefig(out_path, metadata=_METADATA)
        finally:
            plt.close(fig)
    meta["content_sha256"] = hashlib.sha256(
        Path(out_path).read_bytes()).hexdigest()
    return meta


def _energy(run_dir: Path):
    cols = read_table(run_dir / "energy.csv", ENERGY_COLUMNS)
    t = cols["t"]
    energy = cols["E_kin"] + cols["E_elastic"]
    dt = np.diff(t)
    # dissipation columns are rates; their running time integrals stack on
    # top of E(t), and the stack top tracks E(0) + the forcing work
    layers = [energy]
    for name in DISSIPATION_TERMS:
        layers.append(np.concatenate([[0.0], np.cumsum(cols[name][1:] * dt)]))
    fig, ax = plt.subplots()
    ax.stackplot(t, layers, labels=("E(t)",) + DISSIPATION_TERMS, alpha=0.8)
    ax.plot(t, energy, color="black", linewidth=1.2)
    ax.set_xlabel("t")
    ax.set_ylabel("energy budget")
    ax.legend(loc="center left", fontsize=7)
    ax2 = ax.twinx()
    ax2.plot(t, cols["slack"], color="crimson", linewidth=0.8)
    ax2.set_ylabel("slack", color="crimson")
    increments = np.diff(energy) - dt * cols["P_force"][1:]
    meta = {"max_energy_increment": float(np.max(increments, initial=0.0)),
            "final_energy": float(energy[-1]),
            "terms": list(DISSIPATION_TERMS)}
    return fig, meta


def _rates(run_dir: Path):
    table, footers = read_rates(run_dir / "rates.csv")
    values = table["value"]
    named = footer_values(footers)
    fig, ax = plt.subplots()
    check_slopes = {}
    for name, text in named.items():
        if not name.startswith("slope_"):
            continue
        metric = name[len("slope_"):]
        if metric not in table:
            raise SchemaMismatch(f"rates.csv footer {name} has no column")
        y = table[metric]
        keep = np.isfinite(y) & (y > 0) & np.isfinite(values) & (values > 0)
        if keep.sum() < 2:
            raise SchemaMismatch(f"rates.csv column {metric} has fewer than "
                                 "two positive points")
        ax.loglog(values[keep], y[keep], marker="o", label=metric)
        # displayed annotation is the footer text; this fit is only the
        # cross-check that the plotted points tell the same story
        check_slopes[metric] = float(np.polyfit(
            np.log(values[keep]), np.log(y[keep]), 1)[0])
    ax.set_xlabel("parameter value")
    ax.set_ylabel("metric")
    ax.legend(fontsize=7)
    ax.text(0.02, 0.02, "\n".join(footers), transform=ax.transAxes,
            fontsize=7, family="monospace", verticalalignment="bottom")
    return fig, {"annotations": footers, "check_slopes": check_slopes}


def _fields(run_dir: Path):
    cols = read_table(run_dir / "fields_final.csv", FIELD_COLUMNS_2D)
    ni = int(cols["i"].max()) + 1
    nj = int(cols["j"].max()) + 1
    if ni * nj != len(cols["rho"]):
        raise SchemaMismatch("fields_final.csv does not cover a full grid")
    order = np.lexsort((cols["j"], cols["i"]))
    x = cols["x_0"][order].reshape(ni, nj)
    y = cols["x_1"][order].reshape(ni, nj)
    rho = cols["rho"][order].reshape(ni, nj)
    u = cols["u_0"][order].reshape(ni, nj)
    v = cols["u_1"][order].reshape(ni, nj)
    fig, ax = plt.subplots()
    mesh = ax.pcolormesh(x, y, rho, shading="nearest", cmap="viridis")
    fig.colorbar(mesh, ax=ax, label="rho")
    skip = max(1, ni // 24)
    ax.quiver(x[::skip, ::skip], y[::skip, ::skip],
              u[::skip, ::skip], v[::skip, ::skip],
              color="white", scale_units="xy", width=0.003)
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    return fig, {"rho_min": float(rho.min()), "rho_max": float(rho.max()),
                 "speed_max": float(np.hypot(u, v).max())}


def _trajectory(run_dir: Path):
    cols = read_table(run_dir / "body.csv", BODY_COLUMNS_2D)
    geom = read_run_geometry(run_dir)
    margin = geom["radius"] + 1.5 * geom["sigma"]
    ex, ey = geom["extent_x"], geom["extent_y"]
    fig, ax = plt.subplots()
    # center positions inside the band would put the surface within the halt
    # clearance of a wall
    band = dict(color="lightcoral", alpha=0.35, linewidth=0.0)
    ax.fill_between([0.0, ex], 0.0, margin, **band)
    ax.fill_between([0.0, ex], ey - margin, ey, **band)
    ax.fill_betweenx([0.0, ey], 0.0, margin, **band)
    ax.fill_betweenx([0.0, ey], ex - margin, ex, **band)
    ax.plot(cols["h_x"], cols["h_y"], color="navy", linewidth=1.2)
    ax.plot(cols["h_x"][0], cols["h_y"][0], marker="o", color="navy")
    ax.plot(cols["h_x"][-1], cols["h_y"][-1], marker="s", color="navy")
    circle = plt.Circle((cols["h_x"][-1], cols["h_y"][-1]), geom["radius"],
                        fill=False, color="navy", linewidth=0.8)
    ax.add_patch(circle)
    ax.set_xlim(0.0, ex)
    ax.set_ylim(0.0, ey)
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    return fig, {"min_wall_distance": float(cols["wall_distance"].min()),
                 "band_margin": float(margin)}


_KINDS = {"energy": _energy, "rates": _rates,
          "fields": _fields, "trajectory": _trajectory}
KINDS = tuple(sorted(_KINDS))
