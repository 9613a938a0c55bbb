"""Synthetic run-directory artifacts matching the documented CSV schemas."""

import numpy as np

R = 0.2
SIGMA = 0.05

CONFIG = """\
[domain]
dimension = 2
extents = 1.0, 1.0
grid_resolution = 8, 8

[body]
shape = disc
semi_axes = 0.2
center0 = 0.5, 0.5

[scheme]
delta = 0.01
sigma = 0.05
"""


def _csv(path, header, rows, footers=()):
    lines = [",".join(header)]
    lines += [",".join(repr(float(v)) for v in row) for row in rows]
    lines += [f"# {f}" for f in footers]
    path.write_text("\n".join(lines) + "\n")


def write_energy(path, increasing=False):
    t = np.linspace(0.0, 0.2, 21)
    e_kin = 0.5 * np.exp(-3.0 * t) + (2.0 if increasing else 0.0) * t
    e_el = np.full_like(t, 0.25)
    d_visc = 1.5 * np.exp(-3.0 * t)
    zeros = np.zeros_like(t)
    rows = np.column_stack([t, e_kin, e_el, d_visc, zeros, zeros, zeros,
                            zeros, zeros, zeros])
    _csv(path, ("t", "E_kin", "E_elastic", "D_visc", "D_rho", "D_wall",
                "D_interface", "D_penal", "P_force", "slack"), rows)
    return rows


def write_body(path):
    t = np.linspace(0.0, 0.2, 21)
    hx = 0.4 + t
    hy = np.full_like(t, 0.5)
    wall = np.minimum.reduce([hx - R, 1.0 - hx - R, hy - R, 1.0 - hy - R])
    rows = np.column_stack([t, hx, hy, np.full_like(t, 0.1), np.zeros_like(t),
                            np.zeros_like(t), np.zeros_like(t), wall,
                            np.full_like(t, 0.251), np.full_like(t, 0.005)])
    _csv(path, ("t", "h_x", "h_y", "ell_x", "ell_y", "angle", "omega",
                "wall_distance", "mass", "J_1"), rows)
    return rows


def write_fields(path, n=8):
    idx = np.indices((n, n)).reshape(2, -1).T
    x = (idx + 0.5) / n
    rho = 1.0 + 0.1 * np.sin(2.0 * np.pi * x[:, 0])
    u = 0.05 * np.cos(np.pi * x[:, 1])
    v = -0.05 * np.sin(np.pi * x[:, 0])
    rows = np.column_stack([idx[:, 0], idx[:, 1], x[:, 0], x[:, 1], rho, u, v])
    _csv(path, ("i", "j", "x_0", "x_1", "rho", "u_0", "u_1"), rows)
    return rows


def write_rates(path, footers=("slope_r_delta = 0.5", "r2_r_delta = 1.0")):
    deltas = np.array([1e-1, 3e-2, 1e-2, 3e-3, 1e-3])
    lines = ["parameter,value,r_delta,slip_jump,energy_slack_max,weak_residual"]
    for d in deltas:
        lines.append(f"delta,{float(d)!r},{float(np.sqrt(d))!r},0.0,0.0,0.0")
    lines += [f"# {f}" for f in footers]
    path.write_text("\n".join(lines) + "\n")
    return deltas
