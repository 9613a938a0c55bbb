"""Divergence-compatible slip basis on a box and its assembly tables.

Vector modes come in one family per component.  The component normal to each
wall carries a sine factor in that axis (vanishing on the wall), tangential
components carry cosine factors, so u . nu = 0 holds at the walls structurally:

    family f, mode (k, m_a):  e = prod_a f_a(x_a) e_f,
    f_f = sin(k pi x_f / L_f)  (k >= 1),   f_a = cos(m_a pi x_a / L_a)  (m_a >= 0).

Modes are orthonormalized against the exact L^2 inner product (the analytic
normalization constants), and every mass/viscosity-type matrix is assembled
from analytic per-cell integrals of trig pair products.  For a density that is
piecewise constant per grid cell these matrices are exact, which is what the
stepper's energy bookkeeping leans on: the L^2 Gram is the identity to
roundoff, and weighted mass matrices are sums of per-cell PSD blocks.

Quadrature-point value/gradient tables (volume, faces, walls, arbitrary point
sets) are precomputed here and cached; the convection and penalization terms
are the only ones that integrate by quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import UnsupportedDomain
from .geometry import Domain, Grid

_HALF_PI = 0.5 * np.pi


@dataclass(frozen=True)
class TrigSet:
    """Functions amp_i * cos(freq_i x + phase_i) on one axis."""

    freqs: np.ndarray
    phases: np.ndarray
    amps: np.ndarray

    def derivative(self) -> "TrigSet":
        # d/dx cos(fx + p) = f cos(fx + p + pi/2)
        return TrigSet(self.freqs, self.phases + _HALF_PI, self.amps * self.freqs)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.amps * np.cos(np.multiply.outer(x, self.freqs) + self.phases)


def sine_set(n: int, length: float) -> TrigSet:
    """sin(k pi x / L), k = 1..n, unit L^2 norm on [0, L]."""
    k = np.arange(1, n + 1, dtype=float)
    return TrigSet(freqs=k * np.pi / length,
                   phases=np.full(n, -_HALF_PI),
                   amps=np.full(n, np.sqrt(2.0 / length)))


def cosine_set(n: int, length: float) -> TrigSet:
    """cos(m pi x / L), m = 0..n-1, unit L^2 norm on [0, L]."""
    m = np.arange(n, dtype=float)
    amps = np.full(n, np.sqrt(2.0 / length))
    amps[0] = np.sqrt(1.0 / length)
    return TrigSet(freqs=m * np.pi / length, phases=np.zeros(n), amps=amps)


def pair_cell_integrals(A: TrigSet, B: TrigSet, edges: np.ndarray) -> np.ndarray:
    """T[i, j, c] = integral over cell c of A_i(x) B_j(x) dx, exact.

    Product-to-sum: cos(a)cos(b) = (cos(a-b) + cos(a+b)) / 2, each antiderivative
    evaluated in closed form (with the omega -> 0 limit handled exactly).
    """
    fa, fb = A.freqs[:, None], B.freqs[None, :]
    pa, pb = A.phases[:, None], B.phases[None, :]

    def primitive(omega: np.ndarray, phase: np.ndarray, x: float) -> np.ndarray:
        # antiderivative of cos(omega x + phase) at x
        out = np.empty(np.broadcast_shapes(omega.shape, phase.shape))
        zero = omega == 0.0
        nz = ~zero
        w = np.broadcast_to(omega, out.shape)
        p = np.broadcast_to(phase, out.shape)
        out[nz] = np.sin(w[nz] * x + p[nz]) / w[nz]
        out[zero] = np.cos(p[zero]) * x
        return out

    diff_w, diff_p = fa - fb, pa - pb
    sum_w, sum_p = fa + fb, pa + pb
    nc = len(edges) - 1
    T = np.empty((len(A.freqs), len(B.freqs), nc))
    lo_d = primitive(diff_w, diff_p, edges[0])
    lo_s = primitive(sum_w, sum_p, edges[0])
    for c in range(nc):
        hi_d = primitive(diff_w, diff_p, edges[c + 1])
        hi_s = primitive(sum_w, sum_p, edges[c + 1])
        T[:, :, c] = 0.5 * ((hi_d - lo_d) + (hi_s - lo_s))
        lo_d, lo_s = hi_d, hi_s
    amp = A.amps[:, None] * B.amps[None, :]
    return T * amp[:, :, None]


@dataclass
class FamilyTables:
    """Mode values/gradients of one family at a fixed point set."""

    value: np.ndarray          # (P, n_f)
    grad: list[np.ndarray]     # per axis, (P, n_f)


class SlipBasis:
    """Orthonormal slip basis bound to a grid (for the analytic cell tables)."""

    def __init__(self, domain: Domain, n_per_axis: int, grid: Grid):
        if grid.domain != domain:
            raise UnsupportedDomain("basis grid must live on the same domain")
        if n_per_axis < 1:
            raise UnsupportedDomain("need at least one mode per axis")
        self.domain = domain
        self.grid = grid
        self.n = int(n_per_axis)
        self.dim = domain.dim
        self.modes_per_family = self.n ** self.dim
        self.n_modes = self.dim * self.modes_per_family
        # per axis: the sine set (own-axis factors) and cosine set (others)
        self._sets: list[dict[str, TrigSet]] = []
        for a in range(self.dim):
            L = domain.extents[a]
            s = sine_set(self.n, L)
            c = cosine_set(self.n, L)
            self._sets.append({"s": s, "c": c, "ds": s.derivative(), "dc": c.derivative()})
        self._edges = [np.arange(grid.resolution[a] + 1) * grid.spacing[a]
                       for a in range(self.dim)]
        self._tables: list[dict[tuple[str, str], np.ndarray]] = [dict() for _ in range(self.dim)]
        self._volume_tables: dict[int, list[FamilyTables]] = {}
        self._wall_matrix: np.ndarray | None = None
        self._quad = None
        self._face_tables: list[np.ndarray] | None = None

    # -- indexing -----------------------------------------------------------

    def family_slice(self, f: int) -> slice:
        return slice(f * self.modes_per_family, (f + 1) * self.modes_per_family)

    def family_names(self, f: int, deriv_axis: int | None = None) -> tuple[str, ...]:
        """Per-axis 1D factor names of family f (optionally differentiated)."""
        names = []
        for a in range(self.dim):
            base = "s" if a == f else "c"
            names.append("d" + base if a == deriv_axis else base)
        return tuple(names)

    def mode_labels(self) -> list[tuple[int, tuple[int, ...]]]:
        """(family, per-axis 1D indices) for every global mode, in order."""
        labels = []
        shape = (self.n,) * self.dim
        for f in range(self.dim):
            for flat in range(self.modes_per_family):
                labels.append((f, tuple(int(i) for i in np.unravel_index(flat, shape))))
        return labels

    # -- analytic per-cell assembly ------------------------------------------

    def axis_table(self, axis: int, name_i: str, name_j: str) -> np.ndarray:
        key = (name_i, name_j)
        tab = self._tables[axis]
        if key not in tab:
            sets = self._sets[axis]
            tab[key] = pair_cell_integrals(sets[name_i], sets[name_j], self._edges[axis])
        return tab[key]

    def _block_cellweighted(self, names_i: tuple[str, ...], names_j: tuple[str, ...],
                            weights: np.ndarray) -> np.ndarray:
        """sum_c w_c * prod_a T_a[i_a, j_a, c], flattened to a matrix block."""
        tabs = [self.axis_table(a, names_i[a], names_j[a]) for a in range(self.dim)]
        if self.dim == 2:
            out = np.einsum("abx,cdy,xy->acbd", tabs[0], tabs[1], weights, optimize=True)
        else:
            out = np.einsum("abx,cdy,efz,xyz->acebdf", tabs[0], tabs[1], tabs[2],
                            weights, optimize=True)
        m = self.modes_per_family
        return out.reshape(m, m)

    def mass_matrix(self, cell_weights: np.ndarray) -> np.ndarray:
        """A[i, j] = sum_c w_c int_cell e_i . e_j, exact per-cell integrals.

        ``cell_weights`` is the per-cell density grid; passing ones gives the
        L^2 Gram, which is the identity to roundoff by orthonormality.
        """
        W = np.asarray(cell_weights, dtype=float).reshape(self.grid.resolution)
        A = np.zeros((self.n_modes, self.n_modes))
        for f in range(self.dim):
            blk = self._block_cellweighted(self.family_names(f), self.family_names(f), W)
            A[self.family_slice(f), self.family_slice(f)] = blk
        return 0.5 * (A + A.T)

    def cell_field_load(self, field_cells: np.ndarray) -> np.ndarray:
        """L_j = int w . e_j for a per-cell-constant vector field w, exact.

        Pairs against the constant cosine factor (index 0) of each axis and
        rescales it back to a plain integral.
        """
        W = np.asarray(field_cells, dtype=float).reshape(*self.grid.resolution, self.dim)
        scale = float(np.sqrt(np.prod(self.domain.extents)))
        load = np.zeros(self.n_modes)
        for f in range(self.dim):
            names = self.family_names(f)
            tabs = [self.axis_table(a, names[a], "c")[:, 0, :] for a in range(self.dim)]
            if self.dim == 2:
                blk = np.einsum("ax,by,xy->ab", tabs[0], tabs[1], W[..., f],
                                optimize=True)
            else:
                blk = np.einsum("ax,by,cz,xyz->abc", tabs[0], tabs[1], tabs[2],
                                W[..., f], optimize=True)
            load[self.family_slice(f)] = scale * blk.ravel()
        return load

    def cell_quadratic(self, coeffs: np.ndarray) -> np.ndarray:
        """K_c = int_cell |u|^2 per cell (exact), as a grid-shaped array."""
        out = np.zeros(self.grid.resolution)
        shape = (self.n,) * self.dim
        for f in range(self.dim):
            G = coeffs[self.family_slice(f)].reshape(shape)
            names = self.family_names(f)
            tabs = [self.axis_table(a, names[a], names[a]) for a in range(self.dim)]
            if self.dim == 2:
                out += np.einsum("ac,bd,abx,cdy->xy", G, G, tabs[0], tabs[1], optimize=True)
            else:
                out += np.einsum("ace,bdf,abx,cdy,efz->xyz", G, G,
                                 tabs[0], tabs[1], tabs[2], optimize=True)
        return out

    def viscous_matrix(self, mu_cells: np.ndarray, lam_cells: np.ndarray) -> np.ndarray:
        """Viscous block sum_c int_cell 2 mu_c D(e_i):D(e_j) + lam_c div div.

        Per-cell coefficients must satisfy mu > 0 and 2 mu / d + lam >= 0
        pointwise, which makes every per-cell contribution PSD and hence the
        assembled block PSD structurally.
        """
        mu = np.asarray(mu_cells, dtype=float).reshape(self.grid.resolution)
        lam = np.asarray(lam_cells, dtype=float).reshape(self.grid.resolution)
        N = self.n_modes
        B = np.zeros((N, N))
        for f in range(self.dim):
            for g in range(self.dim):
                blk = np.zeros((self.modes_per_family, self.modes_per_family))
                # 2 mu D:D = mu delta_fg sum_a (d_a e_f, d_a e_g) + mu (d_g e_f, d_f e_g)
                if f == g:
                    for a in range(self.dim):
                        blk += self._block_cellweighted(
                            self.family_names(f, a), self.family_names(g, a), mu)
                blk += self._block_cellweighted(
                    self.family_names(f, g), self.family_names(g, f), mu)
                # lambda div div
                blk += self._block_cellweighted(
                    self.family_names(f, f), self.family_names(g, g), lam)
                B[self.family_slice(f), self.family_slice(g)] += blk
        return 0.5 * (B + B.T)

    # -- pointwise evaluation --------------------------------------------------

    def _family_factor(self, f: int, axis: int, x: np.ndarray, deriv: bool) -> np.ndarray:
        name = ("d" if deriv else "") + ("s" if axis == f else "c")
        return self._sets[axis][name].evaluate(x)

    def family_values(self, f: int, points: np.ndarray,
                      deriv_axis: int | None = None) -> np.ndarray:
        """(P, n_f) values of family f's scalar profile (or its derivative)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        factors = [self._family_factor(f, a, pts[:, a], a == deriv_axis)
                   for a in range(self.dim)]
        if self.dim == 2:
            out = np.einsum("qa,qb->qab", factors[0], factors[1])
        else:
            out = np.einsum("qa,qb,qc->qabc", factors[0], factors[1], factors[2])
        return out.reshape(len(pts), self.modes_per_family)

    def point_tables(self, points: np.ndarray, gradients: bool = True) -> list[FamilyTables]:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        tables = []
        for f in range(self.dim):
            val = self.family_values(f, pts)
            grads = [self.family_values(f, pts, deriv_axis=a) for a in range(self.dim)] \
                if gradients else []
            tables.append(FamilyTables(value=val, grad=grads))
        return tables

    def volume_tables(self, quadrature) -> list[FamilyTables]:
        key = id(quadrature)
        if key not in self._volume_tables:
            self._volume_tables.clear()  # one quadrature at a time is enough
            self._volume_tables[key] = self.point_tables(quadrature.points)
        return self._volume_tables[key]

    def default_quadrature(self):
        if self._quad is None:
            self._quad = self.grid.volume_quadrature()
        return self._quad

    def evaluate(self, points: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
        """Velocity values (P, d) for a coefficient vector."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros((len(pts), self.dim))
        for f in range(self.dim):
            out[:, f] = self.family_values(f, pts) @ coeffs[self.family_slice(f)]
        return out if np.ndim(points) > 1 else out[0]

    def velocity_gradient(self, points: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
        """(P, d, d) array of d_a u_b."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros((len(pts), self.dim, self.dim))
        for f in range(self.dim):
            g = coeffs[self.family_slice(f)]
            for a in range(self.dim):
                out[:, a, f] = self.family_values(f, pts, deriv_axis=a) @ g
        return out

    def divergence(self, points: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros(len(pts))
        for f in range(self.dim):
            out += self.family_values(f, pts, deriv_axis=f) @ coeffs[self.family_slice(f)]
        return out

    def divergence_modes(self, points: np.ndarray) -> np.ndarray:
        """(P, N) divergences of every mode."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros((len(pts), self.n_modes))
        for f in range(self.dim):
            out[:, self.family_slice(f)] = self.family_values(f, pts, deriv_axis=f)
        return out

    def sym_gradient(self, points: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
        G = self.velocity_gradient(points, coeffs)
        return 0.5 * (G + np.swapaxes(G, 1, 2))

    # -- boundary structures -----------------------------------------------------

    def face_normal_tables(self, grid: Grid | None = None) -> list[np.ndarray]:
        """Per axis a: values of family a's profile at the axis-a face centers.

        Only the own family crosses a face (the normal component); wall-face
        rows are zeroed exactly so wall fluxes vanish identically.
        """
        if grid is None or grid is self.grid:
            if self._face_tables is None:
                self._face_tables = self._build_face_tables(self.grid)
            return self._face_tables
        return self._build_face_tables(grid)

    def _build_face_tables(self, grid: Grid) -> list[np.ndarray]:
        out = []
        for a in range(self.dim):
            fc = grid.face_centers(a)
            flat = fc.reshape(-1, self.dim)
            vals = self.family_values(a, flat)
            vals = vals.reshape(fc.shape[:-1] + (self.modes_per_family,))
            idx = [slice(None)] * self.dim
            idx[a] = 0
            vals[tuple(idx)] = 0.0
            idx[a] = -1
            vals[tuple(idx)] = 0.0
            out.append(vals.reshape(-1, self.modes_per_family))
        return out

    def wall_tangential_matrix(self, cells_per_axis: tuple[int, ...] | None = None,
                               gl_order: int = 4) -> np.ndarray:
        """Unit-coefficient wall friction block: sum over walls of
        int (e_i . e_j - (e_i . nu)(e_j . nu)).

        With the slip structure the normal parts vanish identically, leaving
        the tangential component products; assembled once, scaled by alpha at
        use.  Exposed with its quadrature so tests can feed arbitrary fields.
        """
        if self._wall_matrix is not None and cells_per_axis is None:
            return self._wall_matrix
        cells = cells_per_axis or self.grid.resolution
        wq = self.domain.wall_quadrature(cells, gl_order)
        B = np.zeros((self.n_modes, self.n_modes))
        for f in range(self.dim):
            # family f is tangential on walls whose axis is not f
            mask = np.abs(wq.normals[:, f]) < 0.5
            if not mask.any():
                continue
            V = self.family_values(f, wq.points[mask])
            W = wq.weights[mask]
            blk = V.T @ (V * W[:, None])
            B[self.family_slice(f), self.family_slice(f)] += blk
        B = 0.5 * (B + B.T)
        if cells_per_axis is None:
            self._wall_matrix = B
        return B


def build_basis(domain: Domain, n_per_axis: int, grid: Grid) -> SlipBasis:
    """Factory mirroring the module interface; validates domain support."""
    if not isinstance(domain, Domain):
        raise UnsupportedDomain("only axis-aligned box domains are supported")
    return SlipBasis(domain, n_per_axis, grid)
