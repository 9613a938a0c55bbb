"""Coupled time stepping: Picard fixed point per step plus the energy ledger.

One step freezes the committed state (rho_k, g_k, pose_k) and iterates

    u_prev -> density transport -> body motion + pose transport -> assembly
           -> implicit momentum solve

until the relative velocity update drops below picard_tol.  The committed
system is the one actually solved at the last iterate, so the kinetic part of
the ledger closes to roundoff by construction; elastic bookkeeping pairs the
flux-form pressure load and the midpoint-pose transport load against the
committed density/pose moves.
"""

from __future__ import annotations

import json
import logging
import time as _time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .basis import SlipBasis, build_basis
from .config_io import (ENERGY_COLUMNS, CsvWriter, SimulationConfig,
                        SnapshotState, serialize_config, write_snapshot)
from .continuity import (ContinuityStepper, DensityStep, discrete_div_sup,
                         density_envelope, elastic_face_dissipation,
                         envelope_margin, grid_gradient)
from .errors import CollisionHalt, NonpositiveDensity, PicardDivergence
from .geometry import (BodyShape, Domain, Grid, MollifiedIndicator,
                       body_volume_quadrature, wall_distance)
from .momentum import (AssembledSystem, BodyCoupling, PhysicalParams,
                       RigidProjector, assemble, step_velocity)
from .rigid_body import (BodyInertia, HaltReport, RigidMotion, RigidPose,
                         advance_pose, collision_time_bound, compute_inertia,
                         wall_guard)

log = logging.getLogger("slipflow")


@dataclass
class EnergyLedger:
    """One committed step of the discrete energy inequality."""

    t: float
    e_kin: float
    e_elastic: float
    d_visc: float
    d_rho: float
    d_wall: float
    d_interface: float
    d_penal: float
    p_force: float
    slack: float

    def row(self) -> tuple:
        return (self.t, self.e_kin, self.e_elastic, self.d_visc, self.d_rho,
                self.d_wall, self.d_interface, self.d_penal, self.p_force,
                self.slack)


@dataclass
class CoupledState:
    """Committed state of the coupled system at one time level."""

    t: float
    rho: np.ndarray
    g: np.ndarray
    pose: RigidPose
    motion: RigidMotion
    inertia: BodyInertia

    def total_mass(self, cell_volume: float) -> float:
        return float(np.sum(self.rho)) * cell_volume


def pressure_matched_interior(rho_fluid: np.ndarray, chi_bar: np.ndarray,
                              params: PhysicalParams) -> np.ndarray:
    """Initial density whose total pressure is continuous across the layer.

    Inside the body the gamma-pressure coefficient vanishes, so matching
    a_F rho^gamma + delta rho^beta requires the interior value
    rho_in = (rho^beta + a_F rho^gamma / delta)^(1/beta); blending with the
    cell-averaged indicator keeps the transition as smooth as the layer.
    """
    rho_f = np.asarray(rho_fluid, dtype=float).ravel()
    chi = np.asarray(chi_bar, dtype=float).ravel()
    rho_in = (rho_f ** params.beta
              + params.a_f * rho_f ** params.gamma / params.delta) ** (1.0 / params.beta)
    return rho_f + (rho_in - rho_f) * chi


class Simulation:
    """Owns the discretization and advances one configured run."""

    def __init__(self, config: SimulationConfig):
        config.physical_params().validate()
        self.config = config
        self.params = config.physical_params()
        self.domain: Domain = config.domain()
        self.grid: Grid = config.grid()
        self.basis: SlipBasis = build_basis(self.domain, config.N, self.grid)
        self.shape: BodyShape = config.body_shape()
        self.body_quad = body_volume_quadrature(self.shape)
        self.inertia: BodyInertia = compute_inertia(self.params.rho_body,
                                                    self.shape, self.body_quad)
        self.dt = float(config.dt)
        self.sigma = float(config.sigma)
        self.continuity = ContinuityStepper(self.grid, self.params.eps, self.dt)
        self.forced = bool(np.any(np.asarray(config.g_F))
                           or np.any(np.asarray(config.g_S)))

        self.state = self._initial_state()
        self._coupling = self._make_coupling(self.state.pose)
        self._g_before = self.state.g.copy()
        self._last_u_prev = self.state.g.copy()
        self._e_kin = self._kinetic_energy(self.state)
        self._e_elastic = self._elastic_energy(self.state.rho, self._coupling)
        self.e0 = self._e_kin + self._e_elastic
        self._mass0 = self.state.total_mass(self.grid.cell_volume)
        self._rho_min0 = float(self.state.rho.min())
        self._rho_max0 = float(self.state.rho.max())
        self._divsup_integral = 0.0

        # run-level tallies the summary and the acceptance checks read
        self.total_picard_iterations = 0
        self.min_slack = np.inf
        self.max_mass_drift = 0.0
        self.min_envelope_margin = np.inf
        self.min_rho = self._rho_min0
        self.max_rho = self._rho_max0
        self.steps_committed = 0

    # -- setup -----------------------------------------------------------------

    def _make_coupling(self, pose: RigidPose) -> BodyCoupling:
        return BodyCoupling(self.basis, self.shape, pose, self.inertia,
                            self.params, volume_quad=self.body_quad)

    def _initial_state(self) -> CoupledState:
        cfg = self.config
        centers = self.grid.cell_centers()
        rho_fluid = cfg.fluid_density_profile()(centers)
        if rho_fluid.min() <= 0.0:
            raise NonpositiveDensity("initial fluid density must be positive")

        pose0 = cfg.initial_pose()
        coupling0 = self._make_coupling(pose0)
        chi = coupling0.chi_bar.ravel()
        rho0 = pressure_matched_interior(rho_fluid, chi, self.params)

        # delta-level regularization: grid Gaussian mollifier plus a floor
        width_cells = self.params.delta / max(self.grid.spacing)
        rho0_grid = rho0.reshape(self.grid.resolution)
        rho0_delta = gaussian_filter(rho0_grid, sigma=width_cells,
                                     mode="nearest").ravel() + self.params.delta

        # initial velocity: the body's rigid field weighted into the layer,
        # fluid at rest; momentum rescaled to keep |q|^2 / rho unchanged
        center0 = self.inertia.mass_center(pose0)
        motion0 = RigidMotion(velocity=np.asarray(cfg.ell0, dtype=float),
                              spin=cfg.omega0 if self.grid.dim == 2
                              else np.asarray([0.0, 0.0, cfg.omega0]),
                              center=center0)
        u0 = chi[:, None] * motion0.field(centers)
        q0 = rho0[:, None] * u0
        q0_delta = q0 * np.sqrt(rho0_delta / rho0)[:, None]
        load = self.basis.cell_field_load(
            q0_delta.reshape(*self.grid.resolution, self.grid.dim))
        mass0 = self.basis.mass_matrix(rho0_delta)
        g0 = np.linalg.solve(mass0, load)

        return CoupledState(t=0.0, rho=rho0_delta, g=g0, pose=pose0,
                            motion=motion0, inertia=self.inertia)

    # -- energies ----------------------------------------------------------------

    def _kinetic_energy(self, state: CoupledState) -> float:
        A = self.basis.mass_matrix(state.rho)
        return 0.5 * float(state.g @ A @ state.g)

    def _elastic_energy(self, rho: np.ndarray, coupling: BodyCoupling) -> float:
        a_cells = self.params.pressure_coefficient(coupling.chi_bar).ravel()
        vol = self.grid.cell_volume
        e_gamma = float(np.sum(a_cells * self.params.h_gamma(rho))) * vol
        e_beta = self.params.delta * float(np.sum(self.params.h_beta(rho))) * vol
        return e_gamma + e_beta

    def _divergence_sup(self, g: np.ndarray) -> float:
        quad = self.basis.default_quadrature()
        tabs = self.basis.volume_tables(quad)
        div = np.zeros(len(quad.points))
        for f in range(self.grid.dim):
            div += tabs[f].grad[f] @ g[self.basis.family_slice(f)]
        return float(np.abs(div).max())

    # -- the step ------------------------------------------------------------------

    def picard_step(self) -> tuple[CoupledState, EnergyLedger, int]:
        state = self.state
        params = self.params
        dt = self.dt
        rho_k, g_k, pose_k = state.rho, state.g, state.pose
        coupling_k = self._coupling
        a_old_cells = params.pressure_coefficient(coupling_k.chi_bar).ravel()
        face_tabs = self.basis.face_normal_tables()

        u_prev = 2.0 * g_k - self._g_before if self.steps_committed else g_k.copy()
        last_residual = np.inf
        committed = None

        for it in range(1, self.config.picard_maxiter + 1):
            faces = [face_tabs[a] @ u_prev[self.basis.family_slice(a)]
                     for a in range(self.grid.dim)]
            dstep = self.continuity.step(rho_k, faces)

            motion = coupling_k.projector.project_coefficients(u_prev)
            pose_new = advance_pose(pose_k, motion, dt)
            pose_mid = advance_pose(pose_k, motion, 0.5 * dt)
            coupling_new = self._make_coupling(pose_new)
            projector_mid = RigidProjector(self.basis, self.shape, pose_mid,
                                           params.rho_body, self.body_quad,
                                           self.inertia)
            indicator_mid = MollifiedIndicator(self.shape, pose_mid,
                                               coupling_k.width)

            system = assemble(self.basis, dstep.rho_new,
                              grid_gradient(self.grid, dstep.rho_new),
                              u_prev, coupling_new, params, transport=dstep,
                              rho_old=rho_k, a_old_cells=a_old_cells,
                              projector_mid=projector_mid,
                              indicator_mid=indicator_mid,
                              time=state.t + dt)
            g_new = step_velocity(system, g_k, dt)

            residual = float(np.linalg.norm(g_new - u_prev)
                             / max(1.0, np.linalg.norm(u_prev)))
            if residual <= self.config.picard_tol:
                committed = (g_new, dstep, system, coupling_new, motion,
                             pose_new, u_prev.copy())
                break
            # relaxation only shapes the next iterate's input, never the solve
            u_prev = (0.7 * g_new + 0.3 * u_prev if residual > last_residual
                      else g_new)
            last_residual = residual
        else:
            raise PicardDivergence(
                f"no contraction after {self.config.picard_maxiter} iterates "
                f"(last residual {residual:.3e}, tol {self.config.picard_tol:.1e})")

        g_new, dstep, system, coupling_new, motion, pose_new, u_used = committed
        t_new = state.t + dt

        report = wall_guard(self.domain, self.shape, pose_new, self.sigma, t_new)
        if report is not None:
            raise CollisionHalt(report.message, report=report)

        self._u_committed = u_used
        ledger = self._close_ledger(t_new, g_k, g_new, dstep, system,
                                    coupling_new)
        new_state = CoupledState(t=t_new, rho=dstep.rho_new, g=g_new,
                                 pose=pose_new, motion=motion,
                                 inertia=self.inertia)
        self._commit(new_state, coupling_new, ledger, dstep, it)
        return new_state, ledger, it

    def _close_ledger(self, t_new: float, g_k: np.ndarray, g_new: np.ndarray,
                      dstep: DensityStep, system: AssembledSystem,
                      coupling_new: BodyCoupling) -> EnergyLedger:
        params = self.params
        e_kin_new = 0.5 * float(g_new @ system.A @ g_new)
        e_el_new = self._elastic_energy(dstep.rho_new, coupling_new)
        d_visc = float(g_new @ system.visc_block @ g_new)
        d_wall = float(g_new @ system.wall_block @ g_new)
        d_intf = float(g_new @ system.interface_block @ g_new)
        d_penal = float(g_new @ system.penal_block @ g_new)
        d_rho = params.delta * params.eps * elastic_face_dissipation(
            self.grid, dstep.rho_new, params.dh_beta)
        p_force = float(g_new @ system.forcing_load)
        slack = ((self._e_kin + self._e_elastic) + self.dt * p_force
                 - (e_kin_new + e_el_new)
                 - self.dt * (d_visc + d_wall + d_intf + d_penal + d_rho))
        return EnergyLedger(t=t_new, e_kin=e_kin_new, e_elastic=e_el_new,
                            d_visc=d_visc, d_rho=d_rho, d_wall=d_wall,
                            d_interface=d_intf, d_penal=d_penal,
                            p_force=p_force, slack=slack)

    def _commit(self, new_state: CoupledState, coupling_new: BodyCoupling,
                ledger: EnergyLedger, dstep: DensityStep, iterations: int) -> None:
        vol = self.grid.cell_volume
        mass = new_state.total_mass(vol)
        drift = abs(mass - self._mass0) / self._mass0
        self.max_mass_drift = max(self.max_mass_drift, drift)

        self._divsup_integral += self.dt * max(discrete_div_sup(dstep),
                                               self._divergence_sup(new_state.g))
        lo, hi = density_envelope(self._rho_min0, self._rho_max0,
                                  self._divsup_integral)
        margin = envelope_margin(new_state.rho, lo, hi)
        self.min_envelope_margin = min(self.min_envelope_margin, margin)

        self._g_before = self.state.g.copy()
        self._last_u_prev = self._u_committed
        self.state = new_state
        self._coupling = coupling_new
        self._e_kin = ledger.e_kin
        self._e_elastic = ledger.e_elastic
        self.total_picard_iterations += iterations
        self.min_slack = min(self.min_slack, ledger.slack)
        self.min_rho = min(self.min_rho, float(new_state.rho.min()))
        self.max_rho = max(self.max_rho, float(new_state.rho.max()))
        self.steps_committed += 1

    # -- tolerances and reports -----------------------------------------------------

    def slack_tolerance(self, forcing_power_integral: float = 0.0) -> float:
        if self.forced:
            return 1e-6 * (1.0 + self.e0 + abs(forcing_power_integral))
        return 1e-8 * (1.0 + self.e0)

    def envelope_tolerance(self) -> float:
        h = max(self.grid.spacing)
        return 1e-8 + self._rho_max0 * h * h

    def collision_bound(self) -> float:
        gsup = max(float(np.linalg.norm(self.config.g_F)),
                   float(np.linalg.norm(self.config.g_S)))
        return collision_time_bound(
            E0=self.e0, forcing_sup=gsup,
            dist0=wall_distance(self.domain, self.shape, self.state.pose),
            sigma=self.sigma, rho_bar=self._rho_max0,
            gamma=self.params.gamma, shape=self.shape, inertia=self.inertia,
            t_end=self.config.t_end)

    def snapshot_state(self, prev_rho, prev_g, prev_pose) -> SnapshotState:
        st = self.state
        return SnapshotState(
            time=st.t, dt=self.dt,
            grid_resolution=self.grid.resolution, n_modes=self.basis.n_modes,
            rho=st.rho, g=st.g, pose_center=np.asarray(st.pose.center),
            pose_rotation=np.asarray(st.pose.rotation).ravel(),
            rho_prev=prev_rho, g_prev=prev_g,
            pose_prev_center=np.asarray(prev_pose.center),
            pose_prev_rotation=np.asarray(prev_pose.rotation).ravel(),
            g_picard=self._last_u_prev)


def _body_row(sim: Simulation, state: CoupledState) -> tuple:
    pose, motion = state.pose, state.motion
    d = sim.grid.dim
    dist = wall_distance(sim.domain, sim.shape, pose)
    eigs = sim.inertia.moment_eigenvalues(pose)
    if d == 2:
        return (state.t, *np.asarray(pose.center), *np.asarray(motion.velocity),
                pose.angle, float(motion.spin), dist, sim.inertia.mass, *eigs)
    return (state.t, *np.asarray(pose.center), *np.asarray(motion.velocity),
            *np.asarray(pose.rotation).ravel(), *np.asarray(motion.spin),
            dist, sim.inertia.mass, *eigs)


def _body_columns(dim: int) -> tuple[str, ...]:
    if dim == 2:
        return ("t", "h_x", "h_y", "ell_x", "ell_y", "angle", "omega",
                "wall_distance", "mass", "J_1")
    rot = tuple(f"R_{i}{j}" for i in range(3) for j in range(3))
    return ("t", "h_x", "h_y", "h_z", "ell_x", "ell_y", "ell_z", *rot,
            "omega_x", "omega_y", "omega_z", "wall_distance", "mass",
            "J_1", "J_2", "J_3")


def _write_fields(sim: Simulation, path) -> None:
    grid = sim.grid
    centers = grid.cell_centers()
    u = sim.basis.evaluate(centers, sim.state.g)
    rho = sim.state.rho
    idx = np.unravel_index(np.arange(grid.n_cells), grid.resolution)
    cols = (["i", "j"] if grid.dim == 2 else ["i", "j", "k"])
    cols += [f"x_{a}" for a in range(grid.dim)] + ["rho"]
    cols += [f"u_{a}" for a in range(grid.dim)]
    with CsvWriter(path, cols) as w:
        for c in range(grid.n_cells):
            row = [int(ix[c]) for ix in idx]
            row += [centers[c, a] for a in range(grid.dim)]
            row.append(rho[c])
            row += [u[c, a] for a in range(grid.dim)]
            w.write_row(row)


def run(config: SimulationConfig, out_dir, seed: int | None = None) -> dict:
    """Advance to t_end (or halt), writing the full artifact set.

    Returns the summary dictionary that is also written to summary.json.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(serialize_config(config))

    t0 = _time.perf_counter()
    sim = Simulation(config)
    n_steps = int(round(config.t_end / config.dt))
    bound = sim.collision_bound()

    halt: HaltReport | None = None
    forcing_integral = 0.0
    field_index = 0
    prev = (sim.state.rho.copy(), sim.state.g.copy(), sim.state.pose)

    energy = CsvWriter(out / "energy.csv", ENERGY_COLUMNS)
    body = CsvWriter(out / "body.csv", _body_columns(sim.grid.dim))
    energy.write_row((0.0, sim._e_kin, sim._e_elastic,
                      0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0))
    body.write_row(_body_row(sim, sim.state))
    _write_fields(sim, out / f"fields_t{field_index}.csv")

    try:
        for k in range(1, n_steps + 1):
            prev = (sim.state.rho.copy(), sim.state.g.copy(), sim.state.pose)
            state, ledger, iterations = sim.picard_step()
            forcing_integral += abs(config.dt * ledger.p_force)
            energy.write_row(ledger.row())
            body.write_row(_body_row(sim, state))
            if config.snapshot_every and k % config.snapshot_every == 0:
                field_index += 1
                _write_fields(sim, out / f"fields_t{field_index}.csv")
                write_snapshot(sim.snapshot_state(*prev),
                               out / f"snapshot_t{field_index}.csv")
            if k % 50 == 0 or k == n_steps:
                log.info("step %d/%d t=%.4f iters=%d slack=%.3e",
                         k, n_steps, state.t, iterations, ledger.slack)
    except CollisionHalt as exc:
        halt = exc.report
        log.warning("halted: %s", halt.message)
        (out / "halt.json").write_text(json.dumps({
            "time": halt.time, "wall_distance": halt.wall_distance,
            "threshold": halt.threshold, "message": halt.message}, indent=2))
    finally:
        energy.close()
        body.close()

    write_snapshot(sim.snapshot_state(*prev), out / "snapshot_final.csv")
    _write_fields(sim, out / "fields_final.csv")

    summary = {
        "t_final": sim.state.t,
        "steps": sim.steps_committed,
        "halted": halt is not None,
        "halt_time": halt.time if halt else None,
        "collision_time_bound": bound,
        "min_rho": sim.min_rho,
        "max_rho": sim.max_rho,
        "total_picard_iterations": sim.total_picard_iterations,
        "min_slack": None if sim.steps_committed == 0 else sim.min_slack,
        "slack_tolerance": sim.slack_tolerance(forcing_integral),
        "max_mass_drift": sim.max_mass_drift,
        "min_envelope_margin": (None if sim.steps_committed == 0
                                else sim.min_envelope_margin),
        "envelope_tolerance": sim.envelope_tolerance(),
        "initial_energy": sim.e0,
        "forcing_power_integral": forcing_integral,
        "seed": seed,
        "wall_time_s": _time.perf_counter() - t0,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    return summary
