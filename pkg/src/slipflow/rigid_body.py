"""Rigid-body kinematics: poses, motions, inertia, projection, guards.

The body never integrates its own momentum ODE; it moves with the rigid
projection of the penalized velocity field.  Everything here is therefore
kinematic: project a sampled field onto rigid motions, advance a pose by a
motion, and keep the certified collision bookkeeping honest.

Mass and inertia are computed by body-frame quadrature.  Because a rigid
change of variables has unit Jacobian, the transported body mass is constant
by construction and (in 2D) so is the scalar inertia; in 3D the lab inertia is
R J_body R^T, whose eigenvalues are exactly those of J_body.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateInertia,
    InvariantViolation,
    NonpositiveDensity,
    SingularInertia,
)
from .geometry import BodyQuadrature, BodyShape, Domain, wall_distance

_ORTHO_TOL = 1e-10
_REORTH_TRIGGER = 1e-12


def _orthonormality_drift(R: np.ndarray) -> float:
    d = R.shape[0]
    return float(np.max(np.abs(R.T @ R - np.eye(d))))


def _reorthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest rotation in Frobenius norm (polar factor)."""
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0:  # keep the proper rotation branch
        U[:, -1] = -U[:, -1]
        Q = U @ Vt
    return Q


@dataclass(frozen=True)
class RigidPose:
    """Position of the body frame: lab = center + rotation @ body."""

    center: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float)
        rotation = np.asarray(self.rotation, dtype=float)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "rotation", rotation)
        d = len(center)
        if rotation.shape != (d, d):
            raise InvariantViolation("pose rotation shape must match center dimension")
        if _orthonormality_drift(rotation) > _ORTHO_TOL:
            raise InvariantViolation("pose rotation must be orthonormal to 1e-10")

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def angle(self) -> float:
        """Rotation angle (2D only)."""
        if self.dim != 2:
            raise InvariantViolation("angle is only defined for 2D poses")
        return math.atan2(self.rotation[1, 0], self.rotation[0, 0])

    @staticmethod
    def from_angle(center, angle: float) -> "RigidPose":
        c, s = math.cos(angle), math.sin(angle)
        return RigidPose(np.asarray(center, dtype=float), np.array([[c, -s], [s, c]]))

    @staticmethod
    def identity(center) -> "RigidPose":
        center = np.asarray(center, dtype=float)
        return RigidPose(center, np.eye(len(center)))


@dataclass(frozen=True)
class RigidMotion:
    """Instantaneous rigid velocity: u(x) = velocity + spin x (x - center).

    ``spin`` is a scalar in 2D (r x y = r (-y2, y1)) and a 3-vector in 3D.
    ``center`` is the point (mass center) the angular part revolves around.
    """

    velocity: np.ndarray
    spin: np.ndarray | float
    center: np.ndarray

    def field(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        rel = pts - np.asarray(self.center)
        if pts.shape[1] == 2:
            ang = float(self.spin) * np.column_stack([-rel[:, 1], rel[:, 0]])
        else:
            ang = np.cross(np.broadcast_to(self.spin, rel.shape), rel)
        out = np.asarray(self.velocity) + ang
        return out if np.ndim(points) > 1 else out[0]

    @property
    def speed_scale(self) -> float:
        spin_mag = abs(float(self.spin)) if np.ndim(self.spin) == 0 else float(np.linalg.norm(self.spin))
        return float(np.linalg.norm(self.velocity)) + spin_mag

    @staticmethod
    def zero(dim: int, center) -> "RigidMotion":
        spin = 0.0 if dim == 2 else np.zeros(3)
        return RigidMotion(np.zeros(dim), spin, np.asarray(center, dtype=float))


@dataclass(frozen=True)
class BodyInertia:
    """Mass, body-frame mass center and body-frame inertia about that center."""

    mass: float
    center_body: np.ndarray
    moment: np.ndarray | float   # scalar in 2D, 3x3 matrix in 3D

    @property
    def dim(self) -> int:
        return len(self.center_body)

    def mass_center(self, pose: RigidPose) -> np.ndarray:
        return np.asarray(pose.center) + np.asarray(pose.rotation) @ self.center_body

    def moment_lab(self, pose: RigidPose):
        if self.dim == 2:
            return float(self.moment)
        R = np.asarray(pose.rotation)
        return R @ self.moment @ R.T

    def moment_eigenvalues(self, pose: RigidPose) -> np.ndarray:
        m = self.moment_lab(pose)
        if self.dim == 2:
            return np.array([m])
        return np.linalg.eigvalsh(m)


def compute_inertia(rho_body, shape: BodyShape, quadrature: BodyQuadrature) -> BodyInertia:
    """Mass, mass center and inertia of the body by body-frame quadrature.

    ``rho_body`` is a constant or a callable of body-frame points.  The rule is
    expected to cover exactly the body (sharp indicator); for discs/balls the
    polar Gauss rule integrates the polynomial moments exactly.
    """
    y = quadrature.body_points
    w = quadrature.weights
    rho = rho_body(y) if callable(rho_body) else np.full(len(y), float(rho_body))
    if np.any(rho <= 0.0):
        raise NonpositiveDensity("body density must be strictly positive on the body")
    mw = w * rho
    mass = float(np.sum(mw))
    if mass <= 0.0:
        raise NonpositiveDensity("body has nonpositive mass")
    center = (mw @ y) / mass
    rel = y - center
    if shape.dim == 2:
        moment = float(np.sum(mw * np.sum(rel * rel, axis=1)))
    else:
        r2 = np.sum(rel * rel, axis=1)
        moment = (np.eye(3) * np.sum(mw * r2)
                  - (rel * mw[:, None]).T @ rel)
    return BodyInertia(mass=mass, center_body=center, moment=moment)


def project_rigid(points: np.ndarray, weights: np.ndarray, u_values: np.ndarray,
                  inertia: BodyInertia, pose: RigidPose) -> RigidMotion:
    """L^2(rho chi_S) projection of a sampled velocity field onto rigid motions.

    ``weights`` must already contain quadrature weight times rho chi_S at each
    point.  Exactness: a rigid input is reproduced up to roundoff because the
    same moments (mass, mass center, inertia) define both the projection and
    the inertia bookkeeping.
    """
    if inertia.mass <= 1e-300:
        raise SingularInertia("zero body mass")
    h = inertia.mass_center(pose)
    rel = points - h
    V = (weights @ u_values) / inertia.mass
    if points.shape[1] == 2:
        J = float(inertia.moment)
        if J <= 1e-300:
            raise SingularInertia("singular scalar inertia")
        spin = float(np.sum(weights * (rel[:, 0] * u_values[:, 1]
                                       - rel[:, 1] * u_values[:, 0]))) / J
    else:
        J = inertia.moment_lab(pose)
        try:
            spin = np.linalg.solve(J, weights @ np.cross(rel, u_values))
        except np.linalg.LinAlgError as exc:
            raise SingularInertia("singular inertia tensor") from exc
    return RigidMotion(velocity=V, spin=spin, center=h)


def _rotation_exponential(spin, dt: float, dim: int) -> np.ndarray:
    if dim == 2:
        ang = float(spin) * dt
        c, s = math.cos(ang), math.sin(ang)
        return np.array([[c, -s], [s, c]])
    omega = np.asarray(spin, dtype=float)
    theta = float(np.linalg.norm(omega)) * dt
    if theta < 1e-300:
        return np.eye(3)
    axis = omega / np.linalg.norm(omega)
    K = np.array([[0.0, -axis[2], axis[1]],
                  [axis[2], 0.0, -axis[0]],
                  [-axis[1], axis[0], 0.0]])
    return np.eye(3) + math.sin(theta) * K + (1.0 - math.cos(theta)) * (K @ K)


def advance_pose(pose: RigidPose, motion: RigidMotion, dt: float) -> RigidPose:
    """Advance by the exact rigid propagator for a constant motion.

    The caller passes the midpoint-averaged motion of the step (see stepper);
    here the translation is h <- h + dt V about the motion's center and the
    orientation advances by the exact rotation exponential, so poses stay
    isometries to machine precision.
    """
    Q = _rotation_exponential(motion.spin, dt, pose.dim)
    c = np.asarray(motion.center, dtype=float)
    new_c = c + dt * np.asarray(motion.velocity)
    new_center = new_c + Q @ (np.asarray(pose.center) - c)
    new_R = Q @ np.asarray(pose.rotation)
    if _orthonormality_drift(new_R) > _REORTH_TRIGGER:
        new_R = _reorthonormalize(new_R)
    return RigidPose(new_center, new_R)


def material_map(pose_t: RigidPose, pose_0: RigidPose, y: np.ndarray) -> np.ndarray:
    """Map body material points from the pose_0 placement to the pose_t one."""
    R = np.asarray(pose_t.rotation) @ np.asarray(pose_0.rotation).T
    y = np.atleast_2d(np.asarray(y, dtype=float))
    out = (y - np.asarray(pose_0.center)) @ R.T + np.asarray(pose_t.center)
    return out


def inverse_material_map(pose_t: RigidPose, pose_0: RigidPose, x: np.ndarray) -> np.ndarray:
    return material_map(pose_0, pose_t, x)


# ---------------------------------------------------------------------------
# collision bookkeeping
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HaltReport:
    time: float
    wall_distance: float
    threshold: float
    message: str


def wall_guard(domain: Domain, shape: BodyShape, pose: RigidPose,
               sigma: float, time: float) -> HaltReport | None:
    """Halt exactly when the wall clearance drops strictly below 3 sigma / 2."""
    dist = wall_distance(domain, shape, pose)
    threshold = 1.5 * sigma
    if dist < threshold:
        return HaltReport(
            time=time, wall_distance=dist, threshold=threshold,
            message=(f"wall clearance {dist:.6e} fell below 3*sigma/2 = "
                     f"{threshold:.6e} at t = {time:.6e}"))
    return None


def _speed_constant(shape: BodyShape, inertia: BodyInertia) -> float:
    """C0 = sqrt(2) max(1, R_max) / min(1, lambda_0)^(1/2).

    lambda_0 is the smallest of the mass and the inertia eigenvalues, so the
    kinematic chain |P_S u| <= C0 (int rho |u|^2)^(1/2) holds with either the
    translational or the rotational part saturating.
    """
    r_max = max(shape.semi_axes) + float(np.linalg.norm(inertia.center_body))
    if inertia.dim == 2:
        lam = min(inertia.mass, float(inertia.moment))
    else:
        lam = min(inertia.mass, float(np.min(np.linalg.eigvalsh(inertia.moment))))
    if lam <= 0.0 or inertia.mass <= 0.0:
        raise DegenerateInertia("collision bound needs positive mass and inertia")
    return math.sqrt(2.0) * max(1.0, r_max) / math.sqrt(min(1.0, lam))


def collision_time_bound(E0: float, forcing_sup: float, dist0: float, sigma: float,
                         rho_bar: float, gamma: float, shape: BodyShape,
                         inertia: BodyInertia, t_end: float,
                         gronwall_constant: float = 1.0) -> float:
    """Certified time below which the body cannot reach the 2 sigma shell.

    Solves T = (dist0 - 2 sigma) / (C0 rho_bar^(1/2) [e^T E0 + C T g^(2 gamma_1)]^(1/2))
    with gamma_1 = 1 - 1/gamma by safeguarded bisection to 1e-10.  Returns
    t_end when even the full horizon cannot close the gap, and 0 (with a
    warning) when the initial clearance is already <= 2 sigma.
    """
    if E0 < 0.0 or not np.isfinite(E0):
        raise DegenerateInertia("collision bound needs a finite nonnegative energy")
    C0 = _speed_constant(shape, inertia)
    gap = dist0 - 2.0 * sigma
    if gap <= 0.0:
        warnings.warn("initial wall clearance is already within 2*sigma; bound is 0",
                      stacklevel=2)
        return 0.0
    gamma_1 = 1.0 - 1.0 / gamma

    def travel(T: float) -> float:
        bound = math.exp(T) * E0 + gronwall_constant * T * forcing_sup ** (2.0 * gamma_1)
        return T * C0 * math.sqrt(rho_bar) * math.sqrt(max(bound, 0.0))

    if travel(t_end) < gap:
        return t_end
    lo, hi = 0.0, t_end
    while hi - lo > 1e-10:
        mid = 0.5 * (lo + hi)
        if travel(mid) < gap:
            lo = mid
        else:
            hi = mid
    return lo


# ---------------------------------------------------------------------------
# transported body density (grid-side view)
# ---------------------------------------------------------------------------

def transported_body_density(rho_body, shape: BodyShape, pose_0: RigidPose,
                             pose_t: RigidPose, points: np.ndarray,
                             sharp: bool = True, width: float = 0.0) -> np.ndarray:
    """rho chi_S at lab points, transported exactly through the material map."""
    from .geometry import MollifiedIndicator, signed_distance

    y0 = inverse_material_map(pose_t, pose_0, points)
    rho = rho_body(y0 - pose_0.center) if callable(rho_body) else float(rho_body)
    sd = signed_distance(shape, pose_0, y0)
    if sharp:
        chi = np.where(sd < 0.0, 1.0, np.where(sd == 0.0, 0.5, 0.0))
    else:
        chi = MollifiedIndicator(shape, pose_0, width).from_signed_distance(sd)
    return rho * chi
