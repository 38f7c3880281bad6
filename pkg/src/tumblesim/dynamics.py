"""Discrete-time dynamics of a tumbling microrobot on a planar substrate.

Each step solves one mixed nonlinear complementarity problem whose unknowns
are the end-of-step generalized velocity, the equivalent-contact-point pair,
the contact impulses, the normal-cone multipliers and the slip multiplier.
The constraint functions are evaluated at the end-of-step pose (which itself
depends on the solved velocity), so contact points and gaps are implicit
unknowns rather than frozen at the start of the step.

Frame conventions: the simulation frame is attached to the substrate, whose
surface is the plane z = 0 with outward normal +z. Inclines tilt gravity
instead of the plane, which is equivalent and keeps every contact quantity
axis-aligned; the tumbling direction is +y (up-slope on inclines), and the
field rotates about the x axis. Adhesion, electrostatic attraction and the
normal contact impulse all act along the substrate normal.

Per-step force bookkeeping: the adhesive impulse entering a step is
h * C * A with A the contact area identified at the END of the previous step
(from its cone multipliers and normal impulse); the electrostatic pull is a
constant force applied only while the previous step ended in contact; the
magnetic torque and the gyroscopic wrench are evaluated at the beginning of
the step.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import _kernels, rotations
from .contact import (
    ContactFrame,
    ContactSolution,
    FrictionParams,
    dissipation_rate,
    normal_cone_rows,
    wrench_basis,
)
from .geometry import ConvexUnion, Pose, facet_area, pieces_of
from .mncp import MncpProblem, NonConvergence, SolverConfig, solve

GRAVITY = 9.81  # m/s^2

# nondimensional threshold used for "is there contact" and "is this facet
# loaded" decisions (normal impulse relative to the static load impulse,
# cone weights relative to their unit scale)
CONTACT_THRESHOLD = 1e-3

# facets count as geometrically active when the constraint value at the ECP
# is above this (meters); converged solutions sit many orders below
ACTIVITY_TOL = 1e-9

PENETRATION_TOL = 1e-9  # step acceptance bound on the support gap (m)

MAX_HALVINGS = 8

# hand-coded step Jacobian; set False to fall back to finite differences
USE_ANALYTIC_JACOBIAN = True

# soft-min width (m) for the support-height complementarity row: keeps the
# row differentiable when several corners of a landing facet tie, at a bias
# below the penetration tolerance
GAP_SOFTENING = 2e-10

# compiled residual/Jacobian kernels (numba); numpy closures otherwise
USE_COMPILED_KERNELS = _kernels.HAVE_NUMBA


class StepFailure(RuntimeError):
    """A step could not be completed even after halving the step size."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class AmbiguousContact(RuntimeWarning):
    """More than two facet multipliers were active at once."""


@dataclass(frozen=True)
class InertiaParams:
    """Mass and body-frame principal moments of inertia."""

    m: float
    I_xx: float
    I_yy: float
    I_zz: float

    def __post_init__(self):
        if min(self.m, self.I_xx, self.I_yy, self.I_zz) <= 0.0:
            raise ValueError("mass and moments of inertia must be positive")

    @classmethod
    def from_cuboid(cls, mass, length, width, height):
        """Uniform-density box: x spans the width, y the length, z the height."""
        return cls(
            m=mass,
            I_xx=mass * (length**2 + height**2) / 12.0,
            I_yy=mass * (width**2 + height**2) / 12.0,
            I_zz=mass * (width**2 + length**2) / 12.0,
        )

    def body_matrix(self):
        return np.diag([self.I_xx, self.I_yy, self.I_zz])

    def generalized_mass(self, rotmat):
        """6x6 mass matrix with the inertia tensor pushed to the world frame."""
        M = np.zeros((6, 6))
        M[:3, :3] = self.m * np.eye(3)
        M[3:, 3:] = rotmat @ self.body_matrix() @ rotmat.T
        return M


@dataclass(frozen=True)
class MagneticDrive:
    """Rotating external field and the robot's embedded magnetization.

    The field rotates counterclockwise about ``axis`` (default -x, which
    drives tumbling toward +y): B(t) = B (cos(2 pi f t + phase) y' +
    sin(...) z') with (axis, y', z') right-handed. ``magnetization_body`` is
    the body-frame magnetization vector (A/m), alignment offset included.
    """

    field_t: float
    frequency_hz: float
    magnetic_volume: float
    magnetization_body: np.ndarray
    axis: np.ndarray = field(default_factory=lambda: np.array([-1.0, 0.0, 0.0]))
    phase: float = 0.0

    def __post_init__(self):
        object.__setattr__(
            self, "magnetization_body", np.asarray(self.magnetization_body, dtype=float)
        )
        ax = np.asarray(self.axis, dtype=float)
        norm = np.linalg.norm(ax)
        if norm < 1e-12:
            raise ValueError("rotation axis must be nonzero")
        object.__setattr__(self, "axis", ax / norm)

    def _transverse_frame(self):
        ref = np.array([0.0, 1.0, 0.0])
        y_p = ref - (ref @ self.axis) * self.axis
        if np.linalg.norm(y_p) < 1e-9:
            ref = np.array([0.0, 0.0, 1.0])
            y_p = ref - (ref @ self.axis) * self.axis
        y_p /= np.linalg.norm(y_p)
        return y_p, np.cross(self.axis, y_p)

    def field_at(self, t):
        """World-frame field vector; broadcasts over an array of times."""
        y_p, z_p = self._transverse_frame()
        ang = 2.0 * np.pi * self.frequency_hz * np.asarray(t, dtype=float) + self.phase
        return self.field_t * (
            np.cos(ang)[..., None] * y_p + np.sin(ang)[..., None] * z_p
        )

    def with_aligned_phase(self, pose):
        """Phase such that B(0) is parallel to the in-plane magnetization."""
        e_world = rotations.rotate(pose.quaternion, self.magnetization_body)
        y_p, z_p = self._transverse_frame()
        ey, ez = float(e_world @ y_p), float(e_world @ z_p)
        if abs(ey) < 1e-15 and abs(ez) < 1e-15:
            return self
        return replace(self, phase=float(np.arctan2(ez, ey)))


@dataclass(frozen=True)
class SubstrateParams:
    """Material pairing of robot and substrate plus the incline angle."""

    adhesion_coefficient: float  # N/m^2
    mu: float
    electrostatic_force: float  # N
    incline_deg: float = 0.0

    def __post_init__(self):
        if self.adhesion_coefficient < 0 or self.mu < 0 or self.electrostatic_force < 0:
            raise ValueError("material parameters must be nonnegative")
        if not 0.0 <= self.incline_deg < 90.0:
            raise ValueError("incline must lie in [0, 90) degrees")

    def gravity_vector(self):
        """Gravity in the substrate frame: down-slope (-y) and into the plane."""
        theta = np.deg2rad(self.incline_deg)
        return GRAVITY * np.array([0.0, -np.sin(theta), -np.cos(theta)])


@dataclass(frozen=True, eq=False)
class SimulationSetup:
    """Everything constant over a run."""

    body: object  # ConvexBody or ConvexUnion
    inertia: InertiaParams
    drive: MagneticDrive
    substrate: SubstrateParams
    friction: FrictionParams
    solver: SolverConfig = SolverConfig()

    def pieces(self):
        return pieces_of(self.body)

    def length_scale(self):
        verts = np.concatenate([p.vertices for p in self.pieces()])
        return 2.0 * float(np.max(np.linalg.norm(verts, axis=1)))

    def max_face_area(self):
        return max(
            (a for p in self.pieces() for a in p.face_areas if a), default=0.0
        )

    def force_scale(self):
        drive = self.drive
        torque = drive.field_t * drive.magnetic_volume * float(
            np.linalg.norm(drive.magnetization_body)
        )
        return (
            self.inertia.m * GRAVITY
            + self.substrate.electrostatic_force
            + self.substrate.adhesion_coefficient * self.max_face_area()
            + torque / self.length_scale()
        )


@dataclass
class StepState:
    """State carried between steps, including the warm-start bookkeeping."""

    pose: Pose
    V: np.ndarray
    contact_area_prev: float
    p_adh_prev: float
    t: float
    in_contact: bool = True
    active_piece: int = 0
    active_index: int = 0
    guess: Optional[np.ndarray] = None

    def __post_init__(self):
        self.V = np.asarray(self.V, dtype=float).reshape(6)


def magnetic_torque(drive, pose, t):
    """Torque on the robot from the rotating field at time t (N m)."""
    b = drive.field_at(t)
    e_world = rotations.rotate(pose.quaternion, drive.magnetization_body)
    return drive.magnetic_volume * np.cross(e_world, b)


def adhesion_force(coefficient, contact_area):
    """Adhesive pull (N) for the current contact area; acts along -n."""
    if contact_area < 0:
        raise ValueError("contact area must be nonnegative")
    return coefficient * contact_area


def contact_area_update(solution, body, threshold=CONTACT_THRESHOLD):
    """Contact area implied by a converged step's multipliers.

    No contact (p_n at the noise floor) gives area 0. Exactly one loaded
    facet gives that facet's area; two adjacent loaded facets mean the ECP
    sits on a shared edge, i.e. line contact, which carries no area. More
    than two (or non-adjacent pairs) is geometrically ambiguous: logged, and
    the largest-multiplier facet wins.

    ``threshold`` applies to the dimensionless cone weights and to the
    normal impulse relative to ``solution.p_n_scale``.
    """
    if solution.p_n <= threshold * solution.p_n_scale:
        return 0.0, None
    weights = np.array(solution.l1, dtype=float)
    weights[solution.active_index] = 1.0
    active = [
        i
        for i in range(body.num_constraints)
        if weights[i] > threshold and solution.f_values_a1[i] > -ACTIVITY_TOL
    ]
    if not active:
        active = [int(np.argmax(solution.f_values_a1))]
    if len(active) == 1:
        idx = active[0]
        return facet_area(body, idx), idx
    if len(active) == 2 and frozenset(active) not in body.not_adjacent:
        return 0.0, None
    idx = max(active, key=lambda i: weights[i])
    warnings.warn(
        f"{len(active)} facet multipliers active at once on {body.label}; "
        f"falling back to facet {idx}",
        AmbiguousContact,
        stacklevel=2,
    )
    return facet_area(body, idx), idx


def _predicted_pose(state, h):
    pos = state.pose.position + h * state.V[:3]
    quat = rotations.multiply(rotations.exp_map(h * state.V[3:]), state.pose.quaternion)
    return Pose(pos, rotations.normalize(quat))


def _select_piece(pieces, pose, incumbent, margin=1e-9):
    """Index of the piece reaching lowest at the pose, with hysteresis."""
    if len(pieces) == 1:
        return 0
    mat = pose.rotation_matrix()
    depths = [float(p.lowest_height(pose.position, mat)) for p in pieces]
    best = int(np.argmin(depths))
    if depths[incumbent] <= depths[best] + margin:
        return incumbent
    return best


def _pick_active(piece, pose, point):
    """Constraint at the support point whose normal faces the substrate best."""
    mat = pose.rotation_matrix()
    vals, grads = piece.evaluate_world(pose.position, mat, point)
    candidates = np.flatnonzero(vals > -ACTIVITY_TOL)
    if candidates.size == 0:
        candidates = np.array([int(np.argmax(vals))])
    down_alignment = -grads[candidates, 2]
    return int(candidates[int(np.argmax(down_alignment))])


@dataclass
class AssembledStep:
    """One step's complementarity problem plus the surrounding metadata."""

    problem: MncpProblem
    piece_index: int
    active_index: int
    h: float
    impulse_scale: float
    applied_impulse: np.ndarray
    frame: ContactFrame
    piece: object
    num_constraints: int

    def split(self, z):
        u = z[: self.problem.dim_u]
        v = z[self.problem.dim_u :]
        m = self.num_constraints
        return {
            "V": u[0:6],
            "a1": u[6:9],
            "a2": u[9:12],
            "p_t": u[12],
            "p_o": u[13],
            "p_r": u[14],
            "l1": v[0:m],
            "l_sub": v[m],
            "sigma": v[m + 1],
            "p_n": v[m + 2],
        }


_SCALE_CACHE = {}


def _step_scales(setup, h, m, speed_factor=1.0):
    """Nondimensionalization vectors (cached per setup / step / speed bucket).

    ``speed_factor`` inflates the velocity and impulse scales when the
    incoming state moves much faster than the quasi-static estimate (violent
    impacts, runaway slides), keeping the scaled system well conditioned.
    """
    key = (setup, h, m, speed_factor)
    hit = _SCALE_CACHE.get(key)
    if hit is not None:
        return hit
    inertia = setup.inertia
    drive = setup.drive
    fric = setup.friction
    length_scale = setup.length_scale()
    impulse = h * setup.force_scale() * speed_factor
    torque_imp = (
        max(
            h
            * drive.field_t
            * drive.magnetic_volume
            * float(np.linalg.norm(drive.magnetization_body)),
            impulse * length_scale,
        )
        * speed_factor
    )
    omega_star = np.sqrt(
        torque_imp / h * np.pi / min(inertia.I_xx, inertia.I_yy, inertia.I_zz)
    )
    v_star = max(
        omega_star * length_scale / 2.0, 4.0 * length_scale * drive.frequency_hz, 1e-2
    )
    v_star *= speed_factor
    omega_scale = 2.0 * v_star / length_scale
    mu_hat = max(fric.mu, 0.1)
    res_u = np.concatenate(
        [
            np.full(3, impulse),
            np.full(3, torque_imp),
            np.full(3, length_scale),
            np.full(3, 1.0),
            np.full(3, mu_hat * impulse * v_star),
        ]
    )
    res_v = np.concatenate(
        [
            np.full(m, length_scale),
            [length_scale],
            [(mu_hat * impulse) ** 2],
            [length_scale],
        ]
    )
    var = np.concatenate(
        [
            np.full(3, v_star),
            np.full(3, omega_scale),
            np.full(6, length_scale),
            np.full(3, impulse),
            np.full(m, 1.0),
            [1.0],
            [v_star],
            [impulse],
        ]
    )
    out = (res_u, res_v, var, impulse)
    if len(_SCALE_CACHE) > 256:
        _SCALE_CACHE.clear()
    _SCALE_CACHE[key] = out
    return out


def _speed_factor(setup, h, state):
    """Power-of-two bucket of how fast the state is versus the static scale."""
    length_scale = setup.length_scale()
    _, _, var, _ = _step_scales(setup, h, 1)
    v_star = var[0]
    speed = max(
        float(np.max(np.abs(state.V[:3]))),
        float(np.max(np.abs(state.V[3:]))) * length_scale / 2.0,
    )
    if speed <= v_star:
        return 1.0
    return float(2 ** int(np.ceil(np.log2(speed / v_star))))


def assemble_step(state, h, setup, piece_index=None, active_index=None, use_kernels=None):
    """Build the step's mixed complementarity problem.

    Unknowns: u = [V; a1; a2; p_t; p_o; p_r], v = [l1; l_sub; sigma; p_n].
    Equalities: 6 momentum rows, 6 ECP/normal-cone rows, 3 friction rows.
    Complementarity: facet multipliers vs facet values at a1, the substrate
    multiplier vs the plane value at a2, sigma vs the ellipsoid slack, and
    p_n vs the body's height over the substrate.
    """
    pieces = setup.pieces()
    pose_pred = _predicted_pose(state, h)
    if piece_index is None:
        piece_index = _select_piece(pieces, pose_pred, state.active_piece)
    piece = pieces[piece_index]
    if active_index is None:
        if piece_index == state.active_piece and state.guess is not None:
            active_index = state.active_index
        else:
            seed = piece.lowest_patch_center(pose_pred, np.array([0.0, 0.0, -1.0]))
            active_index = _pick_active(piece, pose_pred, seed)

    m = piece.num_constraints
    frame = ContactFrame.for_substrate()
    inertia = setup.inertia
    sub = setup.substrate
    fric = setup.friction
    drive = setup.drive

    pos0 = state.pose.position
    quat0 = state.pose.quaternion
    rot0 = state.pose.rotation_matrix()
    M_w = inertia.generalized_mass(rot0)
    V_u = state.V

    # applied impulse: gravity (tilted), adhesion and electrostatic pull along
    # -n while in contact, field torque and gyroscopic wrench explicit
    f_normal = sub.adhesion_coefficient * state.contact_area_prev
    if state.in_contact:
        f_normal += sub.electrostatic_force
    lin = h * (inertia.m * sub.gravity_vector() - f_normal * frame.n)
    torque = magnetic_torque(drive, state.pose, state.t)
    I_w0 = M_w[3:, 3:]
    gyro = np.cross(V_u[3:], I_w0 @ V_u[3:])
    ang = h * (torque - gyro)
    p_app = np.concatenate([lin, ang])

    res_u, res_v, var, _ = _step_scales(setup, h, m, _speed_factor(setup, h, state))
    # contact thresholds stay anchored to the static load impulse
    impulse = _step_scales(setup, h, m, 1.0)[3]

    k = active_index

    mass = inertia.m
    I_w = M_w[3:, 3:]
    mu, e_t, e_o, e_r = fric.mu, fric.e_t, fric.e_o, fric.e_r

    def residual(u, v):
        # hot path: the contact frame is axis-aligned (n = z, t = y, o = -x)
        # so every wrench product is written out componentwise
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        V = u[..., 0:6]
        a1 = u[..., 6:9]
        a2 = u[..., 9:12]
        p_t = u[..., 12]
        p_o = u[..., 13]
        p_r = u[..., 14]
        l1 = v[..., 0:m]
        l_sub = v[..., m]
        sigma = v[..., m + 1]
        p_n = v[..., m + 2]

        pos1 = pos0 + h * V[..., 0:3]
        quat1 = rotations.multiply(rotations.exp_map(h * V[..., 3:6]), quat0)
        quat1 = quat1 / np.sqrt(
            np.einsum("...i,...i->...", quat1, quat1)
        )[..., None]
        rot1 = rotations.to_matrix(quat1)

        f_vals, f_grads = piece.evaluate_world(pos1, rot1, a1)
        # signed distance of the whole piece to the plane: gating p_n on the
        # support height instead of the constraint value at a2 rejects the
        # spurious branch where contact is bookkept on a facet's waterline
        # while a corner sinks through the substrate
        gap = piece.lowest_height(pos1, rot1, GAP_SOFTENING)

        shape = np.broadcast_shapes(u.shape[:-1], v.shape[:-1])
        g_rows = np.empty(shape + (15,))
        f_rows = np.empty(shape + (m + 3,))

        # momentum balance
        r = a1 - pos1
        rx, ry, rz = r[..., 0], r[..., 1], r[..., 2]
        dV = V - V_u
        g_rows[..., 0] = mass * dV[..., 0] - (-p_o) - p_app[0]
        g_rows[..., 1] = mass * dV[..., 1] - p_t - p_app[1]
        g_rows[..., 2] = mass * dV[..., 2] - p_n - p_app[2]
        ang = np.einsum("ij,...j->...i", I_w, dV[..., 3:6])
        g_rows[..., 3] = ang[..., 0] - (p_n * ry - p_t * rz) - p_app[3]
        g_rows[..., 4] = ang[..., 1] - (-p_n * rx - p_o * rz) - p_app[4]
        g_rows[..., 5] = ang[..., 2] - (p_t * rx + p_o * ry + p_r) - p_app[5]

        # equivalent contact point and normal-cone alignment
        weights = l1.copy()
        weights[..., k] = 1.0
        cone_f = np.einsum("...m,...mi->...i", weights, f_grads)
        g_rows[..., 6:9] = a1 - a2 + l1[..., k, None] * cone_f
        g_rows[..., 9:12] = cone_f
        g_rows[..., 11] += l_sub  # substrate cone is l_sub * z

        # maximum-dissipation stationarity
        vt = V[..., 1] - rz * V[..., 3] + rx * V[..., 5]
        vo = -V[..., 0] - rz * V[..., 4] + ry * V[..., 5]
        vr = V[..., 5]
        mupn = mu * p_n
        g_rows[..., 12] = e_t * e_t * mupn * vt + p_t * sigma
        g_rows[..., 13] = e_o * e_o * mupn * vo + p_o * sigma
        g_rows[..., 14] = e_r * e_r * mupn * vr + p_r * sigma

        f_rows[..., 0:m] = -f_vals
        f_rows[..., m] = -a2[..., 2]
        f_rows[..., m + 1] = (
            mupn * mupn
            - (p_t / e_t) ** 2
            - (p_o / e_o) ** 2
            - (p_r / e_r) ** 2
        )
        f_rows[..., m + 2] = gap
        return g_rows, f_rows

    n_aff = piece.num_affine
    i_sig = 16 + m
    i_pn = 17 + m

    def jacobian(u_part, v_part):
        # derivative of the raw stacked residual at one point; rotation
        # chains use d/dw R(h w) v = h w_j x v, exact at w = 0 and O((h w)^2)
        # otherwise, which only costs Newton a little contraction
        z = np.concatenate([u_part, v_part])
        V = z[0:6]
        a1 = z[6:9]
        a2 = z[9:12]
        p_t, p_o, p_r = z[12], z[13], z[14]
        l1 = z[15 : 15 + m]
        sigma = z[i_sig]
        p_n = z[i_pn]

        pos1 = pos0 + h * V[:3]
        quat1 = rotations.multiply(rotations.exp_map(h * V[3:6]), quat0)
        quat1 = quat1 / np.linalg.norm(quat1)
        rot1 = rotations.to_matrix(quat1)
        _, G = piece.evaluate_world(pos1, rot1, a1)
        weights = l1.copy()
        weights[k] = 1.0
        cone = weights @ G
        r = a1 - pos1
        lk = l1[k]

        n = 18 + m
        J = np.zeros((n, n))

        # momentum
        J[0, 0] = J[1, 1] = J[2, 2] = mass
        J[0, 13] = 1.0
        J[1, 12] = -1.0
        J[2, i_pn] = -1.0
        J[3:6, 3:6] = I_w
        Mr = np.array(
            [[0.0, p_n, -p_t], [-p_n, 0.0, -p_o], [p_t, p_o, 0.0]]
        )
        J[3:6, 6:9] = -Mr
        J[3:6, 0:3] = h * Mr
        J[3, i_pn] = -r[1]
        J[3, 12] = r[2]
        J[4, i_pn] = r[0]
        J[4, 13] = r[2]
        J[5, 12] = -r[0]
        J[5, 13] = -r[1]
        J[5, 14] = -1.0

        # curvature of cylindrical facets
        h_sum = np.zeros((3, 3))
        for ci in range(len(piece.cyl_radii)):
            proj = np.eye(3) - np.outer(piece.cyl_axes[ci], piece.cyl_axes[ci])
            h_sum += (
                weights[n_aff + ci]
                * (rot1 @ proj @ rot1.T)
                / piece.cyl_radii[ci]
            )
        cone_cross = np.array(
            [
                [0.0, cone[2], -cone[1]],
                [-cone[2], 0.0, cone[0]],
                [cone[1], -cone[0], 0.0],
            ]
        )

        # ECP pair row
        J[6:9, 6:9] = np.eye(3) + lk * h_sum
        J[6:9, 0:3] = -h * lk * h_sum
        J[6:9, 3:6] = h * lk * cone_cross
        J[6:9, 9:12] = -np.eye(3)
        J[6:9, 15 + k] = cone
        # cone alignment row
        J[9:12, 6:9] = h_sum
        J[9:12, 0:3] = -h * h_sum
        J[9:12, 3:6] = h * cone_cross
        for i in range(m):
            if i != k:
                J[6:9, 15 + i] = lk * G[i]
                J[9:12, 15 + i] = G[i]
        J[11, 15 + m] = 1.0

        # friction stationarity
        wv = V[3:6]
        vt = V[1] - r[2] * wv[0] + r[0] * wv[2]
        vo = -V[0] - r[2] * wv[1] + r[1] * wv[2]
        vr = wv[2]
        dvt_dr = np.array([wv[2], 0.0, -wv[0]])
        dvo_dr = np.array([0.0, wv[2], -wv[1]])
        c_t, c_o, c_r = mu * e_t * e_t, mu * e_o * e_o, mu * e_r * e_r
        J[12, 0:3] = c_t * p_n * (np.array([0.0, 1.0, 0.0]) - h * dvt_dr)
        J[12, 3:6] = c_t * p_n * np.array([-r[2], 0.0, r[0]])
        J[12, 6:9] = c_t * p_n * dvt_dr
        J[12, 12] = sigma
        J[12, i_sig] = p_t
        J[12, i_pn] = c_t * vt
        J[13, 0:3] = c_o * p_n * (np.array([-1.0, 0.0, 0.0]) - h * dvo_dr)
        J[13, 3:6] = c_o * p_n * np.array([0.0, -r[2], r[1]])
        J[13, 6:9] = c_o * p_n * dvo_dr
        J[13, 13] = sigma
        J[13, i_sig] = p_o
        J[13, i_pn] = c_o * vo
        J[14, 5] = c_r * p_n
        J[14, 14] = sigma
        J[14, i_sig] = p_r
        J[14, i_pn] = c_r * vr

        # facet values at a1
        for i in range(m):
            J[15 + i, 6:9] = -G[i]
            J[15 + i, 0:3] = h * G[i]
            J[15 + i, 3:6] = h * np.cross(r, G[i])
        # substrate value at a2
        J[15 + m, 11] = -1.0
        # ellipsoid slack
        J[i_sig, 12] = -2.0 * p_t / (e_t * e_t)
        J[i_sig, 13] = -2.0 * p_o / (e_o * e_o)
        J[i_sig, 14] = -2.0 * p_r / (e_r * e_r)
        J[i_sig, i_pn] = 2.0 * mu * mu * p_n
        # support height
        _, rot_grad = piece.lowest_height_jacobian(pos1, rot1, GAP_SOFTENING)
        J[i_pn, 2] = h
        J[i_pn, 3:6] = h * rot_grad
        return J

    residual_fn = residual
    jacobian_fn = jacobian if USE_ANALYTIC_JACOBIAN else None
    if use_kernels is None:
        use_kernels = USE_COMPILED_KERNELS
    if use_kernels:
        const = (
            m,
            h,
            pos0,
            quat0,
            V_u,
            M_w[3:, 3:],
            p_app,
            inertia.m,
            fric.mu,
            fric.e_t,
            fric.e_o,
            fric.e_r,
            k,
            piece.affine_normals,
            piece.affine_offsets,
            piece.cyl_centers,
            piece.cyl_axes,
            piece.cyl_radii,
            piece.vertices,
            GAP_SOFTENING,
        )

        def residual_fn(u, v, _c=const):
            z = np.concatenate(
                [np.asarray(u, dtype=float), np.asarray(v, dtype=float)], axis=-1
            )
            flat = np.ascontiguousarray(z.reshape(-1, z.shape[-1]))
            g, f = _kernels.residual_batch(flat, 15, *_c)
            lead = z.shape[:-1]
            return g.reshape(lead + (15,)), f.reshape(lead + (m + 3,))

        if USE_ANALYTIC_JACOBIAN:
            jac_const = const[:6] + const[7:]  # p_app does not enter the Jacobian

            def jacobian_fn(u, v, _c=jac_const):
                z = np.ascontiguousarray(np.concatenate([u, v]))
                return _kernels.jacobian_point(z, *_c)

    problem = MncpProblem(
        dim_u=15,
        dim_v=m + 3,
        residual_fn=residual_fn,
        jacobian_fn=jacobian_fn,
        residual_scale_u=res_u,
        residual_scale_v=res_v,
        variable_scale=var,
    )
    return AssembledStep(
        problem=problem,
        piece_index=piece_index,
        active_index=active_index,
        h=h,
        impulse_scale=impulse,
        applied_impulse=p_app,
        frame=frame,
        piece=piece,
        num_constraints=m,
    )


def _cold_guess(state, assembled, h):
    """Initial iterate seeded at the center of the predicted lowest patch."""
    piece = assembled.piece
    pose_pred = _predicted_pose(state, h)
    a1 = piece.lowest_patch_center(pose_pred, np.array([0.0, 0.0, -1.0]))
    a2 = np.array([a1[0], a1[1], 0.0])
    gap = max(a1[2], 0.0)
    m = assembled.num_constraints
    z = np.zeros(15 + m + 3)
    z[0:6] = state.V
    z[6:9] = a1 if gap > 0 else a2
    z[9:12] = a2
    z[15 + assembled.active_index] = gap
    z[15 + m] = 1.0  # substrate cone weight
    if gap <= 0.0:
        z[15 + m + 2] = assembled.impulse_scale  # start on the contact branch
    return z


def _warm_guess(state, assembled):
    z = state.guess
    if z is None or len(z) != assembled.problem.dim:
        return None
    return z.copy()


@dataclass
class StepRecord:
    """Per-step diagnostics retained in the trajectory."""

    t: float
    h: float
    position: np.ndarray
    quaternion: np.ndarray
    V: np.ndarray
    piece: int
    face: Optional[int]
    contact_area: float
    adhesion: float
    p_n: float
    p_t: float
    p_o: float
    p_r: float
    sigma: float
    slip_t: float
    slip_o: float
    gap: float
    support_gap: float
    ellipsoid_slack: float
    dissipation: float
    residual: float
    iterations: int


def step(state, h, setup):
    """Advance one step of at most h, halving on solver or contact trouble.

    Returns (new_state, record). The state actually advanced by record.h,
    which is h / 2**j for the first j that succeeded.
    """
    last_error = None
    h_try = h
    for _ in range(MAX_HALVINGS + 1):
        try:
            return _attempt_step(state, h_try, setup)
        except (NonConvergence, _PenetrationReject) as err:
            last_error = err
            h_try *= 0.5
    raise StepFailure(f"step at t={state.t:.6g} failed after {MAX_HALVINGS} halvings: {last_error}")


class _PenetrationReject(RuntimeError):
    pass


def _attempt_step(state, h, setup):
    assembled = assemble_step(state, h, setup)

    def attempts():
        guess = _warm_guess(state, assembled)
        if guess is not None:
            yield assembled, guess
        yield assembled, _cold_guess(state, assembled, h)
        # last resort inside this h: re-pick the active constraint cold
        pose_pred = _predicted_pose(state, h)
        seed = assembled.piece.lowest_patch_center(
            pose_pred, np.array([0.0, 0.0, -1.0])
        )
        fresh_k = _pick_active(assembled.piece, pose_pred, seed)
        if fresh_k != assembled.active_index:
            re_assembled = assemble_step(
                state, h, setup, piece_index=assembled.piece_index, active_index=fresh_k
            )
            yield re_assembled, _cold_guess(state, re_assembled, h)

    report = None
    err = None
    for asm, z0 in attempts():
        try:
            report = solve(asm.problem, z0, setup.solver)
            assembled = asm
            break
        except NonConvergence as exc:
            err = exc
    if report is None:
        raise err

    parts = assembled.split(report.solution)
    V1 = parts["V"]
    pos1 = state.pose.position + h * V1[:3]
    quat1 = rotations.normalize(
        rotations.multiply(rotations.exp_map(h * V1[3:]), state.pose.quaternion)
    )
    pose1 = Pose(pos1, quat1)

    mat1 = pose1.rotation_matrix()
    f_vals_a1 = assembled.piece.evaluate_world(
        pos1, mat1, parts["a1"], with_gradients=False
    )
    # acceptance: no piece of the body may end the step below the substrate
    support_gap = min(
        float(p.lowest_height(pos1, mat1)) for p in setup.pieces()
    )
    if support_gap < -PENETRATION_TOL:
        raise _PenetrationReject(f"separation measure {support_gap:.3e} m")
    gap_measure = float(assembled.piece.lowest_height(pos1, mat1))
    solution = ContactSolution(
        a1=parts["a1"],
        a2=parts["a2"],
        p_n=float(parts["p_n"]),
        p_t=float(parts["p_t"]),
        p_o=float(parts["p_o"]),
        p_r=float(parts["p_r"]),
        sigma=float(parts["sigma"]),
        l1=parts["l1"],
        l2=np.array([parts["l_sub"]]),
        active_index=assembled.active_index,
        p_n_scale=assembled.impulse_scale,
        f_values_a1=f_vals_a1,
    )

    area, face = contact_area_update(solution, assembled.piece)
    adhesion = adhesion_force(setup.substrate.adhesion_coefficient, area)
    in_contact = solution.p_n > CONTACT_THRESHOLD * assembled.impulse_scale

    # next designated active constraint: heaviest cone weight this step
    weights = np.array(parts["l1"], dtype=float)
    weights[assembled.active_index] = 1.0
    next_k = int(np.argmax(weights))

    r = parts["a1"] - pos1
    slip_t = float(V1[1] - r[2] * V1[3] + r[0] * V1[5])
    slip_o = float(-V1[0] - r[2] * V1[4] + r[1] * V1[5])
    slip_r = float(V1[5])
    gap = gap_measure

    record = StepRecord(
        t=state.t + h,
        h=h,
        position=pos1,
        quaternion=quat1,
        V=V1.copy(),
        piece=assembled.piece_index,
        face=face,
        contact_area=area,
        adhesion=adhesion,
        p_n=solution.p_n,
        p_t=solution.p_t,
        p_o=solution.p_o,
        p_r=solution.p_r,
        sigma=solution.sigma,
        slip_t=slip_t,
        slip_o=slip_o,
        gap=gap,
        support_gap=support_gap,
        ellipsoid_slack=float(
            (setup.friction.mu * solution.p_n) ** 2
            - (solution.p_t / setup.friction.e_t) ** 2
            - (solution.p_o / setup.friction.e_o) ** 2
            - (solution.p_r / setup.friction.e_r) ** 2
        ),
        dissipation=float(
            solution.p_t * slip_t + solution.p_o * slip_o + solution.p_r * slip_r
        ),
        residual=report.final_residual_norm,
        iterations=report.iterations,
    )
    new_state = StepState(
        pose=pose1,
        V=V1.copy(),
        contact_area_prev=area,
        p_adh_prev=h * setup.substrate.adhesion_coefficient * area,
        t=state.t + h,
        in_contact=in_contact,
        active_piece=assembled.piece_index,
        active_index=next_k,
        guess=report.solution.copy(),
    )
    return new_state, record


@dataclass
class Trajectory:
    """Dense per-step history of a run (row 0 is the initial state)."""

    t: np.ndarray
    position: np.ndarray
    quaternion: np.ndarray
    V: np.ndarray
    piece: np.ndarray
    face: np.ndarray  # -1 when no single facet carries the contact
    contact_area: np.ndarray
    adhesion: np.ndarray
    p_n: np.ndarray
    p_t: np.ndarray
    p_o: np.ndarray
    p_r: np.ndarray
    sigma: np.ndarray
    slip_t: np.ndarray
    slip_o: np.ndarray
    gap: np.ndarray
    support_gap: np.ndarray
    ellipsoid_slack: np.ndarray
    dissipation: np.ndarray
    residual: np.ndarray
    iterations: np.ndarray
    final_state: object = None

    @property
    def steps(self):
        return len(self.t) - 1

    def displacement_y(self, t_from, t_to):
        """Up-slope displacement between two times (linear interpolation)."""
        y0 = float(np.interp(t_from, self.t, self.position[:, 1]))
        y1 = float(np.interp(t_to, self.t, self.position[:, 1]))
        return y1 - y0


class _TrajectoryBuilder:
    def __init__(self, initial):
        self.rows = []
        self.initial = initial

    def append(self, record):
        self.rows.append(record)

    def build(self):
        init = self.initial
        recs = self.rows
        return Trajectory(
            t=np.array([init.t] + [r.t for r in recs]),
            position=np.vstack([init.pose.position] + [r.position for r in recs]),
            quaternion=np.vstack([init.pose.quaternion] + [r.quaternion for r in recs]),
            V=np.vstack([init.V] + [r.V for r in recs]),
            piece=np.array([init.active_piece] + [r.piece for r in recs]),
            face=np.array(
                [-1] + [(r.face if r.face is not None else -1) for r in recs]
            ),
            contact_area=np.array(
                [init.contact_area_prev] + [r.contact_area for r in recs]
            ),
            adhesion=np.array(
                [0.0] + [r.adhesion for r in recs]
            ),
            p_n=np.array([0.0] + [r.p_n for r in recs]),
            p_t=np.array([0.0] + [r.p_t for r in recs]),
            p_o=np.array([0.0] + [r.p_o for r in recs]),
            p_r=np.array([0.0] + [r.p_r for r in recs]),
            sigma=np.array([0.0] + [r.sigma for r in recs]),
            slip_t=np.array([0.0] + [r.slip_t for r in recs]),
            slip_o=np.array([0.0] + [r.slip_o for r in recs]),
            gap=np.array([0.0] + [r.gap for r in recs]),
            support_gap=np.array([0.0] + [r.support_gap for r in recs]),
            ellipsoid_slack=np.array([0.0] + [r.ellipsoid_slack for r in recs]),
            dissipation=np.array([0.0] + [r.dissipation for r in recs]),
            residual=np.array([0.0] + [r.residual for r in recs]),
            iterations=np.array([0] + [r.iterations for r in recs]),
        )


def run(initial, duration, h, setup):
    """Integrate for the given duration; deterministic for fixed inputs.

    Raises StepFailure (carrying the partial trajectory) if a step cannot be
    completed; otherwise returns the full Trajectory including the initial
    row.
    """
    if duration < 0:
        raise ValueError("duration must be nonnegative")
    builder = _TrajectoryBuilder(initial)
    state = initial
    t_end = initial.t + duration
    while state.t < t_end - 1e-12:
        h_step = min(h, t_end - state.t)
        try:
            state, record = step(state, h_step, setup)
        except StepFailure as err:
            partial = builder.build()
            partial.final_state = state
            raise StepFailure(str(err), partial) from err
        builder.append(record)
    traj = builder.build()
    traj.final_state = state
    return traj


def resting_state(setup, xy=(0.0, 0.0), h_for_adhesion=1e-4):
    """Initial state: robot dropped flat onto the substrate, at rest.

    Contact bookkeeping (area, electrostatic gate, adhesive impulse) is
    seeded from the geometric contact so the very first step already carries
    the static surface loads.
    """
    pieces = setup.pieces()
    pose0 = Pose(np.array([xy[0], xy[1], 0.0]), rotations.IDENTITY.copy())
    down = np.array([0.0, 0.0, -1.0])
    depths = [float(p.support_point(pose0, down)[2]) for p in pieces]
    piece_idx = int(np.argmin(depths))
    # drop to the softened-gap equilibrium so the first step starts at rest
    mat0 = pose0.rotation_matrix()
    soft = float(pieces[piece_idx].lowest_height(pose0.position, mat0, GAP_SOFTENING))
    pose = Pose(np.array([xy[0], xy[1], -soft]), rotations.IDENTITY.copy())
    piece = pieces[piece_idx]
    seed = piece.lowest_patch_center(pose, down)
    k = _pick_active(piece, pose, seed)
    mat = pose.rotation_matrix()
    _, grads = piece.evaluate_world(pose.position, mat, seed)
    area = 0.0
    if abs(-grads[k, 2] - 1.0) < 1e-6:  # facet lies flush on the plane
        area = facet_area(piece, k)
    return StepState(
        pose=pose,
        V=np.zeros(6),
        contact_area_prev=area,
        p_adh_prev=h_for_adhesion * setup.substrate.adhesion_coefficient * area,
        t=0.0,
        in_contact=True,
        active_piece=piece_idx,
        active_index=k,
    )


def kinetic_energy(setup, state):
    M = setup.inertia.generalized_mass(state.pose.rotation_matrix())
    return 0.5 * float(state.V @ (M @ state.V))
