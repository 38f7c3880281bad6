"""Per-contact algebra: contact frame, wrench maps, nonpenetration and
friction rows.

The contact between the robot (body F, constraints f_i <= 0) and the
substrate (body G, constraints g_j <= 0) is written in terms of an
equivalent-contact-point pair (a1 on F, a2 on G), cone multipliers l1 / l2,
impulses (p_n, p_t, p_o, p_r) and a slip multiplier sigma. The row builders
here return residual blocks that broadcast over a leading batch axis; the
time stepper assembles them into a mixed complementarity problem.

Conventions: one designated active constraint k on F fixes the scale of the
normal cone (it enters with unit weight, so l1[k] measures the separation
distance instead). Friction lives in an ellipsoid (p_t/e_t)^2 + (p_o/e_o)^2
+ (p_r/e_r)^2 <= (mu p_n)^2, and the three tangential rows are the
stationarity conditions of maximum power dissipation over that set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateNormalCone(RuntimeError):
    """All gradient terms of the normal cone vanished."""


@dataclass(frozen=True)
class ContactFrame:
    """Right-handed orthonormal contact frame (t, o, n), n the substrate normal."""

    n: np.ndarray
    t: np.ndarray
    o: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.n, dtype=float).reshape(3)
        t = np.asarray(self.t, dtype=float).reshape(3)
        o = np.asarray(self.o, dtype=float).reshape(3)
        for name, vec in (("n", n), ("t", t), ("o", o)):
            if abs(np.linalg.norm(vec) - 1.0) > 1e-12:
                raise ValueError(f"{name} is not a unit vector")
        if max(abs(n @ t), abs(n @ o), abs(t @ o)) > 1e-12:
            raise ValueError("frame axes are not orthogonal")
        if np.linalg.norm(np.cross(t, o) - n) > 1e-9:
            raise ValueError("(t, o, n) must be right-handed")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "o", o)

    @classmethod
    def for_substrate(cls):
        """Fixed frame of the substrate plane: n = +z, t = forward (+y)."""
        return cls(n=np.array([0.0, 0.0, 1.0]), t=np.array([0.0, 1.0, 0.0]), o=np.array([-1.0, 0.0, 0.0]))


@dataclass(frozen=True)
class FrictionParams:
    """Coulomb coefficient and friction-ellipsoid semi-axes.

    e_t and e_o are dimensionless; e_r carries length so that p_r / e_r is
    commensurate with forces.
    """

    mu: float
    e_t: float = 1.0
    e_o: float = 1.0
    e_r: float = 1.0

    def __post_init__(self):
        if self.mu < 0.0:
            raise ValueError("mu must be nonnegative")
        if min(self.e_t, self.e_o, self.e_r) <= 0.0:
            raise ValueError("ellipsoid semi-axes must be positive")


@dataclass(frozen=True)
class ContactSolution:
    """Converged per-step contact unknowns in physical units.

    ``l1`` holds the raw cone multipliers of the robot constraints; the
    designated active constraint (index ``active_index``) enters the cone at
    unit weight instead, and its ``l1`` entry measures separation. ``p_n_scale``
    is the step's reference normal impulse, used to nondimensionalize
    thresholds; ``f_values_a1`` caches the constraint values at a1.
    """

    a1: np.ndarray
    a2: np.ndarray
    p_n: float
    p_t: float
    p_o: float
    p_r: float
    sigma: float
    l1: np.ndarray
    l2: np.ndarray
    active_index: int
    p_n_scale: float = 1.0
    f_values_a1: np.ndarray = None


def wrench_basis(frame, ecp, cm):
    """Columns [W_n W_t W_o W_r] mapping contact impulses to the CM wrench.

    ecp and cm broadcast over leading axes; the result has shape (..., 6, 4).
    The moment arm is r = ecp - cm.
    """
    ecp = np.asarray(ecp, dtype=float)
    cm = np.asarray(cm, dtype=float)
    r = ecp - cm
    shape = r.shape[:-1]
    cols = []
    for axis in (frame.n, frame.t, frame.o):
        lin = np.broadcast_to(axis, shape + (3,))
        cols.append(np.concatenate([lin, np.cross(r, axis)], axis=-1))
    w_r = np.concatenate(
        [np.zeros(shape + (3,)), np.broadcast_to(frame.n, shape + (3,))], axis=-1
    )
    cols.append(w_r)
    return np.stack(cols, axis=-1)


def normal_cone_rows(f_grads, g_grads, a1, a2, l1, l2, active_index):
    """Equality rows tying the ECP pair to aligned normal cones.

    f_grads: (..., m, 3) world gradients of F's constraints at a1
    g_grads: (..., mg, 3) world gradients of G's constraints at a2
    l1: (..., m) cone weights of F (entry active_index is the separation
    scale and does not weight its own gradient); l2: (..., mg).

    Returns (..., 6): [a1 - a2 + l1_k * C_F ; C_F + C_G].
    """
    l1 = np.asarray(l1, dtype=float)
    l2 = np.asarray(l2, dtype=float)
    weights = l1.copy()
    weights[..., active_index] = 1.0
    cone_f = np.einsum("...m,...mi->...i", weights, f_grads)
    cone_g = np.einsum("...m,...mi->...i", l2, g_grads)
    sep = a1 - a2 + l1[..., active_index, None] * cone_f
    return np.concatenate([sep, cone_f + cone_g], axis=-1)


def nonpenetration_rows(body_f, pose_f, body_g, pose_g, a1, a2, l1, l2, p_n, active_index):
    """Six equality rows plus the complementarity pairs of the contact.

    Complementarity pairs are returned as (v_parts, f_parts) ordered
    [l1; l2; p_n] against [-f(a1); -g(a2); max_i f_i(a2)].
    """
    mat_f = pose_f.rotation_matrix()
    mat_g = pose_g.rotation_matrix()
    f_vals, f_grads = body_f.evaluate_world(pose_f.position, mat_f, a1)
    g_vals, g_grads = body_g.evaluate_world(pose_g.position, mat_g, a2)
    f_at_a2 = body_f.evaluate_world(pose_f.position, mat_f, a2, with_gradients=False)
    cone_norm = np.linalg.norm(f_grads[..., active_index, :], axis=-1)
    if np.any(cone_norm < 1e-12):
        raise DegenerateNormalCone("active constraint gradient vanished at a1")
    rows = normal_cone_rows(f_grads, g_grads, a1, a2, l1, l2, active_index)
    v_parts = np.concatenate(
        [np.asarray(l1, dtype=float), np.asarray(l2, dtype=float), np.atleast_1d(p_n)],
        axis=-1,
    )
    f_parts = np.concatenate(
        [-f_vals, -g_vals, np.max(f_at_a2, axis=-1, keepdims=True)], axis=-1
    )
    return rows, v_parts, f_parts


def friction_rows(V, p_n, p_t, p_o, p_r, sigma, W, params):
    """Maximum-dissipation stationarity rows and the ellipsoid pair.

    V is the (..., 6) generalized velocity, W the (..., 6, 4) wrench basis.
    Returns ((..., 3) equality rows, (sigma, ellipsoid slack)) where the
    slack is (mu p_n)^2 - (p_t/e_t)^2 - (p_o/e_o)^2 - (p_r/e_r)^2.
    """
    V = np.asarray(V, dtype=float)
    vt = np.einsum("...i,...i->...", W[..., 1], V)
    vo = np.einsum("...i,...i->...", W[..., 2], V)
    vr = np.einsum("...i,...i->...", W[..., 3], V)
    mu = params.mu
    rows = np.stack(
        [
            mu * params.e_t**2 * p_n * vt + p_t * sigma,
            mu * params.e_o**2 * p_n * vo + p_o * sigma,
            mu * params.e_r**2 * p_n * vr + p_r * sigma,
        ],
        axis=-1,
    )
    slack = (
        (mu * p_n) ** 2
        - (p_t / params.e_t) ** 2
        - (p_o / params.e_o) ** 2
        - (p_r / params.e_r) ** 2
    )
    return rows, (sigma, slack)


def dissipation_rate(V, p_t, p_o, p_r, W):
    """Power transferred by the tangential impulses (nonpositive at solutions)."""
    V = np.asarray(V, dtype=float)
    vt = np.einsum("...i,...i->...", W[..., 1], V)
    vo = np.einsum("...i,...i->...", W[..., 2], V)
    vr = np.einsum("...i,...i->...", W[..., 3], V)
    return p_t * vt + p_o * vo + p_r * vr
