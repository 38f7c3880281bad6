"""Quaternion helpers for rigid-body orientation.

Quaternions are stored as ``[w, x, y, z]`` (Hamilton convention) and act as
active rotations: ``rotate(q, v)`` maps body-frame vectors to the world
frame. All functions broadcast over leading axes so a whole batch of
orientations can be processed in one call.
"""

from __future__ import annotations

import numpy as np

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def normalize(q):
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def multiply(q1, q2):
    """Hamilton product q1 * q2, broadcasting over leading axes."""
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    w1, x1, y1, z1 = (q1[..., i] for i in range(4))
    w2, x2, y2, z2 = (q2[..., i] for i in range(4))
    out = np.empty(np.broadcast(q1, q2).shape)
    out[..., 0] = w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2
    out[..., 1] = w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2
    out[..., 2] = w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2
    out[..., 3] = w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2
    return out


def conjugate(q):
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def to_matrix(q):
    """Rotation matrix of shape (..., 3, 3) for unit quaternions (..., 4)."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = (q[..., i] for i in range(4))
    xx, yy, zz = 2.0 * x * x, 2.0 * y * y, 2.0 * z * z
    xy, xz, yz = 2.0 * x * y, 2.0 * x * z, 2.0 * y * z
    wx, wy, wz = 2.0 * w * x, 2.0 * w * y, 2.0 * w * z
    out = np.empty(q.shape[:-1] + (3, 3))
    out[..., 0, 0] = 1.0 - yy - zz
    out[..., 0, 1] = xy - wz
    out[..., 0, 2] = xz + wy
    out[..., 1, 0] = xy + wz
    out[..., 1, 1] = 1.0 - xx - zz
    out[..., 1, 2] = yz - wx
    out[..., 2, 0] = xz - wy
    out[..., 2, 1] = yz + wx
    out[..., 2, 2] = 1.0 - xx - yy
    return out


def from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * float(angle)
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def exp_map(rotvec):
    """Quaternion of the rotation vector (angle * axis), sinc-safe at zero."""
    rotvec = np.asarray(rotvec, dtype=float)
    angle = np.sqrt(np.einsum("...i,...i->...", rotvec, rotvec))[..., None]
    # sin(angle/2) / angle without a 0/0 at angle = 0
    half_sinc = 0.5 * np.sinc(angle / (2.0 * np.pi))
    out = np.empty(rotvec.shape[:-1] + (4,))
    out[..., 0:1] = np.cos(0.5 * angle)
    out[..., 1:] = half_sinc * rotvec
    return out


def rotate(q, v):
    """Apply the rotation q to vectors v, broadcasting over leading axes."""
    mat = to_matrix(q)
    return np.einsum("...ij,...j->...i", mat, np.asarray(v, dtype=float))
