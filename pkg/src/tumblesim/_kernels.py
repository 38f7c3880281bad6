"""Compiled inner loops for the per-step residual and Jacobian.

These mirror the numpy implementations in dynamics.py exactly (a test pins
them against each other); they exist because the solver evaluates the
residual on small batches thousands of times per simulated second, where
numpy's per-call overhead dominates. Plain-python fallbacks keep the package
usable without numba.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


@njit(cache=True)
def _eval_constraints(point, normals, offsets, cyl_centers, cyl_axes, cyl_radii, vals):
    ma = normals.shape[0]
    for i in range(ma):
        vals[i] = (
            normals[i, 0] * point[0]
            + normals[i, 1] * point[1]
            + normals[i, 2] * point[2]
            - offsets[i]
        )
    for ci in range(cyl_radii.shape[0]):
        dx = point[0] - cyl_centers[ci, 0]
        dy = point[1] - cyl_centers[ci, 1]
        dz = point[2] - cyl_centers[ci, 2]
        ax, ay, az = cyl_axes[ci, 0], cyl_axes[ci, 1], cyl_axes[ci, 2]
        dot = dx * ax + dy * ay + dz * az
        px, py, pz = dx - dot * ax, dy - dot * ay, dz - dot * az
        r = cyl_radii[ci]
        vals[ma + ci] = (px * px + py * py + pz * pz - r * r) / (2.0 * r)


@njit(cache=True)
def _pose_matrix(h, V, pos0, quat0, pos1, rot):
    """End-of-step position and rotation for one unknown vector."""
    pos1[0] = pos0[0] + h * V[0]
    pos1[1] = pos0[1] + h * V[1]
    pos1[2] = pos0[2] + h * V[2]
    rx, ry, rz = h * V[3], h * V[4], h * V[5]
    angle = np.sqrt(rx * rx + ry * ry + rz * rz)
    half = 0.5 * angle
    if angle > 1e-30:
        s = np.sin(half) / angle
    else:
        s = 0.5
    ew = np.cos(half)
    ex, ey, ez = s * rx, s * ry, s * rz
    w2, x2, y2, z2 = quat0[0], quat0[1], quat0[2], quat0[3]
    qw = ew * w2 - ex * x2 - ey * y2 - ez * z2
    qx = ew * x2 + ex * w2 + ey * z2 - ez * y2
    qy = ew * y2 - ex * z2 + ey * w2 + ez * x2
    qz = ew * z2 + ex * y2 - ey * x2 + ez * w2
    norm = np.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
    qw, qx, qy, qz = qw / norm, qx / norm, qy / norm, qz / norm
    xx, yy, zz = 2 * qx * qx, 2 * qy * qy, 2 * qz * qz
    xy, xz, yz = 2 * qx * qy, 2 * qx * qz, 2 * qy * qz
    wx, wy, wz = 2 * qw * qx, 2 * qw * qy, 2 * qw * qz
    rot[0, 0] = 1.0 - yy - zz
    rot[0, 1] = xy - wz
    rot[0, 2] = xz + wy
    rot[1, 0] = xy + wz
    rot[1, 1] = 1.0 - xx - zz
    rot[1, 2] = yz - wx
    rot[2, 0] = xz - wy
    rot[2, 1] = yz + wx
    rot[2, 2] = 1.0 - xx - yy


@njit(cache=True)
def _world_gradients(rot, local, normals, cyl_centers, cyl_axes, cyl_radii, grads):
    ma = normals.shape[0]
    for i in range(ma):
        for a in range(3):
            grads[i, a] = (
                rot[a, 0] * normals[i, 0]
                + rot[a, 1] * normals[i, 1]
                + rot[a, 2] * normals[i, 2]
            )
    for ci in range(cyl_radii.shape[0]):
        dx = local[0] - cyl_centers[ci, 0]
        dy = local[1] - cyl_centers[ci, 1]
        dz = local[2] - cyl_centers[ci, 2]
        ax, ay, az = cyl_axes[ci, 0], cyl_axes[ci, 1], cyl_axes[ci, 2]
        dot = dx * ax + dy * ay + dz * az
        gx = (dx - dot * ax) / cyl_radii[ci]
        gy = (dy - dot * ay) / cyl_radii[ci]
        gz = (dz - dot * az) / cyl_radii[ci]
        for a in range(3):
            grads[ma + ci, a] = rot[a, 0] * gx + rot[a, 1] * gy + rot[a, 2] * gz


@njit(cache=True)
def _cyl_low_candidate(pos1, rot, ci, normals, offsets, cyl_centers, cyl_axes, cyl_radii, tmp_vals):
    """Height of a cylinder's feasible down-tangent point, or +inf."""
    ax, ay, az = cyl_axes[ci, 0], cyl_axes[ci, 1], cyl_axes[ci, 2]
    awz = rot[2, 0] * ax + rot[2, 1] * ay + rot[2, 2] * az
    sin2 = 1.0 - awz * awz
    if sin2 < 0.0:
        sin2 = 0.0
    sin = np.sqrt(sin2)
    dbx, dby, dbz = -rot[2, 0], -rot[2, 1], -rot[2, 2]
    dot = dbx * ax + dby * ay + dbz * az
    px, py, pz = dbx - dot * ax, dby - dot * ay, dbz - dot * az
    norm = np.sqrt(px * px + py * py + pz * pz)
    if norm <= 1e-12:
        return np.inf
    r = cyl_radii[ci]
    cand = np.empty(3)
    cand[0] = cyl_centers[ci, 0] + r * px / norm
    cand[1] = cyl_centers[ci, 1] + r * py / norm
    cand[2] = cyl_centers[ci, 2] + r * pz / norm
    _eval_constraints(cand, normals, offsets, cyl_centers, cyl_axes, cyl_radii, tmp_vals)
    for i in range(tmp_vals.shape[0]):
        if tmp_vals[i] > 1e-9:
            return np.inf
    c_wz = (
        pos1[2]
        + rot[2, 0] * cyl_centers[ci, 0]
        + rot[2, 1] * cyl_centers[ci, 1]
        + rot[2, 2] * cyl_centers[ci, 2]
    )
    return c_wz - r * sin


@njit(cache=True)
def _lowest_height(
    pos1, rot, vertices, normals, offsets, cyl_centers, cyl_axes, cyl_radii, tmp_vals, soften
):
    low = np.inf
    for vi in range(vertices.shape[0]):
        z = (
            pos1[2]
            + rot[2, 0] * vertices[vi, 0]
            + rot[2, 1] * vertices[vi, 1]
            + rot[2, 2] * vertices[vi, 2]
        )
        if z < low:
            low = z
    n_cyl = cyl_radii.shape[0]
    cyl_z = np.empty(n_cyl)
    for ci in range(n_cyl):
        cyl_z[ci] = _cyl_low_candidate(
            pos1, rot, ci, normals, offsets, cyl_centers, cyl_axes, cyl_radii, tmp_vals
        )
        if cyl_z[ci] < low:
            low = cyl_z[ci]
    if soften <= 0.0:
        return low
    total = 0.0
    for vi in range(vertices.shape[0]):
        z = (
            pos1[2]
            + rot[2, 0] * vertices[vi, 0]
            + rot[2, 1] * vertices[vi, 1]
            + rot[2, 2] * vertices[vi, 2]
        )
        total += np.exp((low - z) / soften)
    for ci in range(n_cyl):
        if np.isfinite(cyl_z[ci]):
            total += np.exp((low - cyl_z[ci]) / soften)
    return low - soften * np.log(total)


@njit(cache=True)
def residual_batch(
    Z,
    dim_u,
    m,
    h,
    pos0,
    quat0,
    V_u,
    I_w,
    p_app,
    mass,
    mu,
    e_t,
    e_o,
    e_r,
    k,
    normals,
    offsets,
    cyl_centers,
    cyl_axes,
    cyl_radii,
    vertices,
    gap_soften,
):
    B = Z.shape[0]
    g_out = np.empty((B, 15))
    f_out = np.empty((B, m + 3))
    pos1 = np.empty(3)
    rot = np.empty((3, 3))
    local = np.empty(3)
    f_vals = np.empty(m)
    grads = np.empty((m, 3))
    tmp_vals = np.empty(m)
    for b in range(B):
        z = Z[b]
        V = z[0:6]
        a1 = z[6:9]
        a2 = z[9:12]
        p_t, p_o, p_r = z[12], z[13], z[14]
        l_sub = z[15 + m]
        sigma = z[16 + m]
        p_n = z[17 + m]

        _pose_matrix(h, V, pos0, quat0, pos1, rot)
        for a in range(3):
            local[a] = (
                rot[0, a] * (a1[0] - pos1[0])
                + rot[1, a] * (a1[1] - pos1[1])
                + rot[2, a] * (a1[2] - pos1[2])
            )
        _eval_constraints(
            local, normals, offsets, cyl_centers, cyl_axes, cyl_radii, f_vals
        )
        _world_gradients(rot, local, normals, cyl_centers, cyl_axes, cyl_radii, grads)

        conex = coney = conez = 0.0
        for i in range(m):
            w = 1.0 if i == k else z[15 + i]
            conex += w * grads[i, 0]
            coney += w * grads[i, 1]
            conez += w * grads[i, 2]

        rx = a1[0] - pos1[0]
        ry = a1[1] - pos1[1]
        rz = a1[2] - pos1[2]

        g = g_out[b]
        g[0] = mass * (V[0] - V_u[0]) + p_o - p_app[0]
        g[1] = mass * (V[1] - V_u[1]) - p_t - p_app[1]
        g[2] = mass * (V[2] - V_u[2]) - p_n - p_app[2]
        dw0, dw1, dw2 = V[3] - V_u[3], V[4] - V_u[4], V[5] - V_u[5]
        g[3] = (
            I_w[0, 0] * dw0
            + I_w[0, 1] * dw1
            + I_w[0, 2] * dw2
            - (p_n * ry - p_t * rz)
            - p_app[3]
        )
        g[4] = (
            I_w[1, 0] * dw0
            + I_w[1, 1] * dw1
            + I_w[1, 2] * dw2
            - (-p_n * rx - p_o * rz)
            - p_app[4]
        )
        g[5] = (
            I_w[2, 0] * dw0
            + I_w[2, 1] * dw1
            + I_w[2, 2] * dw2
            - (p_t * rx + p_o * ry + p_r)
            - p_app[5]
        )
        lk = z[15 + k]
        g[6] = a1[0] - a2[0] + lk * conex
        g[7] = a1[1] - a2[1] + lk * coney
        g[8] = a1[2] - a2[2] + lk * conez
        g[9] = conex
        g[10] = coney
        g[11] = conez + l_sub

        vt = V[1] - rz * V[3] + rx * V[5]
        vo = -V[0] - rz * V[4] + ry * V[5]
        vr = V[5]
        mupn = mu * p_n
        g[12] = e_t * e_t * mupn * vt + p_t * sigma
        g[13] = e_o * e_o * mupn * vo + p_o * sigma
        g[14] = e_r * e_r * mupn * vr + p_r * sigma

        f = f_out[b]
        for i in range(m):
            f[i] = -f_vals[i]
        f[m] = -a2[2]
        f[m + 1] = (
            mupn * mupn
            - (p_t / e_t) ** 2
            - (p_o / e_o) ** 2
            - (p_r / e_r) ** 2
        )
        f[m + 2] = _lowest_height(
            pos1,
            rot,
            vertices,
            normals,
            offsets,
            cyl_centers,
            cyl_axes,
            cyl_radii,
            tmp_vals,
            gap_soften,
        )
    return g_out, f_out


@njit(cache=True)
def jacobian_point(
    z,
    m,
    h,
    pos0,
    quat0,
    V_u,
    I_w,
    mass,
    mu,
    e_t,
    e_o,
    e_r,
    k,
    normals,
    offsets,
    cyl_centers,
    cyl_axes,
    cyl_radii,
    vertices,
    gap_soften,
):
    n = 18 + m
    J = np.zeros((n, n))
    V = z[0:6]
    a1 = z[6:9]
    p_t, p_o, p_r = z[12], z[13], z[14]
    sigma = z[16 + m]
    p_n = z[17 + m]
    i_sig = 16 + m
    i_pn = 17 + m

    pos1 = np.empty(3)
    rot = np.empty((3, 3))
    local = np.empty(3)
    grads = np.empty((m, 3))
    _pose_matrix(h, V, pos0, quat0, pos1, rot)
    for a in range(3):
        local[a] = (
            rot[0, a] * (a1[0] - pos1[0])
            + rot[1, a] * (a1[1] - pos1[1])
            + rot[2, a] * (a1[2] - pos1[2])
        )
    _world_gradients(rot, local, normals, cyl_centers, cyl_axes, cyl_radii, grads)

    conex = coney = conez = 0.0
    for i in range(m):
        w = 1.0 if i == k else z[15 + i]
        conex += w * grads[i, 0]
        coney += w * grads[i, 1]
        conez += w * grads[i, 2]
    rx = a1[0] - pos1[0]
    ry = a1[1] - pos1[1]
    rz = a1[2] - pos1[2]
    lk = z[15 + k]

    J[0, 0] = J[1, 1] = J[2, 2] = mass
    J[0, 13] = 1.0
    J[1, 12] = -1.0
    J[2, i_pn] = -1.0
    for a in range(3):
        for bb in range(3):
            J[3 + a, 3 + bb] = I_w[a, bb]
    # -dM_c/dr blocks
    J[3, 7] = -p_n
    J[3, 8] = p_t
    J[4, 6] = p_n
    J[4, 8] = p_o
    J[5, 6] = -p_t
    J[5, 7] = -p_o
    for a in range(3):
        for bb in range(3):
            J[3 + a, 0 + bb] = -h * J[3 + a, 6 + bb]
    J[3, i_pn] = -ry
    J[3, 12] = rz
    J[4, i_pn] = rx
    J[4, 13] = rz
    J[5, 12] = -rx
    J[5, 13] = -ry
    J[5, 14] = -1.0

    ma = normals.shape[0]
    hsum = np.zeros((3, 3))
    for ci in range(cyl_radii.shape[0]):
        ax, ay, az = cyl_axes[ci, 0], cyl_axes[ci, 1], cyl_axes[ci, 2]
        w = 1.0 if ma + ci == k else z[15 + ma + ci]
        # rot (I - a a^T) rot^T / r
        for a in range(3):
            raxa = rot[a, 0] * ax + rot[a, 1] * ay + rot[a, 2] * az
            for bb in range(3):
                rb = rot[bb, 0] * ax + rot[bb, 1] * ay + rot[bb, 2] * az
                eye = 1.0 if a == bb else 0.0
                hsum[a, bb] += w * (
                    (rot[a, 0] * rot[bb, 0] + rot[a, 1] * rot[bb, 1] + rot[a, 2] * rot[bb, 2])
                    - raxa * rb
                ) / cyl_radii[ci]

    # cone cross matrix: column j is e_j x cone
    ccx = np.empty((3, 3))
    ccx[0, 0] = 0.0
    ccx[0, 1] = conez
    ccx[0, 2] = -coney
    ccx[1, 0] = -conez
    ccx[1, 1] = 0.0
    ccx[1, 2] = conex
    ccx[2, 0] = coney
    ccx[2, 1] = -conex
    ccx[2, 2] = 0.0

    for a in range(3):
        for bb in range(3):
            J[6 + a, 6 + bb] = (1.0 if a == bb else 0.0) + lk * hsum[a, bb]
            J[6 + a, 0 + bb] = -h * lk * hsum[a, bb]
            J[6 + a, 3 + bb] = h * lk * ccx[a, bb]
            J[9 + a, 6 + bb] = hsum[a, bb]
            J[9 + a, 0 + bb] = -h * hsum[a, bb]
            J[9 + a, 3 + bb] = h * ccx[a, bb]
        J[6 + a, 9 + a] = -1.0
        J[6 + a, 15 + k] = conex if a == 0 else (coney if a == 1 else conez)
    for i in range(m):
        if i != k:
            for a in range(3):
                J[6 + a, 15 + i] = lk * grads[i, a]
                J[9 + a, 15 + i] = grads[i, a]
    J[11, 15 + m] = 1.0

    vt = V[1] - rz * V[3] + rx * V[5]
    vo = -V[0] - rz * V[4] + ry * V[5]
    vr = V[5]
    c_t, c_o, c_r = mu * e_t * e_t, mu * e_o * e_o, mu * e_r * e_r
    # d v_t / dr = (w_z, 0, -w_x); d v_o / dr = (0, w_z, -w_y)
    J[12, 0] = -h * c_t * p_n * V[5]
    J[12, 1] = c_t * p_n
    J[12, 2] = h * c_t * p_n * V[3]
    J[12, 3] = -c_t * p_n * rz
    J[12, 5] = c_t * p_n * rx
    J[12, 6] = c_t * p_n * V[5]
    J[12, 8] = -c_t * p_n * V[3]
    J[12, 12] = sigma
    J[12, i_sig] = p_t
    J[12, i_pn] = c_t * vt
    J[13, 0] = -c_o * p_n
    J[13, 1] = -h * c_o * p_n * V[5]
    J[13, 2] = h * c_o * p_n * V[4]
    J[13, 4] = -c_o * p_n * rz
    J[13, 5] = c_o * p_n * ry
    J[13, 7] = c_o * p_n * V[5]
    J[13, 8] = -c_o * p_n * V[4]
    J[13, 13] = sigma
    J[13, i_sig] = p_o
    J[13, i_pn] = c_o * vo
    J[14, 5] = c_r * p_n
    J[14, 14] = sigma
    J[14, i_sig] = p_r
    J[14, i_pn] = c_r * vr

    for i in range(m):
        gx, gy, gz = grads[i, 0], grads[i, 1], grads[i, 2]
        J[15 + i, 6] = -gx
        J[15 + i, 7] = -gy
        J[15 + i, 8] = -gz
        J[15 + i, 0] = h * gx
        J[15 + i, 1] = h * gy
        J[15 + i, 2] = h * gz
        J[15 + i, 3] = h * (ry * gz - rz * gy)
        J[15 + i, 4] = h * (rz * gx - rx * gz)
        J[15 + i, 5] = h * (rx * gy - ry * gx)
    J[15 + m, 11] = -1.0
    J[i_sig, 12] = -2.0 * p_t / (e_t * e_t)
    J[i_sig, 13] = -2.0 * p_o / (e_o * e_o)
    J[i_sig, 14] = -2.0 * p_r / (e_r * e_r)
    J[i_sig, i_pn] = 2.0 * mu * mu * p_n

    # support-height row: soft-min weighted rotational sensitivity
    n_cand = vertices.shape[0] + cyl_radii.shape[0]
    cand_z = np.empty(n_cand)
    cand_gx = np.zeros(n_cand)
    cand_gy = np.zeros(n_cand)
    low = np.inf
    for vi in range(vertices.shape[0]):
        wx = (
            rot[0, 0] * vertices[vi, 0]
            + rot[0, 1] * vertices[vi, 1]
            + rot[0, 2] * vertices[vi, 2]
        )
        wy = (
            rot[1, 0] * vertices[vi, 0]
            + rot[1, 1] * vertices[vi, 1]
            + rot[1, 2] * vertices[vi, 2]
        )
        wz = (
            rot[2, 0] * vertices[vi, 0]
            + rot[2, 1] * vertices[vi, 1]
            + rot[2, 2] * vertices[vi, 2]
        )
        cand_z[vi] = pos1[2] + wz
        cand_gx[vi] = wy
        cand_gy[vi] = -wx
        if cand_z[vi] < low:
            low = cand_z[vi]
    tmp_vals = np.empty(m)
    for ci in range(cyl_radii.shape[0]):
        idx = vertices.shape[0] + ci
        cand_z[idx] = np.inf
        ax, ay, az = cyl_axes[ci, 0], cyl_axes[ci, 1], cyl_axes[ci, 2]
        awx = rot[0, 0] * ax + rot[0, 1] * ay + rot[0, 2] * az
        awy = rot[1, 0] * ax + rot[1, 1] * ay + rot[1, 2] * az
        awz = rot[2, 0] * ax + rot[2, 1] * ay + rot[2, 2] * az
        sin2 = 1.0 - awz * awz
        if sin2 < 0.0:
            sin2 = 0.0
        sin = np.sqrt(sin2)
        dbx, dby, dbz = -rot[2, 0], -rot[2, 1], -rot[2, 2]
        dot = dbx * ax + dby * ay + dbz * az
        px, py, pz = dbx - dot * ax, dby - dot * ay, dbz - dot * az
        norm = np.sqrt(px * px + py * py + pz * pz)
        if norm <= 1e-12:
            continue
        r = cyl_radii[ci]
        cand = np.empty(3)
        cand[0] = cyl_centers[ci, 0] + r * px / norm
        cand[1] = cyl_centers[ci, 1] + r * py / norm
        cand[2] = cyl_centers[ci, 2] + r * pz / norm
        _eval_constraints(
            cand, normals, offsets, cyl_centers, cyl_axes, cyl_radii, tmp_vals
        )
        ok = True
        for i in range(m):
            if tmp_vals[i] > 1e-9:
                ok = False
                break
        if not ok:
            continue
        cwx = (
            rot[0, 0] * cyl_centers[ci, 0]
            + rot[0, 1] * cyl_centers[ci, 1]
            + rot[0, 2] * cyl_centers[ci, 2]
        )
        cwy = (
            rot[1, 0] * cyl_centers[ci, 0]
            + rot[1, 1] * cyl_centers[ci, 1]
            + rot[1, 2] * cyl_centers[ci, 2]
        )
        cwz = (
            rot[2, 0] * cyl_centers[ci, 0]
            + rot[2, 1] * cyl_centers[ci, 1]
            + rot[2, 2] * cyl_centers[ci, 2]
        )
        tilt = awz / max(sin, 1e-30)
        cand_z[idx] = pos1[2] + cwz - r * sin
        cand_gx[idx] = cwy + r * tilt * awy
        cand_gy[idx] = -(cwx + r * tilt * awx)
        if cand_z[idx] < low:
            low = cand_z[idx]
    gx_rot = 0.0
    gy_rot = 0.0
    if gap_soften > 0.0:
        total = 0.0
        for i in range(n_cand):
            if np.isfinite(cand_z[i]):
                w = np.exp((low - cand_z[i]) / gap_soften)
                total += w
                gx_rot += w * cand_gx[i]
                gy_rot += w * cand_gy[i]
        gx_rot /= total
        gy_rot /= total
    else:
        for i in range(n_cand):
            if cand_z[i] == low:
                gx_rot = cand_gx[i]
                gy_rot = cand_gy[i]
                break
    J[i_pn, 2] = h
    J[i_pn, 3] = h * gx_rot
    J[i_pn, 4] = h * gy_rot
    return J
