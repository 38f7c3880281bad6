"""Contact algebra tests against hand-worked configurations."""

import numpy as np
import pytest

from tumblesim import rotations
from tumblesim.contact import (
    ContactFrame,
    FrictionParams,
    dissipation_rate,
    friction_rows,
    nonpenetration_rows,
    wrench_basis,
)
from tumblesim.geometry import Pose, ShapeSpec, build_body

L, W, H = 0.8e-3, 0.4e-3, 0.1e-3
FRONT, BOTTOM = 2, 5


def frame():
    return ContactFrame.for_substrate()


def substrate():
    body = build_body(ShapeSpec(kind="halfspace"))
    # material below z = 0: flip the body's frame about x
    pose = Pose(np.zeros(3), rotations.from_axis_angle([1.0, 0, 0], np.pi))
    return body, pose


def cuboid():
    return build_body(ShapeSpec(kind="cuboid", length=L, width=W, height=H))


class TestContactFrame:
    def test_substrate_frame_axes(self):
        f = frame()
        np.testing.assert_allclose(np.cross(f.t, f.o), f.n, atol=1e-15)
        np.testing.assert_allclose(f.n, [0, 0, 1])
        np.testing.assert_allclose(f.t, [0, 1, 0])

    def test_rejects_skew_axes(self):
        with pytest.raises(ValueError):
            ContactFrame(n=[0, 0, 1], t=[0, 1, 0.1], o=[-1, 0, 0])

    def test_rejects_left_handed(self):
        with pytest.raises(ValueError):
            ContactFrame(n=[0, 0, 1], t=[0, 1, 0], o=[1, 0, 0])


class TestFrictionParams:
    def test_rejects_negative_mu(self):
        with pytest.raises(ValueError):
            FrictionParams(mu=-0.1)

    def test_rejects_zero_axes(self):
        with pytest.raises(ValueError):
            FrictionParams(mu=0.3, e_r=0.0)


class TestWrenchBasis:
    def test_normal_through_cm_has_no_moment(self):
        ecp = np.array([0.0, 0.0, 0.0])
        cm = np.array([0.0, 0.0, H / 2])
        Wmat = wrench_basis(frame(), ecp, cm)
        np.testing.assert_allclose(Wmat[:, 0], [0, 0, 1, 0, 0, 0], atol=1e-18)

    def test_tangential_moment_arm(self):
        # r = ecp - cm = (0, 0, -H/2); r x t = (H/2, 0, 0)
        ecp = np.array([0.0, 0.0, 0.0])
        cm = np.array([0.0, 0.0, H / 2])
        Wmat = wrench_basis(frame(), ecp, cm)
        np.testing.assert_allclose(Wmat[:, 1], [0, 1, 0, H / 2, 0, 0], atol=1e-18)

    def test_torsional_column_is_normal(self):
        rng = np.random.RandomState(1)
        Wmat = wrench_basis(frame(), rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3))
        np.testing.assert_allclose(Wmat[:, 3], [0, 0, 0, 0, 0, 1], atol=1e-18)

    def test_batched_shapes(self):
        ecp = np.zeros((7, 3))
        cm = np.zeros((7, 3))
        assert wrench_basis(frame(), ecp, cm).shape == (7, 6, 4)


class TestNonpenetrationRows:
    def test_flat_rest_rows_vanish(self):
        body = cuboid()
        plane, plane_pose = substrate()
        pose = Pose(np.array([0.0, 0.0, H / 2]), rotations.IDENTITY.copy())
        a = np.array([0.0, 0.0, 0.0])
        l1 = np.zeros(6)
        l2 = np.array([1.0])
        rows, v_parts, f_parts = nonpenetration_rows(
            body, pose, plane, plane_pose, a, a, l1, l2, p_n=5e-10, active_index=BOTTOM
        )
        np.testing.assert_allclose(rows, np.zeros(6), atol=1e-15)
        # every pair satisfies v >= 0, f >= 0, v*f = 0
        assert (v_parts >= 0).all() and (f_parts >= -1e-18).all()
        np.testing.assert_allclose(v_parts * f_parts, 0.0, atol=1e-15)

    def test_separated_bodies_zero_impulse(self):
        body = cuboid()
        plane, plane_pose = substrate()
        gap = 2e-4
        pose = Pose(np.array([0.0, 0.0, H / 2 + gap]), rotations.IDENTITY.copy())
        a1 = np.array([0.0, 0.0, gap])
        a2 = np.array([0.0, 0.0, 0.0])
        l1 = np.zeros(6)
        l1[BOTTOM] = gap  # separation scale on the designated constraint
        l2 = np.array([1.0])
        rows, v_parts, f_parts = nonpenetration_rows(
            body, pose, plane, plane_pose, a1, a2, l1, l2, p_n=0.0, active_index=BOTTOM
        )
        np.testing.assert_allclose(rows, np.zeros(6), atol=1e-15)
        assert f_parts[-1] == pytest.approx(gap, rel=1e-12)  # separation measure
        np.testing.assert_allclose(v_parts * f_parts, 0.0, atol=1e-15)

    @pytest.mark.parametrize("alpha", [np.pi / 4, 0.3, 1.1])
    def test_edge_contact_spans_face_normals(self, alpha):
        # tilt forward about -x by alpha: contact along the leading bottom
        # edge; cone weights are tan(alpha) on the front face and 1/cos(alpha)
        # on the substrate (worked by hand in the tilted-square section plane)
        body = cuboid()
        plane, plane_pose = substrate()
        quat = rotations.from_axis_angle([-1.0, 0.0, 0.0], alpha)
        edge_body = np.array([0.0, L / 2, -H / 2])
        edge_rot = rotations.rotate(quat, edge_body)
        pose = Pose(np.array([0.0, 0.0, -edge_rot[2]]), quat)
        a = np.array([0.0, edge_rot[1], 0.0])
        l1 = np.zeros(6)
        l1[FRONT] = np.tan(alpha)
        l2 = np.array([1.0 / np.cos(alpha)])
        rows, v_parts, f_parts = nonpenetration_rows(
            body, pose, plane, plane_pose, a, a, l1, l2, p_n=5e-10, active_index=BOTTOM
        )
        np.testing.assert_allclose(rows, np.zeros(6), atol=1e-12)
        np.testing.assert_allclose(v_parts * f_parts, 0.0, atol=1e-12)


class TestFrictionRows:
    def setup_method(self):
        self.params = FrictionParams(mu=0.3, e_t=1.0, e_o=1.0, e_r=2.8e-4)
        ecp = np.array([0.0, 0.0, 0.0])
        cm = np.array([0.0, 0.0, H / 2])
        self.W = wrench_basis(frame(), ecp, cm)

    def test_sticking_rows_vanish(self):
        rows, (sigma, slack) = friction_rows(
            np.zeros(6), 5e-10, 1e-10, -5e-11, 1e-14, 0.0, self.W, self.params
        )
        np.testing.assert_allclose(rows, np.zeros(3), atol=1e-25)
        assert sigma == 0.0

    def test_pure_sliding_saturates_mu(self):
        # slip along +t only: p_t = -mu p_n, sigma = v_t, ellipsoid active
        p_n, v_t = 5e-10, 2e-3
        V = np.array([0.0, v_t, 0.0, 0.0, 0.0, 0.0])
        p_t = -self.params.mu * p_n
        rows, (sigma, slack) = friction_rows(
            V, p_n, p_t, 0.0, 0.0, v_t, self.W, self.params
        )
        np.testing.assert_allclose(rows, np.zeros(3), atol=1e-25)
        assert slack == pytest.approx(0.0, abs=1e-25)

    def test_reversal_symmetry(self):
        rng = np.random.RandomState(9)
        p_n = 5e-10
        for _ in range(20):
            v = rng.uniform(-1e-2, 1e-2, size=3)  # (v_t, v_o, v_r-ish)
            V = np.array([0.0, v[0], 0.0, 0.0, 0.0, v[2]]) + v[1] * np.array(
                [-1.0, 0, 0, 0, 0, 0]
            )
            e = self.params
            vt = float(self.W[:, 1] @ V)
            vo = float(self.W[:, 2] @ V)
            vr = float(self.W[:, 3] @ V)
            sigma = np.sqrt((e.e_t * vt) ** 2 + (e.e_o * vo) ** 2 + (e.e_r * vr) ** 2)
            p = [
                -e.mu * e.e_t**2 * p_n * vt / sigma,
                -e.mu * e.e_o**2 * p_n * vo / sigma,
                -e.mu * e.e_r**2 * p_n * vr / sigma,
            ]
            rows, (s, slack) = friction_rows(V, p_n, *p, sigma, self.W, e)
            np.testing.assert_allclose(rows, 0.0, atol=1e-22)
            assert slack == pytest.approx(0.0, abs=1e-24)
            # negating the slip negates the impulses and keeps sigma
            rows2, (s2, slack2) = friction_rows(
                -V, p_n, -p[0], -p[1], -p[2], sigma, self.W, e
            )
            np.testing.assert_allclose(rows2, 0.0, atol=1e-22)
            # friction always removes energy
            assert dissipation_rate(V, *p, self.W) <= 0.0
