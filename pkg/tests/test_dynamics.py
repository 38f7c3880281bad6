"""Dynamics tests: applied loads, area bookkeeping, stepping behavior."""

import numpy as np
import pytest

from tumblesim import presets, rotations
from tumblesim.contact import ContactSolution
from tumblesim.dynamics import (
    GRAVITY,
    AmbiguousContact,
    InertiaParams,
    MagneticDrive,
    SimulationSetup,
    StepState,
    SubstrateParams,
    adhesion_force,
    assemble_step,
    contact_area_update,
    kinetic_energy,
    magnetic_torque,
    resting_state,
    run,
    step,
)
from tumblesim.geometry import Pose, build_body
from tumblesim.mncp import solve

L, W, H = presets.LENGTH, presets.WIDTH, presets.HEIGHT


def paper_setup(frequency=1.0, field_t=presets.FIELD_T, incline=0.0):
    robot = presets.ROBOTS["paper_table1"]
    substrate = presets.SUBSTRATES["paper_table1"]
    if incline:
        from dataclasses import replace

        substrate = replace(substrate, incline_deg=incline)
    drive = presets.magnetic_drive(robot, frequency, field_t=field_t)
    return SimulationSetup(
        body=build_body(presets.shape_spec("cuboid")),
        inertia=presets.inertia(robot),
        drive=drive,
        substrate=substrate,
        friction=presets.friction(substrate),
    )


class TestMagneticTorque:
    def test_parallel_field_gives_no_torque(self):
        robot = presets.ROBOTS["aluminum_table3"]
        drive = presets.magnetic_drive(robot, 1.0)
        pose = Pose.identity()
        drive = drive.with_aligned_phase(pose)
        torque = magnetic_torque(drive, pose, 0.0)
        assert np.linalg.norm(torque) < 1e-20

    def test_perpendicular_magnitude_table1(self):
        # field at t=0 points along +y; put the magnetization along z
        robot = presets.ROBOTS["paper_table1"]
        drive = MagneticDrive(
            field_t=0.02,
            frequency_hz=1.0,
            magnetic_volume=robot.magnetic_volume,
            magnetization_body=np.array([0.0, 0.0, robot.magnetization]),
        )
        torque = magnetic_torque(drive, Pose.identity(), 0.0)
        assert np.linalg.norm(torque) == pytest.approx(8.7e-9, rel=1e-9)

    def test_perpendicular_magnitude_table3(self):
        robot = presets.ROBOTS["aluminum_table3"]
        drive = MagneticDrive(
            field_t=0.02,
            frequency_hz=1.0,
            magnetic_volume=robot.magnetic_volume,
            magnetization_body=np.array([0.0, 0.0, robot.magnetization]),
        )
        torque = magnetic_torque(drive, Pose.identity(), 0.0)
        assert np.linalg.norm(torque) == pytest.approx(3.317e-8, rel=1e-3)

    def test_field_rotates_at_the_drive_frequency(self):
        robot = presets.ROBOTS["paper_table1"]
        drive = presets.magnetic_drive(robot, 2.0)
        b0 = drive.field_at(0.0)
        b_quarter = drive.field_at(1.0 / 8.0)
        assert abs(b0 @ b_quarter) < 1e-17  # quarter period: perpendicular
        np.testing.assert_allclose(drive.field_at(0.5), b0, atol=1e-15)


class TestAdhesion:
    def test_full_face_value(self):
        assert adhesion_force(3.7148, 3.2e-7) == pytest.approx(1.1887e-6, rel=1e-3)

    def test_end_face_value(self):
        assert adhesion_force(3.7148, 4.0e-8) == pytest.approx(1.486e-7, rel=1e-3)

    def test_line_contact_is_free(self):
        assert adhesion_force(3.7148, 0.0) == 0.0

    def test_negative_area_rejected(self):
        with pytest.raises(ValueError):
            adhesion_force(1.0, -1e-9)


def make_solution(body, p_n, l1, active_index, f_values, p_n_scale=1.0):
    return ContactSolution(
        a1=np.zeros(3),
        a2=np.zeros(3),
        p_n=p_n,
        p_t=0.0,
        p_o=0.0,
        p_r=0.0,
        sigma=0.0,
        l1=np.asarray(l1, dtype=float),
        l2=np.array([1.0]),
        active_index=active_index,
        p_n_scale=p_n_scale,
        f_values_a1=np.asarray(f_values, dtype=float),
    )


class TestContactAreaUpdate:
    def setup_method(self):
        self.body = build_body(presets.shape_spec("cuboid"))
        self.margins = np.array([-W / 2, -W / 2, -L / 2, -L / 2, -H / 2, 0.0])

    def test_flat_rest_selects_bottom_face(self):
        sol = make_solution(self.body, 1.0, np.zeros(6), 5, self.margins)
        area, face = contact_area_update(sol, self.body)
        assert face == 5
        assert area == pytest.approx(L * W, rel=1e-12)

    def test_airborne_is_area_free(self):
        sol = make_solution(self.body, 0.0, np.zeros(6), 5, self.margins)
        area, face = contact_area_update(sol, self.body)
        assert area == 0.0 and face is None

    def test_edge_contact_is_line(self):
        l1 = np.zeros(6)
        l1[2] = 0.4  # front face joins the cone: edge contact
        f_values = self.margins.copy()
        f_values[2] = 0.0
        sol = make_solution(self.body, 1.0, l1, 5, f_values)
        area, face = contact_area_update(sol, self.body)
        assert area == 0.0 and face is None

    def test_three_actives_warns_and_falls_back(self):
        l1 = np.zeros(6)
        l1[2] = 0.4
        l1[0] = 0.3
        f_values = self.margins.copy()
        f_values[[0, 2]] = 0.0
        sol = make_solution(self.body, 1.0, l1, 5, f_values)
        with pytest.warns(AmbiguousContact):
            area, face = contact_area_update(sol, self.body)
        assert face == 5  # designated face carries unit weight, the largest
        assert area == pytest.approx(L * W, rel=1e-12)

    def test_stale_designation_filtered_by_activity(self):
        # the designated constraint is no longer geometrically active; the
        # loaded adjacent face wins alone
        l1 = np.zeros(6)
        l1[2] = 1.2
        f_values = self.margins.copy()
        f_values[5] = -H / 3  # bottom face off the plane
        f_values[2] = 0.0
        sol = make_solution(self.body, 1.0, l1, 5, f_values)
        area, face = contact_area_update(sol, self.body)
        assert face == 2
        assert area == pytest.approx(W * H, rel=1e-12)


class TestStaticRest:
    def test_force_balance_through_solver(self):
        setup = paper_setup(field_t=0.0)
        h = 1e-4
        state = resting_state(setup, h_for_adhesion=h)
        assembled = assemble_step(state, h, setup)
        from tumblesim.dynamics import _cold_guess

        report = solve(assembled.problem, _cold_guess(state, assembled, h), setup.solver)
        parts = assembled.split(report.solution)
        expected = h * (
            presets.ROBOTS["paper_table1"].mass * GRAVITY
            + 3.2022e-6
            + 3.7148 * L * W
        )
        assert parts["p_n"] == pytest.approx(expected, rel=1e-3)
        assert np.max(np.abs(parts["V"])) < 1e-9

    def test_incline_components(self):
        sub = SubstrateParams(
            adhesion_coefficient=0.0, mu=0.3, electrostatic_force=0.0, incline_deg=30.0
        )
        g = sub.gravity_vector()
        assert g[1] == pytest.approx(-GRAVITY * 0.5, rel=1e-12)
        assert g[2] == pytest.approx(-GRAVITY * np.sqrt(3) / 2, rel=1e-12)


class TestStepping:
    def test_free_fall_velocity(self):
        setup = paper_setup(field_t=0.0)
        h = 1e-4
        state = StepState(
            pose=Pose(np.array([0.0, 0.0, 5e-3]), rotations.IDENTITY.copy()),
            V=np.zeros(6),
            contact_area_prev=0.0,
            p_adh_prev=0.0,
            t=0.0,
            in_contact=False,
        )
        new_state, rec = step(state, h, setup)
        assert new_state.V[2] == pytest.approx(-GRAVITY * h, rel=1e-9)
        assert rec.p_n == pytest.approx(0.0, abs=1e-18)
        assert rec.contact_area == 0.0

    def test_zero_duration_run(self):
        setup = paper_setup(field_t=0.0)
        state = resting_state(setup)
        traj = run(state, 0.0, 1e-4, setup)
        assert traj.steps == 0
        assert len(traj.t) == 1

    def test_runs_are_deterministic(self):
        setup = paper_setup()
        state = resting_state(setup)
        t1 = run(state, 0.01, 1e-4, setup)
        state2 = resting_state(setup)
        t2 = run(state2, 0.01, 1e-4, setup)
        np.testing.assert_array_equal(t1.position, t2.position)
        np.testing.assert_array_equal(t1.p_n, t2.p_n)
        np.testing.assert_array_equal(t1.quaternion, t2.quaternion)

    def test_energy_drift_in_flight_is_order_h(self):
        setup = paper_setup(field_t=0.0)
        h = 1e-4
        z0 = 5e-2
        state = StepState(
            pose=Pose(np.array([0.0, 0.0, z0]), rotations.IDENTITY.copy()),
            V=np.array([0.0, 2e-3, 0.0, 3.0, 0.0, 0.0]),
            contact_area_prev=0.0,
            p_adh_prev=0.0,
            t=0.0,
            in_contact=False,
        )
        mass = setup.inertia.m
        e0 = kinetic_energy(setup, state) + mass * GRAVITY * z0
        traj = run(state, 1000 * h, h, setup)
        assert traj.position[:, 2].min() > 0.0, "must stay in flight"
        vz_end = traj.V[-1, 2]
        ke = 0.5 * mass * (traj.V[-1, 0] ** 2 + traj.V[-1, 1] ** 2 + vz_end**2)
        ke += 0.5 * setup.inertia.I_xx * traj.V[-1, 3] ** 2
        e_end = ke + mass * GRAVITY * traj.position[-1, 2]
        # semi-implicit integration drifts by ~ m g^2 h t / 2 in free fall
        bound = 2.0 * 0.5 * mass * GRAVITY**2 * h * traj.t[-1] + 1e-15
        assert abs(e_end - e0) <= bound

    def test_momentum_residuals_stay_small(self):
        setup = paper_setup()
        state = resting_state(setup)
        traj = run(state, 0.02, 1e-4, setup)
        assert traj.residual.max() <= 10 * setup.solver.residual_tolerance

    def test_states_track_adhesion_cache(self):
        setup = paper_setup()
        state = resting_state(setup)
        for _ in range(5):
            state, rec = step(state, 1e-4, setup)
            expected = rec.h * setup.substrate.adhesion_coefficient * rec.contact_area
            assert state.p_adh_prev == pytest.approx(expected, rel=1e-12)


class TestInertia:
    def test_cuboid_moments(self):
        robot = presets.ROBOTS["paper_table1"]
        params = presets.inertia(robot)
        assert params.I_xx == pytest.approx(robot.mass * (L**2 + H**2) / 12, rel=1e-12)
        assert params.I_yy == pytest.approx(robot.mass * (W**2 + H**2) / 12, rel=1e-12)
        assert params.I_zz == pytest.approx(robot.mass * (W**2 + L**2) / 12, rel=1e-12)

    def test_world_inertia_rotates(self):
        params = InertiaParams(m=1.0, I_xx=1.0, I_yy=2.0, I_zz=3.0)
        quat = rotations.from_axis_angle([0, 0, 1], np.pi / 2)
        M = params.generalized_mass(rotations.to_matrix(quat))
        # a quarter turn about z swaps the x and y moments
        assert M[3, 3] == pytest.approx(2.0, abs=1e-12)
        assert M[4, 4] == pytest.approx(1.0, abs=1e-12)
