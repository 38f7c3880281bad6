"""Scenario drivers: locomotion sweeps, incline traversal, shape comparison.

Each scenario builds a deterministic simulation from its spec, runs it for an
integer number of field periods, and reduces the trajectory to the quantities
the studies compare: mean forward speed against the kinematic no-slip bound,
mean slip speed at the contact, climb/no-climb on inclines, and the adhesion
force series.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import presets
from .dynamics import (
    SimulationSetup,
    StepFailure,
    resting_state,
    run,
)
from .geometry import ShapeSpec, build_body
from .mncp import SolverConfig

SCENARIO_KINDS = ("tumbling_sweep", "incline_test", "shape_comparison")

# transient discarded before measuring, and the measured window (field periods)
SKIP_PERIODS = 1
MEASURE_PERIODS = 5

# climbed = net up-slope progress over the final MEASURE_PERIODS exceeding
# this fraction of the half-perimeter advance per period
PROGRESS_FRACTION = 0.1

SHAPE_COMPARISON_KINDS = ("cuboid", "spiked", "spiked_ends", "curved")


def noslip_speed(length, height, frequency_hz):
    """Kinematic rolling bound: 2 (L + H) f for a tumbling box."""
    if length <= 0 or height <= 0 or frequency_hz < 0:
        raise ValueError("dimensions must be positive and frequency nonnegative")
    return 2.0 * (length + height) * frequency_hz


def step_size(frequency_hz, base=1e-4, ceiling=1e-3):
    """Default step: 1e-4 s at 1 Hz, scaled with the field period, capped."""
    if frequency_hz <= 0:
        return ceiling
    return min(base / frequency_hz, ceiling)


@dataclass(frozen=True)
class ScenarioSpec:
    """One reproducible experiment family."""

    kind: str
    robot: presets.RobotParams
    substrate: object  # SubstrateParams; incline_deg is overridden per point
    shape: ShapeSpec
    field_t: float = presets.FIELD_T
    frequency_hz: float = 1.0
    sweep: tuple = (1.0,)  # frequencies (Hz) or incline angles (deg)
    duration_s: Optional[float] = None  # default: transient + measured window
    step_s: Optional[float] = None
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if len(self.sweep) == 0:
            raise ValueError("sweep must not be empty")


@dataclass
class SweepPoint:
    """Result at one sweep value (frequency or angle)."""

    value: float
    mean_speed: float
    mean_slip: float
    noslip: float
    climbed: Optional[bool]
    adhesion_t: np.ndarray
    adhesion: np.ndarray
    trajectory: object
    failure: Optional[str] = None


@dataclass
class ScenarioResult:
    spec: ScenarioSpec
    points: list
    by_shape: Optional[dict] = None


def _build_setup(spec, substrate, frequency_hz, shape=None):
    shape = shape if shape is not None else spec.shape
    robot = spec.robot
    drive = presets.magnetic_drive(robot, frequency_hz, field_t=spec.field_t)
    setup = SimulationSetup(
        body=build_body(shape),
        inertia=presets.inertia(robot),
        drive=drive,
        substrate=substrate,
        friction=presets.friction(substrate),
        solver=spec.solver,
    )
    state = resting_state(setup)
    drive = drive.with_aligned_phase(state.pose)
    setup = replace(setup, drive=drive)
    return setup, resting_state(setup)


def _measure(traj, frequency_hz, duration):
    """Mean forward speed and mean slip over trailing integer periods."""
    period = 1.0 / frequency_hz
    n_periods = int(np.floor(duration / period + 1e-9))
    used = min(MEASURE_PERIODS, max(n_periods - SKIP_PERIODS, 1))
    t_to = traj.t[0] + n_periods * period
    t_from = t_to - used * period
    dy = traj.displacement_y(t_from, t_to)
    mean_speed = dy / (used * period)
    # slip of the contact point, backward-positive, time-averaged over the
    # same window; zero while airborne
    sel = (traj.t >= t_from - 1e-12) & (traj.t <= t_to + 1e-12)
    in_contact = traj.p_n[sel] > 0.0
    slip = np.where(in_contact, -traj.slip_t[sel], 0.0)
    mean_slip = float(np.mean(slip)) if slip.size else 0.0
    return mean_speed, mean_slip, t_from, t_to


def _climbed(traj, frequency_hz, duration, shape):
    period = 1.0 / frequency_hz
    n_periods = int(np.floor(duration / period + 1e-9))
    used = min(MEASURE_PERIODS, max(n_periods - 1, 1))
    t_to = traj.t[0] + n_periods * period
    t_from = t_to - used * period
    progress = traj.displacement_y(t_from, t_to)
    threshold = 0.5 * (shape.length + shape.height) * PROGRESS_FRACTION * used
    return bool(progress > threshold)


RUNAWAY_BODY_LENGTHS = 20.0  # early-exit slide threshold for incline runs


def _run_point(spec, substrate, frequency_hz, shape=None, want_climb=False):
    setup, state = _build_setup(spec, substrate, frequency_hz, shape)
    h = spec.step_s if spec.step_s is not None else step_size(frequency_hz)
    period = 1.0 / frequency_hz
    duration = (
        spec.duration_s
        if spec.duration_s is not None
        else (SKIP_PERIODS + MEASURE_PERIODS) * period
    )
    sh = shape if shape is not None else spec.shape
    runaway = RUNAWAY_BODY_LENGTHS * (sh.length + sh.height)
    try:
        if want_climb:
            # integrate period by period; a robot that has slid far down the
            # slope has decided the question, no need to ride it further
            traj = None
            t_done = 0.0
            st = state
            while t_done < duration - 1e-12:
                chunk = min(period, duration - t_done)
                part = run(st, chunk, h, setup)
                traj = part if traj is None else _concat(traj, part)
                t_done += chunk
                st = part.final_state
                if traj.position[-1, 1] - traj.position[0, 1] < -runaway:
                    return SweepPoint(
                        value=np.nan,
                        mean_speed=np.nan,
                        mean_slip=np.nan,
                        noslip=noslip_speed(sh.length, sh.height, frequency_hz),
                        climbed=False,
                        adhesion_t=traj.t,
                        adhesion=traj.adhesion,
                        trajectory=traj,
                    )
        else:
            traj = run(state, duration, h, setup)
    except StepFailure as err:
        partial = err.trajectory
        climbed = None
        if want_climb and partial is not None and len(partial.t) > 1:
            # a run that already slid away decides no-climb even though the
            # integration died mid-slide
            if partial.position[-1, 1] - partial.position[0, 1] < -runaway:
                climbed = False
        return SweepPoint(
            value=np.nan,
            mean_speed=np.nan,
            mean_slip=np.nan,
            noslip=noslip_speed(sh.length, sh.height, frequency_hz),
            climbed=climbed,
            adhesion_t=partial.t if partial is not None else np.array([]),
            adhesion=partial.adhesion if partial is not None else np.array([]),
            trajectory=partial,
            failure=str(err),
        )
    mean_speed, mean_slip, _, _ = _measure(traj, frequency_hz, duration)
    climbed = _climbed(traj, frequency_hz, duration, sh) if want_climb else None
    return SweepPoint(
        value=frequency_hz,
        mean_speed=mean_speed,
        mean_slip=mean_slip,
        noslip=noslip_speed(sh.length, sh.height, frequency_hz),
        climbed=climbed,
        adhesion_t=traj.t,
        adhesion=traj.adhesion,
        trajectory=traj,
    )


def _concat(a, b):
    """Join two trajectory chunks (b's initial row repeats a's last)."""
    from dataclasses import fields as dc_fields

    kwargs = {}
    for f in dc_fields(a):
        if f.name == "final_state":
            kwargs[f.name] = b.final_state
            continue
        xa, xb = getattr(a, f.name), getattr(b, f.name)
        kwargs[f.name] = np.concatenate([xa, xb[1:]], axis=0)
    return type(a)(**kwargs)


def run_tumbling_sweep(spec):
    """Mean speed and slip at each frequency on the horizontal substrate."""
    if spec.kind != "tumbling_sweep":
        raise ValueError("spec.kind must be tumbling_sweep")
    points = []
    for f in spec.sweep:
        substrate = replace(spec.substrate, incline_deg=0.0)
        point = _run_point(spec, substrate, float(f))
        point.value = float(f)
        points.append(point)
    return ScenarioResult(spec=spec, points=points)


def run_incline_test(spec):
    """Climb / no-climb at each incline angle, with the adhesion series."""
    if spec.kind != "incline_test":
        raise ValueError("spec.kind must be incline_test")
    points = []
    for theta in spec.sweep:
        substrate = replace(spec.substrate, incline_deg=float(theta))
        point = _run_point(
            spec, substrate, spec.frequency_hz, want_climb=True
        )
        point.value = float(theta)
        points.append(point)
    return ScenarioResult(spec=spec, points=points)


def run_shape_comparison(spec, substrates=None, incline_angles=(30.0, 45.0)):
    """Speed ranking across shapes plus the incline ladder per shape.

    All shapes share the spec robot's inertia and magnetic identity. Speeds
    are measured on the horizontal substrate(s) at the spec frequency;
    the ladder runs on the spec substrate at 1 Hz.
    """
    if spec.kind != "shape_comparison":
        raise ValueError("spec.kind must be shape_comparison")
    if substrates is None:
        substrates = {"default": spec.substrate}
    by_shape = {}
    for kind in SHAPE_COMPARISON_KINDS:
        shape = replace(spec.shape, kind=kind)
        speeds = {}
        for name, sub in substrates.items():
            flat = replace(sub, incline_deg=0.0)
            point = _run_point(spec, flat, spec.frequency_hz, shape=shape)
            speeds[name] = point
        ladder = {}
        for theta in incline_angles:
            sub = replace(spec.substrate, incline_deg=float(theta))
            ladder[theta] = _run_point(
                spec, sub, 1.0, shape=shape, want_climb=True
            )
        by_shape[kind] = {"speeds": speeds, "ladder": ladder}
    return ScenarioResult(spec=spec, points=[], by_shape=by_shape)
