"""Run configuration parsing and result serialization.

Configs are YAML with SI units spelled in the key names. Outputs are
comma-separated files with one header row plus a metadata file that echoes
the fully-defaulted config, so a run can be reproduced from its output
directory alone. Numeric formatting uses repr round-trip precision; repeat
runs produce bit-identical data files.
"""

from __future__ import annotations

import os
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import yaml

from . import __version__, presets
from .geometry import ShapeSpec
from .mncp import SolverConfig
from .scenarios import SCENARIO_KINDS, ScenarioSpec
from .dynamics import SubstrateParams

EMIT_CHOICES = ("trajectory", "sweep_curve", "adhesion_series", "diagnostics")


class ParseError(ValueError):
    """Config text is not structurally valid."""


class ValidationError(ValueError):
    """Config parsed but violates an invariant; the message names it."""


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioSpec
    output_dir: str = "runs"
    emit: tuple = ("sweep_curve", "diagnostics")


_ROBOT_KEYS = {
    "mass_kg": "mass",
    "magnetic_volume_m3": "magnetic_volume",
    "magnetization_a_per_m": "magnetization",
    "alignment_offset_deg": "alignment_offset_deg",
}
_SUBSTRATE_KEYS = {
    "adhesion_coefficient_n_per_m2": "adhesion_coefficient",
    "friction_coefficient": "mu",
    "electrostatic_force_n": "electrostatic_force",
    "incline_deg": "incline_deg",
}
_SHAPE_KEYS = {
    "kind": "kind",
    "length_m": "length",
    "width_m": "width",
    "height_m": "height",
    "curvature_radius_m": "curvature_radius",
    "spike_depth_m": "spike_depth",
    "spike_teeth": "spike_teeth",
}
_NUMERICS_KEYS = {
    "max_iterations": "max_iterations",
    "residual_tolerance": "residual_tolerance",
    "fb_smoothing": "fb_smoothing",
    "line_search_shrink": "line_search_shrink",
    "min_step": "min_step",
}


def _pick(section, mapping, where):
    unknown = set(section) - set(mapping)
    if unknown:
        raise ValidationError(f"unknown keys in {where}: {sorted(unknown)}")
    return {dst: section[src] for src, dst in mapping.items() if src in section}


def _require(condition, message):
    if not condition:
        raise ValidationError(message)


def parse_config(text):
    """Parse and validate a YAML run config, applying preset defaults."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ParseError(f"invalid YAML: {err}") from err
    if not isinstance(raw, dict):
        raise ParseError("config must be a mapping")
    unknown = set(raw) - {"scenario", "numerics", "output_dir", "emit"}
    if unknown:
        raise ValidationError(f"unknown top-level keys: {sorted(unknown)}")
    sc = raw.get("scenario")
    if not isinstance(sc, dict):
        raise ValidationError("scenario section is required")
    unknown = set(sc) - {
        "kind",
        "preset",
        "robot",
        "substrate",
        "shape",
        "drive",
        "sweep",
        "duration_s",
    }
    if unknown:
        raise ValidationError(f"unknown keys in scenario: {sorted(unknown)}")

    kind = sc.get("kind")
    _require(kind in SCENARIO_KINDS, f"scenario.kind must be one of {SCENARIO_KINDS}")

    preset = sc.get("preset")
    robot_kw = {}
    substrate_kw = {}
    if preset is not None:
        _require(
            preset in presets.PRESET_NAMES,
            f"unknown preset {preset!r}; available: {presets.PRESET_NAMES}",
        )
        robot_kw = asdict(presets.ROBOTS[preset])
        substrate_kw = asdict(presets.SUBSTRATES[preset])
    robot_kw.update(_pick(sc.get("robot", {}) or {}, _ROBOT_KEYS, "scenario.robot"))
    substrate_kw.update(
        _pick(sc.get("substrate", {}) or {}, _SUBSTRATE_KEYS, "scenario.substrate")
    )
    for key in ("mass", "magnetic_volume", "magnetization"):
        _require(key in robot_kw, f"scenario.robot is missing {key}")
        _require(robot_kw[key] > 0, f"robot {key} must be positive")
    robot_kw.setdefault("alignment_offset_deg", 0.0)
    for key in ("adhesion_coefficient", "mu", "electrostatic_force"):
        _require(key in substrate_kw, f"scenario.substrate is missing {key}")
        _require(substrate_kw[key] >= 0, f"substrate {key} must be nonnegative")
    robot = presets.RobotParams(**robot_kw)
    try:
        substrate = SubstrateParams(**substrate_kw)
    except ValueError as err:
        raise ValidationError(str(err)) from err

    shape_kw = _pick(sc.get("shape", {}) or {}, _SHAPE_KEYS, "scenario.shape")
    shape_kw.setdefault("kind", "cuboid")
    shape_kw.setdefault("length", presets.LENGTH)
    shape_kw.setdefault("width", presets.WIDTH)
    shape_kw.setdefault("height", presets.HEIGHT)
    try:
        shape = ShapeSpec(**shape_kw)
    except ValueError as err:
        raise ValidationError(str(err)) from err

    drive = sc.get("drive", {}) or {}
    unknown = set(drive) - {"field_t", "frequency_hz"}
    if unknown:
        raise ValidationError(f"unknown keys in scenario.drive: {sorted(unknown)}")
    field_t = float(drive.get("field_t", presets.FIELD_T))
    frequency = float(drive.get("frequency_hz", 1.0))
    _require(field_t >= 0, "drive field_t must be nonnegative")
    _require(frequency > 0, "drive frequency_hz must be positive")

    sweep = sc.get("sweep", [frequency])
    _require(
        isinstance(sweep, (list, tuple)) and len(sweep) > 0,
        "scenario.sweep must be a nonempty list",
    )
    for v in sweep:
        _require(np.isfinite(v), "sweep values must be finite numbers")
        if kind == "tumbling_sweep":
            _require(v > 0, "sweep frequencies must be positive")
        if kind == "incline_test":
            _require(0 <= v < 90, "incline angles must lie in [0, 90)")

    duration = sc.get("duration_s")
    if duration is not None:
        _require(duration > 0, "duration_s must be positive")
        lowest = min(sweep) if kind == "tumbling_sweep" else frequency
        _require(
            duration * lowest >= 5.0,
            "duration_s must cover at least 5 field periods at the lowest frequency",
        )

    numerics = raw.get("numerics", {}) or {}
    step_s = numerics.pop("step_s", None) if isinstance(numerics, dict) else None
    solver_kw = _pick(numerics, _NUMERICS_KEYS, "numerics")
    try:
        solver = SolverConfig(**solver_kw)
    except ValueError as err:
        raise ValidationError(str(err)) from err
    if step_s is not None:
        _require(step_s > 0, "numerics.step_s must be positive")

    emit = raw.get("emit", ["sweep_curve", "diagnostics"])
    _require(
        isinstance(emit, (list, tuple)) and set(emit) <= set(EMIT_CHOICES),
        f"emit entries must be among {EMIT_CHOICES}",
    )

    spec = ScenarioSpec(
        kind=kind,
        robot=robot,
        substrate=substrate,
        shape=shape,
        field_t=field_t,
        frequency_hz=frequency,
        sweep=tuple(float(v) for v in sweep),
        duration_s=duration,
        step_s=step_s,
        solver=solver,
    )
    return RunConfig(
        scenario=spec,
        output_dir=str(raw.get("output_dir", "runs")),
        emit=tuple(emit),
    )


def render_config(config):
    """YAML text that parses back to an equal RunConfig."""
    spec = config.scenario
    doc = {
        "scenario": {
            "kind": spec.kind,
            "robot": {
                "mass_kg": spec.robot.mass,
                "magnetic_volume_m3": spec.robot.magnetic_volume,
                "magnetization_a_per_m": spec.robot.magnetization,
                "alignment_offset_deg": spec.robot.alignment_offset_deg,
            },
            "substrate": {
                "adhesion_coefficient_n_per_m2": spec.substrate.adhesion_coefficient,
                "friction_coefficient": spec.substrate.mu,
                "electrostatic_force_n": spec.substrate.electrostatic_force,
                "incline_deg": spec.substrate.incline_deg,
            },
            "shape": {
                "kind": spec.shape.kind,
                "length_m": spec.shape.length,
                "width_m": spec.shape.width,
                "height_m": spec.shape.height,
                "curvature_radius_m": spec.shape.curvature_radius,
                "spike_depth_m": spec.shape.spike_depth,
                "spike_teeth": spec.shape.spike_teeth,
            },
            "drive": {"field_t": spec.field_t, "frequency_hz": spec.frequency_hz},
            "sweep": list(spec.sweep),
            "duration_s": spec.duration_s,
        },
        "numerics": {
            "max_iterations": spec.solver.max_iterations,
            "residual_tolerance": spec.solver.residual_tolerance,
            "fb_smoothing": spec.solver.fb_smoothing,
            "line_search_shrink": spec.solver.line_search_shrink,
            "min_step": spec.solver.min_step,
            "step_s": spec.step_s,
        },
        "output_dir": config.output_dir,
        "emit": list(config.emit),
    }
    return yaml.safe_dump(doc, sort_keys=False)


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _write_csv(path, header, columns):
    rows = len(columns[0]) if columns else 0
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(rows):
            fh.write(",".join(_fmt(col[i]) for col in columns) + "\n")


def _trajectory_columns(traj):
    return (
        [
            "t_s",
            "position_x_m",
            "position_y_m",
            "position_z_m",
            "quat_w",
            "quat_x",
            "quat_y",
            "quat_z",
            "v_x_m_per_s",
            "v_y_m_per_s",
            "v_z_m_per_s",
            "omega_x_rad_per_s",
            "omega_y_rad_per_s",
            "omega_z_rad_per_s",
            "contact_piece",
            "contact_face",
            "contact_area_m2",
            "adhesion_force_n",
            "p_n_n_s",
            "p_t_n_s",
            "p_o_n_s",
            "p_r_n_m_s",
            "sigma",
        ],
        [
            traj.t,
            traj.position[:, 0],
            traj.position[:, 1],
            traj.position[:, 2],
            traj.quaternion[:, 0],
            traj.quaternion[:, 1],
            traj.quaternion[:, 2],
            traj.quaternion[:, 3],
            traj.V[:, 0],
            traj.V[:, 1],
            traj.V[:, 2],
            traj.V[:, 3],
            traj.V[:, 4],
            traj.V[:, 5],
            traj.piece,
            traj.face,
            traj.contact_area,
            traj.adhesion,
            traj.p_n,
            traj.p_t,
            traj.p_o,
            traj.p_r,
            traj.sigma,
        ],
    )


def _diagnostics_columns(traj):
    return (
        [
            "t_s",
            "solver_residual",
            "solver_iterations",
            "separation_m",
            "support_gap_m",
            "friction_power_n_m_per_s",
            "ellipsoid_slack_n2_s2",
            "slip_t_m_per_s",
            "slip_o_m_per_s",
        ],
        [
            traj.t,
            traj.residual,
            traj.iterations,
            traj.gap,
            traj.support_gap,
            traj.dissipation,
            traj.ellipsoid_slack,
            traj.slip_t,
            traj.slip_o,
        ],
    )


def write_outputs(result, config, started_at=None):
    """Serialize a ScenarioResult per the config's emit set.

    Returns the list of files written. Data files are bit-identical across
    repeat runs; the metadata file additionally records wall time.
    """
    out = config.output_dir
    os.makedirs(out, exist_ok=True)
    written = []

    def emit(name):
        return name in config.emit

    points = result.points
    if points and emit("sweep_curve"):
        if result.spec.kind == "tumbling_sweep":
            path = os.path.join(out, "sweep_curve.csv")
            _write_csv(
                path,
                ["frequency_hz", "mean_speed_m_per_s", "noslip_m_per_s", "mean_slip_m_per_s"],
                [
                    [p.value for p in points],
                    [p.mean_speed for p in points],
                    [p.noslip for p in points],
                    [p.mean_slip for p in points],
                ],
            )
            written.append(path)
        elif result.spec.kind == "incline_test":
            path = os.path.join(out, "incline_ladder.csv")
            _write_csv(
                path,
                ["theta_deg", "climbed"],
                [
                    [p.value for p in points],
                    [bool(p.climbed) for p in points],
                ],
            )
            written.append(path)
    if result.by_shape is not None and emit("sweep_curve"):
        rows_shape, rows_sub, rows_speed, rows_noslip = [], [], [], []
        lad_shape, lad_theta, lad_climbed = [], [], []
        for kind, data in result.by_shape.items():
            for sub_name, point in data["speeds"].items():
                rows_shape.append(kind)
                rows_sub.append(sub_name)
                rows_speed.append(point.mean_speed)
                rows_noslip.append(point.noslip)
            for theta, point in data["ladder"].items():
                lad_shape.append(kind)
                lad_theta.append(theta)
                lad_climbed.append(bool(point.climbed))
        path = os.path.join(out, "shape_speeds.csv")
        with open(path, "w") as fh:
            fh.write("shape,substrate,mean_speed_m_per_s,noslip_m_per_s\n")
            for row in zip(rows_shape, rows_sub, rows_speed, rows_noslip):
                fh.write(f"{row[0]},{row[1]},{_fmt(row[2])},{_fmt(row[3])}\n")
        written.append(path)
        path = os.path.join(out, "shape_ladder.csv")
        with open(path, "w") as fh:
            fh.write("shape,theta_deg,climbed\n")
            for row in zip(lad_shape, lad_theta, lad_climbed):
                fh.write(f"{row[0]},{_fmt(row[1])},{_fmt(row[2])}\n")
        written.append(path)

    for point in points:
        tag = ("%g" % point.value).replace(".", "p")
        if emit("adhesion_series") and point.trajectory is not None:
            path = os.path.join(out, f"adhesion_series_{tag}.csv")
            _write_csv(
                path,
                ["t_s", "adhesion_force_n", "contact_area_m2"],
                [point.adhesion_t, point.adhesion, point.trajectory.contact_area],
            )
            written.append(path)
        if emit("trajectory") and point.trajectory is not None:
            path = os.path.join(out, f"trajectory_{tag}.csv")
            header, cols = _trajectory_columns(point.trajectory)
            _write_csv(path, header, cols)
            written.append(path)
        if emit("diagnostics") and point.trajectory is not None:
            path = os.path.join(out, f"diagnostics_{tag}.csv")
            header, cols = _diagnostics_columns(point.trajectory)
            _write_csv(path, header, cols)
            written.append(path)

    meta = {
        "config": yaml.safe_load(render_config(config)),
        "code_version": __version__,
        "schema_version": 1,
        "wall_time_s": None if started_at is None else time.time() - started_at,
        "files": [os.path.basename(p) for p in written],
    }
    meta_path = os.path.join(out, "run_metadata.yaml")
    with open(meta_path, "w") as fh:
        yaml.safe_dump(meta, fh, sort_keys=False)
    written.append(meta_path)
    _append_run_index(out, written)
    return written


def _append_run_index(out_dir, files):
    """Append this run to the index with an atomic replace."""
    index = os.path.join(out_dir, "runs_index.txt")
    existing = ""
    if os.path.exists(index):
        with open(index) as fh:
            existing = fh.read()
    tmp = index + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(existing)
        fh.write(" ".join(os.path.basename(p) for p in files) + "\n")
    os.replace(tmp, index)
