"""Config parsing, serialization and CLI tests."""

import os

import numpy as np
import pytest

from tumblesim import presets
from tumblesim.cli import main
from tumblesim.io import (
    ParseError,
    RunConfig,
    ValidationError,
    parse_config,
    render_config,
    write_outputs,
)
from tumblesim.scenarios import ScenarioSpec, run_tumbling_sweep

MINIMAL = """
scenario:
  kind: tumbling_sweep
  preset: paper_table1
  sweep: [1, 2, 5, 10]
"""

TINY_RUN = """
scenario:
  kind: tumbling_sweep
  preset: paper_table1
  drive: {frequency_hz: 20.0}
  sweep: [20.0]
  duration_s: 0.3
numerics:
  step_s: 2.0e-5
output_dir: "{out}"
emit: [sweep_curve, adhesion_series, trajectory, diagnostics]
"""


class TestParseConfig:
    def test_minimal_preset(self):
        config = parse_config(MINIMAL)
        spec = config.scenario
        assert spec.kind == "tumbling_sweep"
        assert spec.robot.mass == pytest.approx(1.6071e-7)
        assert spec.substrate.adhesion_coefficient == pytest.approx(3.7148)
        assert spec.substrate.mu == pytest.approx(0.3)
        assert spec.sweep == (1.0, 2.0, 5.0, 10.0)
        assert spec.shape.length == pytest.approx(0.8e-3)

    def test_missing_mass(self):
        text = """
scenario:
  kind: tumbling_sweep
  robot: {magnetic_volume_m3: 2.9e-11, magnetization_a_per_m: 15000.0}
  substrate:
    adhesion_coefficient_n_per_m2: 3.7
    friction_coefficient: 0.3
    electrostatic_force_n: 0.0
  sweep: [1]
"""
        with pytest.raises(ValidationError, match="mass"):
            parse_config(text)

    def test_negative_friction(self):
        text = MINIMAL + "  substrate: {friction_coefficient: -0.1}\n"
        with pytest.raises(ValidationError):
            parse_config(text)

    def test_unknown_key_named(self):
        text = MINIMAL + "  warp_factor: 9\n"
        with pytest.raises(ValidationError, match="warp_factor"):
            parse_config(text)

    def test_invalid_yaml(self):
        with pytest.raises(ParseError):
            parse_config("scenario: [unclosed")

    def test_short_duration_rejected(self):
        text = MINIMAL + "  duration_s: 0.5\n"
        with pytest.raises(ValidationError, match="5 field periods"):
            parse_config(text)

    def test_roundtrip(self):
        config = parse_config(MINIMAL)
        again = parse_config(render_config(config))
        assert again == config

    def test_roundtrip_with_overrides(self):
        text = """
scenario:
  kind: incline_test
  preset: aluminum_table3
  shape: {kind: curved, curvature_radius_m: 2.5e-3}
  drive: {frequency_hz: 2.0}
  sweep: [30, 45]
numerics:
  residual_tolerance: 1.0e-9
  step_s: 5.0e-5
output_dir: out/alu
emit: [trajectory]
"""
        config = parse_config(text)
        assert config.scenario.solver.residual_tolerance == 1e-9
        assert parse_config(render_config(config)) == config


@pytest.fixture(scope="module")
def tiny_result():
    spec = ScenarioSpec(
        kind="tumbling_sweep",
        robot=presets.ROBOTS["paper_table1"],
        substrate=presets.SUBSTRATES["paper_table1"],
        shape=presets.shape_spec("cuboid"),
        sweep=(20.0,),
        step_s=2e-5,
        duration_s=0.3,
    )
    return spec, run_tumbling_sweep(spec)


class TestWriteOutputs:
    def test_schema_and_bit_identity(self, tiny_result, tmp_path):
        spec, result = tiny_result
        config = RunConfig(
            scenario=spec,
            output_dir=str(tmp_path),
            emit=("sweep_curve", "adhesion_series", "trajectory", "diagnostics"),
        )
        files = write_outputs(result, config)
        names = {os.path.basename(f) for f in files}
        assert "sweep_curve.csv" in names
        assert "adhesion_series_20.csv" in names
        assert "trajectory_20.csv" in names
        assert "run_metadata.yaml" in names

        with open(tmp_path / "sweep_curve.csv") as fh:
            header = fh.readline().strip()
        assert header == "frequency_hz,mean_speed_m_per_s,noslip_m_per_s,mean_slip_m_per_s"
        with open(tmp_path / "trajectory_20.csv") as fh:
            traj_header = fh.readline().strip().split(",")
        assert traj_header[:4] == ["t_s", "position_x_m", "position_y_m", "position_z_m"]
        assert "adhesion_force_n" in traj_header
        assert "sigma" in traj_header

        first = {f: open(f, "rb").read() for f in files if f.endswith(".csv")}
        write_outputs(result, config)
        for f, blob in first.items():
            assert open(f, "rb").read() == blob

    def test_adhesion_identity_row_wise(self, tiny_result, tmp_path):
        spec, result = tiny_result
        traj = result.points[0].trajectory
        np.testing.assert_allclose(
            traj.adhesion,
            spec.substrate.adhesion_coefficient * traj.contact_area,
            atol=1e-18,
        )

    def test_run_index_appends(self, tiny_result, tmp_path):
        spec, result = tiny_result
        config = RunConfig(scenario=spec, output_dir=str(tmp_path), emit=("sweep_curve",))
        write_outputs(result, config)
        write_outputs(result, config)
        with open(tmp_path / "runs_index.txt") as fh:
            assert len(fh.readlines()) == 2


class TestCli:
    def test_presets_lists_both(self, capsys):
        assert main(["presets"]) == 0
        out = capsys.readouterr().out
        assert "paper_table1" in out and "aluminum_table3" in out

    def test_check_echoes_defaults(self, tmp_path, capsys):
        cfg = tmp_path / "c.yaml"
        cfg.write_text(MINIMAL)
        assert main(["check", str(cfg)]) == 0
        out = capsys.readouterr().out
        assert "mass_kg" in out and "1.6071e-07" in out

    def test_bad_config_exit_code(self, tmp_path, capsys):
        cfg = tmp_path / "bad.yaml"
        cfg.write_text("scenario: {kind: nonsense}\n")
        assert main(["check", str(cfg)]) == 2

    def test_run_writes_files(self, tmp_path, capsys):
        out = tmp_path / "out"
        cfg = tmp_path / "run.yaml"
        cfg.write_text(TINY_RUN.replace("{out}", str(out)))
        assert main(["run", str(cfg)]) == 0
        assert (out / "sweep_curve.csv").exists()
        assert (out / "run_metadata.yaml").exists()

    def test_output_dir_override(self, tmp_path):
        out = tmp_path / "a"
        other = tmp_path / "b"
        cfg = tmp_path / "run.yaml"
        cfg.write_text(TINY_RUN.replace("{out}", str(out)))
        assert main(["run", str(cfg), "--output-dir", str(other)]) == 0
        assert (other / "sweep_curve.csv").exists()
        assert not out.exists()
