"""Measured parameter sets for the two robot/substrate pairings.

``paper_table1`` is the original robot on dry paper, ``aluminum_table3`` the
higher-magnetization robot on aluminum. Shape extras that the source
material leaves as drawings (curvature radius, spike depth and tooth count)
carry declared defaults here and are echoed into run metadata.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .contact import FrictionParams
from .dynamics import InertiaParams, MagneticDrive, SubstrateParams
from .geometry import ShapeSpec

FIELD_T = 0.02

# cuboid external dimensions (m): length along y, width along x, height z
LENGTH = 0.8e-3
WIDTH = 0.4e-3
HEIGHT = 0.1e-3


@dataclass(frozen=True)
class RobotParams:
    """Inertial and magnetic identity of a robot."""

    mass: float
    magnetic_volume: float
    magnetization: float  # A/m
    alignment_offset_deg: float


ROBOTS = {
    "paper_table1": RobotParams(
        mass=1.6071e-7,
        magnetic_volume=2.9e-11,
        magnetization=15000.0,
        alignment_offset_deg=27.0,
    ),
    "aluminum_table3": RobotParams(
        mass=6.94e-8,
        magnetic_volume=3.2e-11,
        magnetization=51835.0,
        alignment_offset_deg=0.0,
    ),
}

SUBSTRATES = {
    "paper_table1": SubstrateParams(
        adhesion_coefficient=3.7148,
        mu=0.3,
        electrostatic_force=3.2022e-6,
    ),
    "aluminum_table3": SubstrateParams(
        adhesion_coefficient=26.1771,
        mu=0.54,
        electrostatic_force=0.0,
    ),
}

PRESET_NAMES = tuple(ROBOTS)


def shape_spec(kind="cuboid", **extras):
    return ShapeSpec(kind=kind, length=LENGTH, width=WIDTH, height=HEIGHT, **extras)


def magnetization_body(robot):
    """Body-frame magnetization: along the length, offset in the tumbling plane."""
    phi = np.deg2rad(robot.alignment_offset_deg)
    return robot.magnetization * np.array([0.0, np.cos(phi), np.sin(phi)])


def magnetic_drive(robot, frequency_hz, field_t=FIELD_T):
    return MagneticDrive(
        field_t=field_t,
        frequency_hz=frequency_hz,
        magnetic_volume=robot.magnetic_volume,
        magnetization_body=magnetization_body(robot),
    )


def inertia(robot):
    """All shapes share the uniform-density cuboid inertia."""
    return InertiaParams.from_cuboid(robot.mass, LENGTH, WIDTH, HEIGHT)


def friction(substrate):
    """Ellipsoid with unit tangential axes; the torsional axis is the
    characteristic contact-patch radius sqrt(A)/2 of the largest facet."""
    return FrictionParams(
        mu=substrate.mu,
        e_t=1.0,
        e_o=1.0,
        e_r=float(np.sqrt(LENGTH * WIDTH) / 2.0),
    )
