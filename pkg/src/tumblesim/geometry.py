"""Convex body geometry for the tumbling-robot contact model.

Bodies are intersections of smooth convex inequalities f_i(z) <= 0 written in
the body frame; supported constraint kinds are affine half-spaces (flat
facets) and solid circular cylinders (curved facets). Each constraint stores
the surface area of its facet, which the dynamics uses to turn "which side is
down" into a contact area.

Robot shapes:

* ``cuboid``      - box of length L (y), width W (x), height H (z)
* ``curved``      - box whose top and bottom faces are replaced by
                    cylindrical caps of radius R about x-parallel axes
                    (a lens-shaped cross section that rolls smoothly)
* ``spiked``      - box with a row of saw teeth on each end face
* ``spiked_ends`` - box with one full-height wedge on each end face
* ``halfspace``   - unbounded substrate, single constraint -z <= 0

Spiked shapes are not convex; they are built as unions of convex pieces and
contact runs against one piece at a time.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import rotations
from .mncp import NonConvergence


class UnsupportedShape(ValueError):
    """Shape spec is malformed or outside the representable family."""


class NoFacetArea(LookupError):
    """The constraint has no finite facet (substrate plane)."""


@dataclass(frozen=True)
class Pose:
    """Rigid placement: world position of the body origin plus orientation."""

    position: np.ndarray
    quaternion: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(3)
        quat = np.asarray(self.quaternion, dtype=float).reshape(4)
        norm = np.linalg.norm(quat)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"quaternion norm {norm} deviates from 1")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "quaternion", quat / norm)

    @classmethod
    def identity(cls):
        return cls(np.zeros(3), rotations.IDENTITY.copy())

    def rotation_matrix(self):
        return rotations.to_matrix(self.quaternion)

    def to_world(self, points_body):
        return self.position + rotations.rotate(self.quaternion, points_body)

    def to_body(self, points_world):
        mat = self.rotation_matrix()
        return np.einsum("ji,...j->...i", mat, np.asarray(points_world) - self.position)


@dataclass(frozen=True)
class ShapeSpec:
    """Dimensions of a robot (or substrate) shape.

    Length runs along body y (the tumbling direction), width along x (the
    field rotation axis), height along z. Extras: ``curvature_radius`` for
    the curved robot, ``spike_depth`` / ``spike_teeth`` for the spiked ones.
    Extras without numbers in the source material carry declared defaults and
    are echoed into run metadata.
    """

    kind: str
    length: float = 1.0
    width: float = 1.0
    height: float = 1.0
    curvature_radius: float = 2.0e-3
    spike_depth: float = 1.5e-4
    spike_teeth: int = 3

    KINDS = ("cuboid", "spiked", "spiked_ends", "curved", "halfspace")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise UnsupportedShape(f"unknown shape kind {self.kind!r}")
        if self.kind != "halfspace" and min(self.length, self.width, self.height) <= 0:
            raise UnsupportedShape("dimensions must be positive")


@dataclass(frozen=True, eq=False)
class ConvexBody:
    """Intersection of affine and cylindrical convex constraints.

    Constraint i is affine for i < len(affine_normals) (f = n.z - c with unit
    outward normal n) and a solid cylinder afterwards
    (f = (|P (z - center)|^2 - R^2) / (2 R), P projecting out the axis, so f
    approximates the signed surface distance near the boundary).
    ``face_areas[i]`` is the area of facet i, ``None`` when the facet is
    unbounded, and 0.0 for curved facets whose plane contact is a line.
    """

    label: str
    affine_normals: np.ndarray  # (ma, 3) unit rows
    affine_offsets: np.ndarray  # (ma,)
    cyl_centers: np.ndarray  # (mc, 3)
    cyl_axes: np.ndarray  # (mc, 3) unit rows
    cyl_radii: np.ndarray  # (mc,)
    face_areas: tuple
    vertices: np.ndarray  # (nv, 3), empty for unbounded bodies
    not_adjacent: frozenset = frozenset()  # pairs (i, j) of facets with no shared edge
    bounded: bool = True

    @property
    def num_constraints(self):
        return len(self.affine_normals) + len(self.cyl_radii)

    @property
    def num_affine(self):
        return len(self.affine_normals)

    def reference_point(self, pose):
        if self.bounded and len(self.vertices):
            return pose.to_world(self.vertices.mean(axis=0))
        # unbounded: a point on the first constraint plane
        n = self.affine_normals[0]
        return pose.to_world(self.affine_offsets[0] * n)

    # -- batched evaluation ------------------------------------------------

    def values_body(self, pts):
        """Constraint values at body-frame points (..., 3) -> (..., m)."""
        pts = np.asarray(pts, dtype=float)
        affine = np.einsum("ij,...j->...i", self.affine_normals, pts) - self.affine_offsets
        if not len(self.cyl_radii):
            return affine
        vals = [affine]
        for c, a, r in zip(self.cyl_centers, self.cyl_axes, self.cyl_radii):
            d = pts - c
            perp = d - np.einsum("...j,j->...", d, a)[..., None] * a
            vals.append(
                ((np.einsum("...j,...j->...", perp, perp) - r * r) / (2.0 * r))[..., None]
            )
        return np.concatenate(vals, axis=-1)

    def gradients_body(self, pts):
        """Constraint gradients at body-frame points (..., 3) -> (..., m, 3)."""
        pts = np.asarray(pts, dtype=float)
        shape = pts.shape[:-1]
        grads = [np.broadcast_to(self.affine_normals, shape + self.affine_normals.shape)]
        for c, a, r in zip(self.cyl_centers, self.cyl_axes, self.cyl_radii):
            d = pts - c
            perp = d - np.einsum("...j,j->...", d, a)[..., None] * a
            grads.append((perp / r)[..., None, :])
        return np.concatenate(grads, axis=-2)

    def evaluate_world(self, positions, rotmats, pts_world, with_gradients=True):
        """Values (and world gradients) at world points under batched poses."""
        pts_world = np.asarray(pts_world, dtype=float)
        local = np.einsum(
            "...ji,...j->...i", rotmats, pts_world - np.asarray(positions, dtype=float)
        )
        vals = self.values_body(local)
        if not with_gradients:
            return vals
        if not len(self.cyl_radii):
            # affine gradients do not depend on the evaluation point
            grads = np.einsum("...ij,mj->...mi", rotmats, self.affine_normals)
            grads = np.broadcast_to(grads, local.shape[:-1] + grads.shape[-2:])
            return vals, grads
        grads = np.einsum("...ij,...mj->...mi", rotmats, self.gradients_body(local))
        return vals, grads

    # -- projections and support -------------------------------------------

    def _project_constraint(self, i, pts):
        if i < self.num_affine:
            n = self.affine_normals[i]
            excess = np.maximum(0.0, pts @ n - self.affine_offsets[i])
            return pts - excess[..., None] * n
        j = i - self.num_affine
        c, a, r = self.cyl_centers[j], self.cyl_axes[j], self.cyl_radii[j]
        d = pts - c
        perp = d - (d @ a)[..., None] * a
        rho = np.linalg.norm(perp, axis=-1)
        scale = np.where(rho > r, 1.0 - r / np.maximum(rho, 1e-300), 0.0)
        return pts - scale[..., None] * perp

    def project_body(self, pt, tol=1e-14, max_sweeps=300):
        """Euclidean projection onto the body (Dykstra over constraints)."""
        x = np.asarray(pt, dtype=float).copy()
        m = self.num_constraints
        corrections = np.zeros((m, 3))
        scale = 1.0 + np.linalg.norm(x)
        for _ in range(max_sweeps):
            moved = 0.0
            for i in range(m):
                y = x + corrections[i]
                xn = self._project_constraint(i, y)
                corrections[i] = y - xn
                moved = max(moved, float(np.linalg.norm(xn - x)))
                x = xn
            if moved <= tol * scale and (self.values_body(x) <= tol * scale).all():
                break
        return x

    def project_world(self, pose, pt_world):
        return pose.to_world(self.project_body(pose.to_body(pt_world)))

    def support_point(self, pose, direction, feas_tol=1e-12):
        """World point of the body maximizing direction . point (exact).

        Candidates are the vertices plus, for each cylindrical facet, the
        tangent generatrix point at the axial extremes, filtered to the
        feasible patch.
        """
        if not self.bounded:
            raise UnsupportedShape("support point of an unbounded body")
        mat = pose.rotation_matrix()
        d_world = np.asarray(direction, dtype=float)
        d_body = mat.T @ d_world
        cands = [self.vertices]
        for c, a, r in zip(self.cyl_centers, self.cyl_axes, self.cyl_radii):
            perp = d_body - (d_body @ a) * a
            norm = np.linalg.norm(perp)
            if norm < 1e-12:
                continue
            radial = c + r * perp / norm
            ax_coords = self.vertices @ a
            offsets = np.array([ax_coords.min(), 0.5 * (ax_coords.min() + ax_coords.max()), ax_coords.max()])
            pts = radial + (offsets - radial @ a)[:, None] * a
            ok = (self.values_body(pts) <= feas_tol).all(axis=-1)
            if ok.any():
                cands.append(pts[ok])
        cands = np.concatenate(cands, axis=0)
        world = pose.position + cands @ mat.T
        return world[int(np.argmax(world @ d_world))]

    def lowest_height(self, positions, rotmats, soften=0.0):
        """Lowest world z reached by the body under batched poses.

        The signed gap to the substrate plane z = 0: negative means the body
        penetrates. Exact for the vertex hull plus cylindrical facets (whose
        tangent generatrix candidates are kept only when they lie on the
        feasible patch). A positive ``soften`` replaces the hard minimum by a
        soft-min of that width, which keeps the value within
        soften * log(candidates) of exact but makes it differentiable when
        several corners tie (a box landing flat).
        """
        positions = np.asarray(positions, dtype=float)
        rotated = np.einsum("...ij,vj->...vi", rotmats, self.vertices)
        heights = [positions[..., 2:3] + rotated[..., 2]]
        for c, a, r in zip(self.cyl_centers, self.cyl_axes, self.cyl_radii):
            a_w = np.einsum("...ij,j->...i", rotmats, a)
            sin = np.sqrt(np.maximum(0.0, 1.0 - a_w[..., 2] ** 2))
            # body-frame radial direction of the downward tangent point
            d_b = -rotmats[..., 2, :]
            perp = d_b - np.einsum("...i,i->...", d_b, a)[..., None] * a
            norm = np.linalg.norm(perp, axis=-1)
            safe = np.maximum(norm, 1e-30)
            cand_body = c + r * perp / safe[..., None]
            feasible = (self.values_body(cand_body) <= 1e-9).all(axis=-1)
            feasible &= norm > 1e-12
            c_wz = positions[..., 2] + np.einsum("...ij,j->...i", rotmats, c)[..., 2]
            cand_z = np.where(feasible, c_wz - r * sin, np.inf)
            heights.append(cand_z[..., None])
        heights = np.concatenate(heights, axis=-1)
        low = np.min(heights, axis=-1)
        if soften <= 0.0:
            return low
        weight_sum = np.sum(np.exp((low[..., None] - heights) / soften), axis=-1)
        return low - soften * np.log(weight_sum)

    def lowest_height_jacobian(self, position, rotmat, soften=0.0):
        """Lowest height and its derivative against an infinitesimal rotation.

        Returns (gap, rot_grad) where rot_grad[j] is the rate of change of
        the lowest world z under a rotation about world axis j (the
        translation derivative is trivially e_z). Matches lowest_height's
        candidate selection and softening at a single pose.
        """
        rotated = self.vertices @ rotmat.T
        zs = position[2] + rotated[:, 2]
        heights = [zs]
        grads = [np.stack([rotated[:, 1], -rotated[:, 0], np.zeros(len(zs))], axis=-1)]
        for c, a, r in zip(self.cyl_centers, self.cyl_axes, self.cyl_radii):
            a_w = rotmat @ a
            sin = np.sqrt(max(0.0, 1.0 - a_w[2] ** 2))
            d_b = -rotmat[2, :]
            perp = d_b - (d_b @ a) * a
            norm = float(np.linalg.norm(perp))
            if norm <= 1e-12:
                continue
            cand_body = c + r * perp / norm
            if not (self.values_body(cand_body) <= 1e-9).all():
                continue
            c_w = rotmat @ c
            tilt = a_w[2] / max(sin, 1e-30)
            heights.append(np.array([position[2] + c_w[2] - r * sin]))
            grads.append(
                (
                    np.array([c_w[1], -c_w[0], 0.0])
                    + r * tilt * np.array([a_w[1], -a_w[0], 0.0])
                )[None, :]
            )
        heights = np.concatenate(heights)
        grads = np.concatenate(grads, axis=0)
        best = int(np.argmin(heights))
        low = float(heights[best])
        if soften <= 0.0:
            return low, grads[best]
        weights = np.exp((low - heights) / soften)
        total = weights.sum()
        gap = low - soften * np.log(total)
        return gap, (weights / total) @ grads

    def lowest_patch_center(self, pose, direction, tie_tol=1e-7):
        """Centroid of the extreme points within tie_tol of the support plane.

        For a facet lying flush against the plane this is the facet centroid,
        for an extreme edge its midpoint; a much better equivalent-contact
        -point seed than an arbitrary corner. The tie tolerance is loose on
        purpose so a face that is flat to within solver noise still seeds at
        its centroid.
        """
        if not self.bounded:
            raise UnsupportedShape("support patch of an unbounded body")
        mat = pose.rotation_matrix()
        d_world = np.asarray(direction, dtype=float)
        d_body = mat.T @ d_world
        cands = [self.vertices]
        for c, a, r in zip(self.cyl_centers, self.cyl_axes, self.cyl_radii):
            perp = d_body - (d_body @ a) * a
            norm = np.linalg.norm(perp)
            if norm < 1e-12:
                continue
            radial = c + r * perp / norm
            ax_coords = self.vertices @ a
            offsets = np.array(
                [ax_coords.min(), 0.5 * (ax_coords.min() + ax_coords.max()), ax_coords.max()]
            )
            pts = radial + (offsets - radial @ a)[:, None] * a
            ok = (self.values_body(pts) <= 1e-12).all(axis=-1)
            if ok.any():
                cands.append(pts[ok])
        cands = np.concatenate(cands, axis=0)
        world = pose.position + cands @ mat.T
        heights = world @ d_world
        top = heights.max()
        return world[heights >= top - tie_tol].mean(axis=0)


@dataclass(frozen=True)
class ConvexUnion:
    """Non-convex body represented as a union of convex pieces."""

    label: str
    pieces: tuple


def _full_adjacency_except(m, non_adjacent_pairs):
    return frozenset(frozenset(p) for p in non_adjacent_pairs)


def _prism(label, profile_yz, half_width, extra_not_adjacent=()):
    """Convex prism along x from a CCW convex polygon in the (y, z) plane.

    Constraint order: 0 = x+, 1 = x-, then one facet per polygon edge
    (edge k runs from vertex k to vertex k+1).
    """
    profile = np.asarray(profile_yz, dtype=float)
    n_edges = len(profile)
    normals = [np.array([1.0, 0.0, 0.0]), np.array([-1.0, 0.0, 0.0])]
    offsets = [half_width, half_width]
    areas = [None, None]
    # shoelace for the x-face area
    y, z = profile[:, 0], profile[:, 1]
    poly_area = 0.5 * abs(
        float(np.dot(y, np.roll(z, -1)) - np.dot(z, np.roll(y, -1)))
    )
    areas[0] = areas[1] = poly_area
    edge_lengths = []
    for k in range(n_edges):
        p1, p2 = profile[k], profile[(k + 1) % n_edges]
        d = p2 - p1
        ln = np.linalg.norm(d)
        if ln < 1e-15:
            raise UnsupportedShape("degenerate profile edge")
        # outward normal of a CCW polygon edge: rotate direction by -90 deg
        ny, nz = d[1] / ln, -d[0] / ln
        normals.append(np.array([0.0, ny, nz]))
        offsets.append(ny * p1[0] + nz * p1[1])
        areas.append(ln * 2.0 * half_width)
        edge_lengths.append(ln)
    verts = np.concatenate(
        [
            np.column_stack([np.full(n_edges, s * half_width), profile])
            for s in (+1.0, -1.0)
        ]
    )
    # x faces touch every side facet; side facets touch only consecutive ones
    non_adj = {(0, 1)}
    for a in range(n_edges):
        for b in range(a + 1, n_edges):
            if (a + 1) % n_edges != b and (b + 1) % n_edges != a:
                non_adj.add((a + 2, b + 2))
    non_adj.update(extra_not_adjacent)
    return ConvexBody(
        label=label,
        affine_normals=np.array(normals),
        affine_offsets=np.array(offsets),
        cyl_centers=np.zeros((0, 3)),
        cyl_axes=np.zeros((0, 3)),
        cyl_radii=np.zeros(0),
        face_areas=tuple(areas),
        vertices=verts,
        not_adjacent=_full_adjacency_except(len(normals), non_adj),
    )


def _cuboid(label, length, width, height):
    """Box with facet order x+, x-, y+, y-, z+, z- (5 = bottom face)."""
    eye = np.eye(3)
    normals = np.array([eye[0], -eye[0], eye[1], -eye[1], eye[2], -eye[2]])
    offsets = np.array([width / 2, width / 2, length / 2, length / 2, height / 2, height / 2])
    areas = (
        length * height,
        length * height,
        width * height,
        width * height,
        length * width,
        length * width,
    )
    corners = np.array(
        [
            [sx * width / 2, sy * length / 2, sz * height / 2]
            for sx in (-1, 1)
            for sy in (-1, 1)
            for sz in (-1, 1)
        ]
    )
    return ConvexBody(
        label=label,
        affine_normals=normals,
        affine_offsets=offsets,
        cyl_centers=np.zeros((0, 3)),
        cyl_axes=np.zeros((0, 3)),
        cyl_radii=np.zeros(0),
        face_areas=areas,
        vertices=corners,
        not_adjacent=_full_adjacency_except(6, {(0, 1), (2, 3), (4, 5)}),
    )


def _curved(label, spec):
    """Lens-profile body: box sides, cylindrical top and bottom caps.

    Facet order: 0 = x+, 1 = x-, 2 = y+, 3 = y-, 4 = top cap, 5 = bottom cap.
    Cap facets carry zero effective contact area (plane contact along a line).
    """
    length, width, height = spec.length, spec.width, spec.height
    radius = spec.curvature_radius
    min_radius = (length**2 + height**2) / (4.0 * height)
    if radius <= min_radius:
        raise UnsupportedShape(
            f"curvature radius {radius} too small for the lens profile "
            f"(needs > {min_radius:.4g})"
        )
    c = radius - height / 2.0  # cap circle center offset from the midplane
    half_chord = np.sqrt(radius**2 - (length / 2.0) ** 2)
    end_half_height = half_chord - c
    end_area = width * 2.0 * end_half_height
    lens_area = 2.0 * (
        (length / 2.0) * half_chord
        + radius**2 * np.arcsin(length / (2.0 * radius))
        - c * length
    )
    eye = np.eye(3)
    normals = np.array([eye[0], -eye[0], eye[1], -eye[1]])
    offsets = np.array([width / 2, width / 2, length / 2, length / 2])
    areas = (lens_area, lens_area, end_area, end_area, 0.0, 0.0)
    corners = np.array(
        [
            [sx * width / 2, sy * length / 2, sz * end_half_height]
            for sx in (-1, 1)
            for sy in (-1, 1)
            for sz in (-1, 1)
        ]
    )
    x_axis = np.array([1.0, 0.0, 0.0])
    return ConvexBody(
        label=label,
        affine_normals=normals,
        affine_offsets=offsets,
        cyl_centers=np.array([[0.0, 0.0, -c], [0.0, 0.0, c]]),
        cyl_axes=np.array([x_axis, x_axis]),
        cyl_radii=np.array([radius, radius]),
        face_areas=areas,
        vertices=corners,
        not_adjacent=_full_adjacency_except(6, {(0, 1), (2, 3)}),
    )


def _end_wedges(label_prefix, body_length, spec, tips_z):
    """Wedge pieces protruding from the +-y ends, tips at the given heights.

    Each wedge is a triangular prism (axis x) with base on the end face of
    the core box and tip edge at y = +-length/2.
    """
    depth = spec.spike_depth
    if depth <= 0 or 2.0 * depth >= spec.length:
        raise UnsupportedShape("spike depth must satisfy 0 < 2*depth < length")
    y0 = body_length / 2.0
    tip_y = spec.length / 2.0
    pieces = []
    n = len(tips_z)
    half_base = spec.height / (2.0 * n)
    for sign, tag in ((+1.0, "front"), (-1.0, "back")):
        for j, zc in enumerate(tips_z):
            base_lo = (zc - half_base, zc + half_base)
            # CCW triangle in (y, z): base corners then the tip
            profile = [
                (sign * y0, base_lo[0]),
                (sign * tip_y, zc),
                (sign * y0, base_lo[1]),
            ]
            if sign < 0:
                profile = profile[::-1]
            pieces.append(
                _prism(f"{label_prefix}_{tag}_{j}", profile, spec.width / 2.0)
            )
    return pieces


def build_body(spec):
    """Construct the body (or union of convex pieces) for a shape spec."""
    if spec.kind == "halfspace":
        # material occupies -z <= 0 in the substrate frame
        return ConvexBody(
            label="halfspace",
            affine_normals=np.array([[0.0, 0.0, -1.0]]),
            affine_offsets=np.array([0.0]),
            cyl_centers=np.zeros((0, 3)),
            cyl_axes=np.zeros((0, 3)),
            cyl_radii=np.zeros(0),
            face_areas=(None,),
            vertices=np.zeros((0, 3)),
            bounded=False,
        )
    if spec.kind == "cuboid":
        return _cuboid("cuboid", spec.length, spec.width, spec.height)
    if spec.kind == "curved":
        return _curved("curved", spec)
    if spec.kind in ("spiked", "spiked_ends"):
        body_length = spec.length - 2.0 * spec.spike_depth
        core = _cuboid("core", body_length, spec.width, spec.height)
        if spec.kind == "spiked_ends":
            tips = [0.0]
        else:
            if spec.spike_teeth < 1:
                raise UnsupportedShape("spike_teeth must be >= 1")
            n = spec.spike_teeth
            tips = [
                -spec.height / 2.0 + (j + 0.5) * spec.height / n for j in range(n)
            ]
        pieces = [core] + _end_wedges("spike", body_length, spec, tips)
        return ConvexUnion(label=spec.kind, pieces=tuple(pieces))
    raise UnsupportedShape(spec.kind)


def pieces_of(body):
    """Convex pieces of a body (a single-piece tuple for convex bodies)."""
    if isinstance(body, ConvexUnion):
        return body.pieces
    return (body,)


def world_constraint(body, pose, index, point):
    """Value and world-frame gradient of constraint ``index`` at a world point."""
    if not 0 <= index < body.num_constraints:
        raise IndexError(f"constraint index {index} out of range")
    mat = pose.rotation_matrix()
    vals, grads = body.evaluate_world(pose.position, mat, np.asarray(point, dtype=float))
    return float(vals[index]), grads[index]


def facet_area(body, index):
    """Stored facet area of constraint ``index`` (0.0 for curved facets)."""
    if not 0 <= index < body.num_constraints:
        raise IndexError(f"constraint index {index} out of range")
    area = body.face_areas[index]
    if area is None:
        raise NoFacetArea(f"{body.label} constraint {index} has no finite facet")
    return area


def _is_plane(body):
    return (not body.bounded) and body.num_constraints == 1


def _closest_to_plane(body, pose, plane_body, plane_pose):
    n_world = rotations.rotate(plane_pose.quaternion, plane_body.affine_normals[0])
    p0 = plane_body.reference_point(plane_pose)
    a1 = body.support_point(pose, -n_world)
    gap = float((a1 - p0) @ n_world)
    a2 = a1 - gap * n_world
    return a1, a2, max(gap, 0.0)


def closest_points(body_f, pose_f, body_g, pose_g, tol=1e-13, max_iterations=5000):
    """Closest point pair (a1 on F, a2 on G) and their distance.

    Separated or touching bodies only. Unions are handled piecewise. Against
    a substrate plane the pair is exact (support point); general convex pairs
    use alternating projections and may raise NonConvergence.
    """
    if isinstance(body_f, ConvexUnion):
        best = None
        for piece in body_f.pieces:
            got = closest_points(piece, pose_f, body_g, pose_g, tol, max_iterations)
            if best is None or got[2] < best[2]:
                best = got
        return best
    if isinstance(body_g, ConvexUnion):
        a2, a1, dist = closest_points(body_g, pose_g, body_f, pose_f, tol, max_iterations)
        return a1, a2, dist

    if _is_plane(body_g) and body_f.bounded:
        return _closest_to_plane(body_f, pose_f, body_g, pose_g)
    if _is_plane(body_f) and body_g.bounded:
        a2, a1, dist = _closest_to_plane(body_g, pose_g, body_f, pose_f)
        return a1, a2, dist

    a1 = body_f.reference_point(pose_f)
    for _ in range(max_iterations):
        a2 = body_g.project_world(pose_g, a1)
        a1_next = body_f.project_world(pose_f, a2)
        moved = float(np.linalg.norm(a1_next - a1))
        a1 = a1_next
        if moved <= tol * (1.0 + np.linalg.norm(a1)):
            a2 = body_g.project_world(pose_g, a1)
            return a1, a2, float(np.linalg.norm(a1 - a2))
    raise NonConvergence(
        "closest-point projection did not settle",
        None,
    )
