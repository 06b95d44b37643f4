"""Procedurally deformed training pairs with identity correspondence."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Literal, Optional

import numpy as np

from meshes.geometry import TriangleMesh, normalize_to_unit_ball

LOGGER = logging.getLogger(__name__)
LOGGER.addHandler(logging.NullHandler())

BaseShape = Literal["cylinder", "sphere", "bar"]

MIN_VERTICES = 500
TUBE_RADIUS = 0.5
TUBE_HEIGHT = 2.0
BAR_HALF_WIDTH = 0.4


class DeformationRangeError(ValueError):
    """Deformation parameters outside the self-intersection-free range."""


@dataclass(frozen=True, slots=True)
class Deformation:
    """Bend angle (radians over the whole axis), twist rate (radians per unit
    height) and the amplitude/width/centre of one Gaussian bump."""

    bend: float = 0.0
    twist: float = 0.0
    bump: float = 0.0
    bump_width: float = 0.25
    bump_center: Optional[int] = None

    def __post_init__(self) -> None:
        if abs(self.bend) > np.pi:
            raise DeformationRangeError(f"bend angle {self.bend} exceeds pi")
        if abs(self.twist) > 2.0 * np.pi:
            raise DeformationRangeError(f"twist rate {self.twist} exceeds 2*pi per unit")
        if self.bump_width <= 0:
            raise DeformationRangeError("bump width must be positive")

    @property
    def is_identity(self) -> bool:
        return self.bend == 0.0 and self.twist == 0.0 and self.bump == 0.0

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, slots=True)
class ShapePairSample:
    mesh_a: TriangleMesh
    mesh_b: TriangleMesh
    correspondence: np.ndarray
    deformation: Deformation = field(default_factory=Deformation)
    base: str = "cylinder"
    name: str = "pair"

    def __post_init__(self) -> None:
        correspondence = np.asarray(self.correspondence, dtype=np.int64)
        if correspondence.shape != (self.mesh_a.n_vertices,):
            raise ValueError("correspondence must map every vertex of mesh A")
        if correspondence.size and (correspondence.min() < 0 or correspondence.max() >= self.mesh_b.n_vertices):
            raise ValueError("correspondence points outside mesh B")
        object.__setattr__(self, "correspondence", correspondence)


def _grid_faces(n_rings: int, n_around: int, offset: int = 0) -> list[list[int]]:
    faces = []
    for ring in range(n_rings - 1):
        for k in range(n_around):
            a = offset + ring * n_around + k
            b = offset + ring * n_around + (k + 1) % n_around
            c = a + n_around
            d = b + n_around
            faces.append([a, b, d])
            faces.append([a, d, c])
    return faces


def _cross_section(base: BaseShape, angles: np.ndarray) -> np.ndarray:
    circle = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    if base == "bar":
        # project the circle onto the square of half-width BAR_HALF_WIDTH
        return BAR_HALF_WIDTH * circle / np.abs(circle).max(axis=1, keepdims=True)
    return TUBE_RADIUS * circle


def base_mesh(base: BaseShape, resolution: int) -> TriangleMesh:
    """Open tube (cylinder/bar) along z or a UV sphere, ``resolution`` rings of
    ``resolution`` vertices each (the sphere adds two poles)."""

    if resolution < 3:
        raise ValueError("resolution must be at least 3")
    angles = 2.0 * np.pi * np.arange(resolution) / resolution
    if base in ("cylinder", "bar"):
        section = _cross_section(base, angles)
        heights = np.linspace(-TUBE_HEIGHT / 2, TUBE_HEIGHT / 2, resolution)
        vertices = np.concatenate(
            [np.column_stack([section, np.full(resolution, z)]) for z in heights]
        )
        faces = _grid_faces(resolution, resolution)
    elif base == "sphere":
        polar = np.pi * np.arange(1, resolution + 1) / (resolution + 1)
        rings = [
            np.column_stack([np.sin(t) * np.cos(angles), np.sin(t) * np.sin(angles), np.full(resolution, -np.cos(t))])
            for t in polar
        ]
        south, north = len(polar) * resolution, len(polar) * resolution + 1
        vertices = np.concatenate(rings + [np.array([[0.0, 0.0, -1.0], [0.0, 0.0, 1.0]])])
        faces = _grid_faces(resolution, resolution)
        last = (resolution - 1) * resolution
        for k in range(resolution):
            nxt = (k + 1) % resolution
            faces.append([south, nxt, k])
            faces.append([north, last + k, last + nxt])
    else:
        raise ValueError(f"unknown base shape {base!r}")
    return TriangleMesh(vertices, np.asarray(faces, dtype=np.int64))


def bend_points(points: np.ndarray, angle: float, length: float) -> np.ndarray:
    """Map the z axis (``[-length/2, length/2]``) onto a circular arc in the x-z plane.

    The arc keeps the axis length; radius ``length / angle``. Cross sections stay
    orthogonal to the arc.
    """

    if angle == 0.0:
        return points.copy()
    radius = length / angle
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    phi = z / radius
    arm = radius - x
    return np.column_stack([radius - arm * np.cos(phi), y, arm * np.sin(phi)])


def twist_points(points: np.ndarray, rate: float) -> np.ndarray:
    """Rotate every point about the z axis by ``rate * z``."""

    theta = rate * points[:, 2]
    cos, sin = np.cos(theta), np.sin(theta)
    x, y = points[:, 0], points[:, 1]
    return np.column_stack([cos * x - sin * y, sin * x + cos * y, points[:, 2]])


def bump_points(
    points: np.ndarray,
    amplitude: float,
    center: np.ndarray,
    width: float,
    base: BaseShape = "cylinder",
) -> np.ndarray:
    """Offset points radially by a Gaussian of the distance to ``center``."""

    if base == "sphere":
        radial = points
    else:
        radial = np.column_stack([points[:, 0], points[:, 1], np.zeros(len(points))])
    norms = np.linalg.norm(radial, axis=1, keepdims=True)
    direction = np.divide(radial, norms, out=np.zeros_like(radial), where=norms > 0)
    falloff = np.exp(-np.sum((points - center) ** 2, axis=1) / (2.0 * width**2))
    return points + amplitude * falloff[:, None] * direction


def deform(mesh: TriangleMesh, deformation: Deformation, base: BaseShape = "cylinder") -> TriangleMesh:
    """Apply bump, then twist, then bend to an un-normalised base mesh."""

    points = mesh.vertices.copy()
    if deformation.bump:
        center_index = deformation.bump_center if deformation.bump_center is not None else 0
        points = bump_points(points, deformation.bump, points[center_index], deformation.bump_width, base)
    if deformation.twist:
        points = twist_points(points, deformation.twist)
    if deformation.bend:
        length = float(mesh.vertices[:, 2].max() - mesh.vertices[:, 2].min())
        points = bend_points(points, deformation.bend, length)
    return mesh.with_vertices(points)


def generate_synthetic_pair(
    base: BaseShape,
    resolution: int,
    deformation: Deformation,
    rng: np.random.Generator,
    name: str = "pair",
) -> ShapePairSample:
    """Mesh A is the base shape, mesh B its deformation; both unit-ball normalised."""

    mesh = base_mesh(base, resolution)
    if mesh.n_vertices < MIN_VERTICES:
        raise ValueError(f"resolution {resolution} gives {mesh.n_vertices} vertices (< {MIN_VERTICES})")
    if deformation.bump and deformation.bump_center is None:
        deformation = Deformation(
            deformation.bend,
            deformation.twist,
            deformation.bump,
            deformation.bump_width,
            int(rng.integers(mesh.n_vertices)),
        )
    deformed = deform(mesh, deformation, base)
    LOGGER.debug("generated %s pair %s with %s", base, name, deformation)
    return ShapePairSample(
        mesh_a=normalize_to_unit_ball(mesh),
        mesh_b=normalize_to_unit_ball(deformed),
        correspondence=np.arange(mesh.n_vertices),
        deformation=deformation,
        base=base,
        name=name,
    )


def random_deformation(
    rng: np.random.Generator,
    max_bend: float = np.pi / 3,
    max_twist: float = 0.0,
    max_bump: float = 0.0,
) -> Deformation:
    return Deformation(
        bend=float(rng.uniform(-max_bend, max_bend)) if max_bend else 0.0,
        twist=float(rng.uniform(-max_twist, max_twist)) if max_twist else 0.0,
        bump=float(rng.uniform(0.0, max_bump)) if max_bump else 0.0,
    )


def generate_dataset(
    n_pairs: int,
    base: BaseShape,
    resolution: int,
    rng: np.random.Generator,
    max_bend: float = np.pi / 3,
    max_twist: float = 0.0,
    max_bump: float = 0.0,
) -> list[ShapePairSample]:
    return [
        generate_synthetic_pair(
            base,
            resolution,
            random_deformation(rng, max_bend, max_twist, max_bump),
            rng,
            name=f"pair_{k:03d}",
        )
        for k in range(n_pairs)
    ]


__all__ = [
    "BaseShape",
    "Deformation",
    "DeformationRangeError",
    "ShapePairSample",
    "base_mesh",
    "bend_points",
    "bump_points",
    "deform",
    "generate_dataset",
    "generate_synthetic_pair",
    "random_deformation",
    "twist_points",
]
