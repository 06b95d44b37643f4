"""Triangle meshes, their edge graphs, geodesics and farthest point sampling."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

LOGGER = logging.getLogger(__name__)
LOGGER.addHandler(logging.NullHandler())


class DegenerateGeometryError(ValueError):
    """Raised when a mesh has no spatial extent."""


@dataclass(frozen=True, slots=True)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self) -> None:
        vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if faces.size and (faces.min() < 0 or faces.max() >= len(vertices)):
            raise ValueError(f"face index out of range for {len(vertices)} vertices")
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "faces", faces)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def with_vertices(self, vertices: np.ndarray) -> "TriangleMesh":
        return TriangleMesh(vertices, self.faces)

    def translated(self, offset: Sequence[float]) -> "TriangleMesh":
        return self.with_vertices(self.vertices + np.asarray(offset, dtype=np.float64))

    def rotated(self, rotation: np.ndarray) -> "TriangleMesh":
        return self.with_vertices(self.vertices @ np.asarray(rotation).T)


@dataclass(frozen=True, slots=True)
class MeshGraph:
    """Symmetric weighted adjacency of the mesh edges (CSR, Euclidean weights)."""

    matrix: sp.csr_matrix

    @property
    def n_vertices(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_edges(self) -> int:
        return self.matrix.nnz // 2

    def neighbors(self, vertex: int) -> list[tuple[int, float]]:
        start, stop = self.matrix.indptr[vertex], self.matrix.indptr[vertex + 1]
        return [
            (int(j), float(w))
            for j, w in zip(self.matrix.indices[start:stop], self.matrix.data[start:stop])
        ]

    @property
    def adjacency(self) -> list[list[tuple[int, float]]]:
        return [self.neighbors(i) for i in range(self.n_vertices)]

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique undirected edges ``(E, 2)`` with ``i < j`` and their lengths."""

        upper = sp.triu(self.matrix, k=1).tocoo()
        order = np.lexsort((upper.col, upper.row))
        pairs = np.stack([upper.row[order], upper.col[order]], axis=1).astype(np.int64)
        return pairs, upper.data[order]


def normalize_to_unit_ball(mesh: TriangleMesh) -> TriangleMesh:
    """Centre the vertex centroid at the origin and scale the farthest vertex to norm 1."""

    if mesh.n_vertices == 0:
        raise DegenerateGeometryError("cannot normalise a mesh without vertices")
    centred = mesh.vertices - mesh.vertices.mean(axis=0)
    radius = np.linalg.norm(centred, axis=1).max()
    if not np.isfinite(radius) or radius <= np.finfo(np.float64).tiny:
        raise DegenerateGeometryError("all vertices coincide; mesh has no extent")
    return mesh.with_vertices(centred / radius)


def build_mesh_graph(mesh: TriangleMesh) -> MeshGraph:
    """One undirected edge per unique face edge, weighted by Euclidean length."""

    n = mesh.n_vertices
    if mesh.n_faces == 0:
        return MeshGraph(sp.csr_matrix((n, n)))
    faces = mesh.faces
    pairs = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    pairs = np.unique(np.sort(pairs, axis=1), axis=0)
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    lengths = np.linalg.norm(mesh.vertices[pairs[:, 0]] - mesh.vertices[pairs[:, 1]], axis=1)
    # zero-length edges would be dropped by the sparse format anyway
    keep = lengths > 0.0
    pairs, lengths = pairs[keep], lengths[keep]
    rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
    cols = np.concatenate([pairs[:, 1], pairs[:, 0]])
    matrix = sp.csr_matrix((np.concatenate([lengths, lengths]), (rows, cols)), shape=(n, n))
    LOGGER.debug("mesh graph: %d vertices, %d edges", n, len(pairs))
    return MeshGraph(matrix)


def _check_vertex(graph: MeshGraph, vertex: int) -> None:
    if not 0 <= int(vertex) < graph.n_vertices:
        raise ValueError(f"vertex {vertex} out of range for {graph.n_vertices} vertices")


def geodesic_distances(
    graph: MeshGraph,
    sources: Sequence[int],
    cutoff: Optional[float] = None,
    unweighted: bool = False,
) -> np.ndarray:
    """Dense ``(len(sources), V)`` shortest-path matrix; unreachable entries are ``inf``."""

    for source in sources:
        _check_vertex(graph, source)
    limit = np.inf if cutoff is None else float(cutoff)
    return np.atleast_2d(
        dijkstra(
            graph.matrix,
            directed=False,
            indices=np.asarray(sources, dtype=np.int64),
            limit=limit,
            unweighted=unweighted,
        )
    )


def dijkstra_geodesics(
    graph: MeshGraph, source: int, cutoff: Optional[float] = None
) -> dict[int, float]:
    """Exact shortest-path distances from ``source``; only entries ``<= cutoff`` are kept."""

    if cutoff is not None and cutoff < 0:
        raise ValueError("cutoff must be non-negative")
    distances = geodesic_distances(graph, [source], cutoff)[0]
    reached = np.flatnonzero(np.isfinite(distances))
    if cutoff is not None:
        reached = reached[distances[reached] <= cutoff]
    return {int(i): float(distances[i]) for i in reached}


def hop_distances(graph: MeshGraph, source: int, limit: Optional[float] = None) -> np.ndarray:
    """Number of mesh edges on the shortest path from ``source`` (``inf`` beyond ``limit``)."""

    return geodesic_distances(graph, [source], limit, unweighted=True)[0]


def farthest_point_sampling(points: np.ndarray, n: int, start: int = 0) -> list[int]:
    """Greedy max-min selection in Euclidean space; ties go to the lowest index."""

    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if n > len(points):
        raise ValueError(f"cannot sample {n} points from {len(points)}")
    if n < 0:
        raise ValueError("sample count must be non-negative")
    if n == 0:
        return []
    if not 0 <= start < len(points):
        raise ValueError(f"start index {start} out of range for {len(points)} points")

    selected = [int(start)]
    nearest = np.linalg.norm(points - points[start], axis=1)
    nearest[start] = -np.inf
    for _ in range(n - 1):
        pick = int(np.argmax(nearest))
        selected.append(pick)
        nearest = np.minimum(nearest, np.linalg.norm(points - points[pick], axis=1))
        nearest[selected] = -np.inf
    return selected


def triangle_areas(mesh: TriangleMesh) -> np.ndarray:
    a, b, c = (mesh.vertices[mesh.faces[:, k]] for k in range(3))
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def surface_area(mesh: TriangleMesh) -> float:
    if mesh.n_faces == 0:
        return 0.0
    return float(triangle_areas(mesh).sum())


__all__ = [
    "DegenerateGeometryError",
    "MeshGraph",
    "TriangleMesh",
    "build_mesh_graph",
    "dijkstra_geodesics",
    "farthest_point_sampling",
    "geodesic_distances",
    "hop_distances",
    "normalize_to_unit_ball",
    "surface_area",
    "triangle_areas",
]
