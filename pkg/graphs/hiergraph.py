"""Seed-centred local graphs, shape graphs and geodesic supervision matrices."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Mapping, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import pdist, squareform

from meshes.geometry import MeshGraph, geodesic_distances, hop_distances

LOGGER = logging.getLogger(__name__)
LOGGER.addHandler(logging.NullHandler())

CutMode = Literal["hops", "geodesic"]
Correspondence = Union[Mapping[int, int], np.ndarray, Sequence[int]]


class HardNegativeError(ValueError):
    """No vertex lies in the requested hop ring; widen the ring."""


@dataclass(frozen=True, slots=True)
class LocalGraph:
    """Patch around ``seed``: node 0 is the seed at the local origin.

    ``edges`` holds each undirected pair once (``a < b``); ``directed_edges``
    gives both orientations.
    """

    seed: int
    vertex_ids: np.ndarray
    coords: np.ndarray
    edges: np.ndarray
    weights: np.ndarray
    radius: float

    @property
    def n_nodes(self) -> int:
        return len(self.vertex_ids)

    @property
    def nodes(self) -> list[tuple[int, np.ndarray]]:
        return list(zip(self.vertex_ids.tolist(), self.coords))

    def directed_edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        src = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        dst = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        return src, dst, np.concatenate([self.weights, self.weights])

    def adjacency(self) -> np.ndarray:
        """Dense weighted adjacency without self loops."""

        matrix = np.zeros((self.n_nodes, self.n_nodes))
        matrix[self.edges[:, 0], self.edges[:, 1]] = self.weights
        matrix[self.edges[:, 1], self.edges[:, 0]] = self.weights
        return matrix

    def with_coords(self, coords: np.ndarray) -> "LocalGraph":
        return LocalGraph(self.seed, self.vertex_ids, coords, self.edges, self.weights, self.radius)


@dataclass(slots=True)
class ShapeGraph:
    seeds: np.ndarray
    positions: np.ndarray
    edges: np.ndarray
    weights: np.ndarray
    radius: float
    connected: bool = True
    descriptors: Optional[object] = None
    node_features: Optional[object] = None

    @property
    def n_nodes(self) -> int:
        return len(self.seeds)

    def directed_edges(self) -> tuple[np.ndarray, np.ndarray]:
        src = np.concatenate([self.edges[:, 0], self.edges[:, 1]]).astype(np.int64)
        dst = np.concatenate([self.edges[:, 1], self.edges[:, 0]]).astype(np.int64)
        return src, dst

    def without_edges(self) -> "ShapeGraph":
        return ShapeGraph(
            self.seeds,
            self.positions,
            np.zeros((0, 2), dtype=np.int64),
            np.zeros(0),
            self.radius,
            connected=self.n_nodes <= 1,
        )


def _local_edges(coords: np.ndarray, r: float) -> tuple[np.ndarray, np.ndarray]:
    if len(coords) < 2:
        return np.zeros((0, 2), dtype=np.int64), np.zeros(0)
    distances = squareform(pdist(coords))
    rows, cols = np.triu_indices(len(coords), k=1)
    keep = distances[rows, cols] < r
    return np.stack([rows[keep], cols[keep]], axis=1).astype(np.int64), distances[rows, cols][keep]


def extract_local_graph(
    graph: MeshGraph,
    vertices: np.ndarray,
    seed: int,
    d_cut: float,
    r: float,
    mode: CutMode = "hops",
) -> LocalGraph:
    """Vertices within ``d_cut`` of ``seed`` (hops or geodesic), seed-centred,
    linked when their Euclidean distance is below ``r``."""

    if d_cut < 0:
        raise ValueError("d_cut must be non-negative")
    if r <= 0:
        raise ValueError("ball radius r must be positive")
    if mode == "hops":
        distances = hop_distances(graph, seed, d_cut)
    elif mode == "geodesic":
        distances = geodesic_distances(graph, [seed], d_cut)[0]
    else:
        raise ValueError(f"unknown cut mode {mode!r}")
    members = np.flatnonzero(distances <= d_cut)
    members = np.concatenate([[seed], members[members != seed]]).astype(np.int64)
    coords = vertices[members] - vertices[seed]
    edges, weights = _local_edges(coords, r)
    return LocalGraph(int(seed), members, coords, edges, weights, float(r))


def mine_hard_negative(
    graph: MeshGraph,
    positive_seed: int,
    ring: tuple[int, int],
    rng: np.random.Generator,
) -> int:
    """Uniform pick among vertices whose hop distance to ``positive_seed`` lies in ``ring``."""

    min_hops, max_hops = ring
    if min_hops < 1 or max_hops < min_hops:
        raise ValueError(f"invalid hop ring {ring}")
    hops = hop_distances(graph, positive_seed, max_hops)
    candidates = np.flatnonzero((hops >= min_hops) & (hops <= max_hops))
    if candidates.size == 0:
        raise HardNegativeError(
            f"no vertex between {min_hops} and {max_hops} hops of {positive_seed}; widen the ring"
        )
    return int(candidates[rng.integers(candidates.size)])


def build_shape_graph(
    seeds: Sequence[int],
    vertices: np.ndarray,
    graph: MeshGraph,
    r_shape: float,
) -> ShapeGraph:
    """Connect seeds whose geodesic distance is at most ``r_shape``."""

    seeds = np.asarray(seeds, dtype=np.int64)
    if len(np.unique(seeds)) != len(seeds):
        raise ValueError("shape graph seeds must be distinct")
    if r_shape <= 0:
        raise ValueError("r_shape must be positive")
    between = geodesic_distances(graph, seeds, r_shape)[:, seeds]
    between = np.minimum(between, between.T)
    rows, cols = np.triu_indices(len(seeds), k=1)
    keep = np.isfinite(between[rows, cols]) & (between[rows, cols] <= r_shape)
    edges = np.stack([rows[keep], cols[keep]], axis=1).astype(np.int64)
    weights = between[rows, cols][keep]

    n = len(seeds)
    if n <= 1:
        connected = True
    else:
        adjacency = sp.csr_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n))
        connected = connected_components(adjacency, directed=False)[0] == 1
    if not connected:
        LOGGER.debug("shape graph with r_shape=%s is disconnected", r_shape)
    return ShapeGraph(seeds, vertices[seeds].copy(), edges, weights, float(r_shape), connected=connected)


def _lookup(correspondence: Correspondence, vertex: int) -> int:
    try:
        return int(correspondence[vertex])
    except (KeyError, IndexError):
        raise ValueError(f"missing correspondence for vertex {vertex}") from None


def bipartite_geodesic_matrix(
    correspondence: Correspondence,
    seeds_a: Sequence[int],
    seeds_b: Sequence[int],
    graph_b: MeshGraph,
) -> np.ndarray:
    """``M[i, l]``: geodesic on B between the image of A-seed ``i`` and B-seed ``l``."""

    images = [_lookup(correspondence, int(seed)) for seed in seeds_a]
    return geodesic_distances(graph_b, images)[:, np.asarray(seeds_b, dtype=np.int64)]


# --- text dump used by ``match --dump-graphs``


def format_shape_graph(shape: ShapeGraph) -> str:
    lines = [f"SHAPEGRAPH {shape.n_nodes} {len(shape.edges)}"]
    for i, (x, y, z) in enumerate(shape.positions):
        lines.append(f"{i} {float(x)!r} {float(y)!r} {float(z)!r}")
    for (i, l), w in zip(shape.edges, shape.weights):
        lines.append(f"{int(i)} {int(l)} {float(w)!r}")
    return "\n".join(lines) + "\n"


def write_shape_graph(shape: ShapeGraph, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_shape_graph(shape), encoding="utf-8")
    return path


def read_shape_graph(path: Path) -> ShapeGraph:
    """Positions and edges only; seeds are node indices once dumped."""

    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = lines[0].split() if lines else []
    if len(header) != 3 or header[0] != "SHAPEGRAPH":
        raise ValueError(f"{path}: not a shape graph dump")
    try:
        n_nodes, n_edges = int(header[1]), int(header[2])
        if len(lines) < 1 + n_nodes + n_edges:
            raise ValueError(f"expected {n_nodes} nodes and {n_edges} edges, found {len(lines) - 1} lines")
        nodes = np.array([[float(v) for v in line.split()[1:]] for line in lines[1 : 1 + n_nodes]]).reshape(-1, 3)
        edge_rows = [line.split() for line in lines[1 + n_nodes : 1 + n_nodes + n_edges]]
        edges = np.array([[int(a), int(b)] for a, b, _ in edge_rows], dtype=np.int64).reshape(-1, 2)
        weights = np.array([float(w) for _, _, w in edge_rows])
    except ValueError as exc:
        raise ValueError(f"{path}: malformed shape graph dump ({exc})") from None
    return ShapeGraph(np.arange(n_nodes), nodes, edges, weights, float(weights.max()) if len(weights) else 0.0)


__all__ = [
    "HardNegativeError",
    "LocalGraph",
    "ShapeGraph",
    "bipartite_geodesic_matrix",
    "build_shape_graph",
    "extract_local_graph",
    "format_shape_graph",
    "mine_hard_negative",
    "read_shape_graph",
    "write_shape_graph",
]
