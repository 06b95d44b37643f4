"""The full matching network: local descriptors, shape-graph features and GOT."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from graphs.hiergraph import CutMode, ShapeGraph, build_shape_graph, extract_local_graph
from meshes.geometry import MeshGraph, TriangleMesh, build_mesh_graph, farthest_point_sampling
from network.descriptor import (
    DescriptorParams,
    EncodingConfig,
    LocalGraphBatch,
    local_descriptors,
    node_features,
    zero_descriptors,
)
from network.diffcore import Tensor
from network.got import GOTConfig, GOTResult, create_gru_stack, got_forward, gru_stack_from_store
from network.layers import GRUParams
from network.params import ParameterStore

LOGGER = logging.getLogger(__name__)
LOGGER.addHandler(logging.NullHandler())


@dataclass(frozen=True, slots=True)
class ModelSpec:
    """Architecture switches; everything needed to rebuild parameters from a checkpoint."""

    d: int = 64
    tag_hidden: int = 32
    encoding: EncodingConfig = EncodingConfig()
    got: GOTConfig = GOTConfig()
    use_local_descriptor: bool = True
    use_shape_graph: bool = True


@dataclass(frozen=True, slots=True)
class PreparedShape:
    """Everything about one mesh that does not depend on the parameters."""

    mesh: TriangleMesh
    graph: MeshGraph
    seeds: np.ndarray
    local_graphs: LocalGraphBatch
    shape_graph: ShapeGraph

    @property
    def n_seeds(self) -> int:
        return len(self.seeds)

    @property
    def positions(self) -> np.ndarray:
        return self.shape_graph.positions

    def rotated(self, rotation: np.ndarray) -> "PreparedShape":
        """Rigidly rotated copy; topology, seeds and geodesics are unchanged."""

        rotation = np.asarray(rotation, dtype=np.float64)
        shape_graph = replace(self.shape_graph, positions=self.shape_graph.positions @ rotation.T)
        return PreparedShape(
            self.mesh.rotated(rotation),
            self.graph,
            self.seeds,
            self.local_graphs.rotated(rotation),
            shape_graph,
        )


def prepare_shape(
    mesh: TriangleMesh,
    n_seeds: int,
    d_cut: float,
    r: float,
    r_shape: float,
    mode: CutMode = "hops",
    graph: Optional[MeshGraph] = None,
) -> PreparedShape:
    """Seeds by farthest point sampling, one local graph per seed and the shape graph."""

    graph = graph if graph is not None else build_mesh_graph(mesh)
    seeds = np.asarray(farthest_point_sampling(mesh.vertices, n_seeds), dtype=np.int64)
    batch = LocalGraphBatch(
        [extract_local_graph(graph, mesh.vertices, int(seed), d_cut, r, mode) for seed in seeds]
    )
    shape_graph = build_shape_graph(seeds, mesh.vertices, graph, r_shape)
    LOGGER.debug(
        "prepared shape: %d seeds, %d local nodes, %d shape edges",
        len(seeds),
        batch.n_nodes,
        len(shape_graph.edges),
    )
    return PreparedShape(mesh, graph, seeds, batch, shape_graph)


@dataclass(slots=True)
class ForwardPass:
    descriptors_a: Tensor
    descriptors_b: Tensor
    shape_a: ShapeGraph
    shape_b: ShapeGraph
    result: GOTResult


class BendingGraphModel:
    """Parameters plus the forward pass shared by training, matching and evaluation."""

    def __init__(
        self,
        store: ParameterStore,
        spec: ModelSpec,
        descriptor: DescriptorParams,
        gru: list[list[GRUParams]],
    ) -> None:
        self.store = store
        self.spec = spec
        self.descriptor = descriptor
        self.gru = gru

    @classmethod
    def create(cls, spec: ModelSpec, rng: np.random.Generator) -> "BendingGraphModel":
        store = ParameterStore()
        descriptor = DescriptorParams.create(store, spec.d, spec.tag_hidden, spec.encoding.dim, rng)
        gru = create_gru_stack(store, spec.got.n_got, spec.got.n_gfp, spec.d, rng)
        LOGGER.debug("created model with %d parameter tensors", len(store))
        return cls(store, spec, descriptor, gru)

    @classmethod
    def from_store(cls, store: ParameterStore, spec: ModelSpec) -> "BendingGraphModel":
        descriptor = DescriptorParams.from_store(store)
        if descriptor.d != spec.d:
            raise ValueError(f"checkpoint has d={descriptor.d}, configuration asks for d={spec.d}")
        return cls(store, spec, descriptor, gru_stack_from_store(store, spec.got.n_got, spec.got.n_gfp))

    def with_store(self, store: ParameterStore) -> "BendingGraphModel":
        """Same architecture bound to another store (e.g. a detached worker copy)."""

        return BendingGraphModel.from_store(store, self.spec)

    def describe(self, local_graphs: LocalGraphBatch) -> Tensor:
        if not self.spec.use_local_descriptor:
            return zero_descriptors(len(local_graphs), self.spec.d)
        return local_descriptors(local_graphs, self.descriptor)

    def shape_features(self, shape: PreparedShape, descriptors: Tensor) -> ShapeGraph:
        """The shape graph of ``shape`` carrying descriptors and node features."""

        graph = shape.shape_graph if self.spec.use_shape_graph else shape.shape_graph.without_edges()
        features = node_features(
            descriptors,
            graph.positions,
            self.descriptor,
            self.spec.encoding,
            use_encoding=self.spec.use_shape_graph,
        )
        return replace(graph, descriptors=descriptors, node_features=features)

    def forward(self, shape_a: PreparedShape, shape_b: PreparedShape) -> ForwardPass:
        descriptors_a = self.describe(shape_a.local_graphs)
        descriptors_b = self.describe(shape_b.local_graphs)
        graph_a = self.shape_features(shape_a, descriptors_a)
        graph_b = self.shape_features(shape_b, descriptors_b)
        result = got_forward(graph_a, graph_b, self.spec.got, self.gru)
        return ForwardPass(descriptors_a, descriptors_b, graph_a, graph_b, result)


__all__ = ["BendingGraphModel", "ForwardPass", "ModelSpec", "PreparedShape", "prepare_shape"]
