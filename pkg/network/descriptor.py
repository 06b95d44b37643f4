"""Hierarchical descriptors: TAG convolutions over local graphs and shape-node features.

Local graphs are processed in batches: the per-graph propagation operators are
stacked block-diagonally so that one sparse product serves every patch.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from graphs.hiergraph import LocalGraph
from network.diffcore import (
    Tensor,
    add,
    as_tensor,
    l2_normalize,
    matmul,
    relu,
    segment_index,
    segment_max,
    spmm,
)
from network.layers import Layer, init_mlp, mlp_forward, mlp_layers
from network.params import ParameterStore

LOGGER = logging.getLogger(__name__)
LOGGER.addHandler(logging.NullHandler())

TAG_HOPS = (1, 2, 3)


@dataclass(frozen=True, slots=True)
class EncodingConfig:
    sigma: float = 8.0
    m: int = 9

    def __post_init__(self) -> None:
        if self.sigma <= 1.0:
            raise ValueError("encoding sigma must exceed 1")
        if self.m < 2:
            raise ValueError("encoding needs m >= 2")

    @property
    def dim(self) -> int:
        return 6 * (self.m - 1)

    @property
    def frequencies(self) -> np.ndarray:
        return 2.0 * np.pi * self.sigma ** (np.arange(self.m - 1) / self.m)


def fourier_encode(v: np.ndarray, cfg: EncodingConfig) -> np.ndarray:
    """Log-linear Fourier features of 3-D positions.

    Layout per position: for axis x, y, z in turn, for each frequency ``j``
    the pair ``cos(f_j v_axis), sin(f_j v_axis)``. Accepts ``(3,)`` or ``(N, 3)``.
    """

    points = np.asarray(v, dtype=np.float64)
    single = points.ndim == 1
    points = points.reshape(-1, 3)
    phases = points[:, :, None] * cfg.frequencies[None, None, :]
    features = np.stack([np.cos(phases), np.sin(phases)], axis=-1).reshape(len(points), -1)
    return features[0] if single else features


def propagation_operators(local_graph: LocalGraph, K: int) -> list[np.ndarray]:
    """``D^-1/2 A^k D^-1/2`` for ``k = 0..K`` with ``A^0 = I``.

    ``A`` is the weighted edge adjacency (no self loops); the degree matrix is
    taken from ``A + I`` so every node has degree at least one.
    """

    adjacency = local_graph.adjacency()
    inv_sqrt = 1.0 / np.sqrt(1.0 + adjacency.sum(axis=1))
    scale = np.outer(inv_sqrt, inv_sqrt)
    operators = []
    power = np.eye(local_graph.n_nodes)
    for k in range(K + 1):
        if k:
            power = power @ adjacency
        operators.append(scale * power)
    return operators


class LocalGraphBatch:
    """Several local graphs stacked into one node table with block operators."""

    def __init__(self, graphs: Sequence[LocalGraph]) -> None:
        if not graphs:
            raise ValueError("a local graph batch needs at least one graph")
        self.graphs = list(graphs)
        sizes = [graph.n_nodes for graph in self.graphs]
        self.coords = np.concatenate([graph.coords for graph in self.graphs])
        owner = np.repeat(np.arange(len(sizes)), sizes)
        self.segments = segment_index(owner, len(sizes))
        self._operators: dict[int, list[sp.csr_matrix]] = {}

    def __len__(self) -> int:
        return len(self.graphs)

    @property
    def n_nodes(self) -> int:
        return len(self.coords)

    def operators(self, K: int) -> list[sp.csr_matrix]:
        if K not in self._operators:
            per_graph = [propagation_operators(graph, K) for graph in self.graphs]
            self._operators[K] = [
                sp.block_diag([ops[k] for ops in per_graph], format="csr") for k in range(K + 1)
            ]
        return self._operators[K]

    def rotated(self, rotation: np.ndarray) -> "LocalGraphBatch":
        """Same topology with every local frame rotated (operators are reused)."""

        rotated = LocalGraphBatch.__new__(LocalGraphBatch)
        rotated.graphs = [graph.with_coords(graph.coords @ rotation.T) for graph in self.graphs]
        rotated.coords = self.coords @ rotation.T
        rotated.segments = self.segments
        rotated._operators = self._operators
        return rotated


GraphInput = Union[LocalGraph, LocalGraphBatch, Sequence[LocalGraph]]


def as_batch(graphs: GraphInput) -> LocalGraphBatch:
    if isinstance(graphs, LocalGraphBatch):
        return graphs
    if isinstance(graphs, LocalGraph):
        return LocalGraphBatch([graphs])
    return LocalGraphBatch(graphs)


def tag_conv(features: Tensor, local_graph: GraphInput, K: int, theta: Sequence[Tensor]) -> Tensor:
    """``sum_k D^-1/2 A^k D^-1/2 X Theta_k`` (no bias, no activation)."""

    if len(theta) != K + 1:
        raise ValueError(f"tag_conv with K={K} needs {K + 1} weight matrices, got {len(theta)}")
    batch = as_batch(local_graph)
    features = as_tensor(features)
    if features.shape[0] != batch.n_nodes:
        raise ValueError(f"tag_conv: {features.shape[0]} feature rows for {batch.n_nodes} nodes")
    out = None
    for operator, weight in zip(batch.operators(K), theta):
        term = matmul(spmm(operator, features), weight)
        out = term if out is None else add(out, term)
    return out


@dataclass(frozen=True, slots=True)
class DescriptorParams:
    tag: tuple[tuple[Tensor, ...], ...]
    head: tuple[Layer, ...]
    mlp_e: tuple[Layer, ...]
    mlp_p: tuple[Layer, ...]
    d: int

    @classmethod
    def create(
        cls,
        store: ParameterStore,
        d: int,
        hidden: int,
        encoding_dim: int,
        rng: np.random.Generator,
    ) -> "DescriptorParams":
        widths = (3, hidden, d, d)
        tag = []
        for layer, K in enumerate(TAG_HOPS):
            tag.append(
                tuple(
                    store.add(f"descriptor.tag{layer}.theta{k}", (widths[layer], widths[layer + 1]), rng)
                    for k in range(K + 1)
                )
            )
        head = init_mlp(store, "descriptor.head", (d, d), rng)
        mlp_e = init_mlp(store, "descriptor.mlp_e", (encoding_dim, d, d), rng)
        mlp_p = init_mlp(store, "descriptor.mlp_p", (d, d, d), rng)
        return cls(tuple(tag), tuple(head), tuple(mlp_e), tuple(mlp_p), d)

    @classmethod
    def from_store(cls, store: ParameterStore) -> "DescriptorParams":
        tag = tuple(
            tuple(store[f"descriptor.tag{layer}.theta{k}"] for k in range(K + 1))
            for layer, K in enumerate(TAG_HOPS)
        )
        head = tuple(mlp_layers(store, "descriptor.head"))
        return cls(
            tag,
            head,
            tuple(mlp_layers(store, "descriptor.mlp_e")),
            tuple(mlp_layers(store, "descriptor.mlp_p")),
            head[-1][0].shape[1],
        )


def local_descriptors(graphs: GraphInput, params: DescriptorParams) -> Tensor:
    """Unit-norm descriptor per local graph, ``(G, d)``.

    TAG(K=1) -> ReLU -> TAG(K=2) -> ReLU -> TAG(K=3) -> max-pool per graph ->
    head MLP -> L2 normalisation. Node inputs are the local coordinates.
    """

    batch = as_batch(graphs)
    x = Tensor(batch.coords)
    for layer, K in enumerate(TAG_HOPS):
        x = tag_conv(x, batch, K, params.tag[layer])
        if layer < len(TAG_HOPS) - 1:
            x = relu(x)
    pooled = segment_max(x, batch.segments)
    return l2_normalize(mlp_forward(pooled, params.head))


def local_descriptor(local_graph: LocalGraph, params: DescriptorParams) -> Tensor:
    """Descriptor of a single local graph as a ``(1, d)`` row."""

    return local_descriptors(local_graph, params)


def node_features(
    descriptors: Tensor,
    positions: np.ndarray,
    params: DescriptorParams,
    cfg: EncodingConfig,
    use_encoding: bool = True,
) -> Tensor:
    """``f_i = MLP_p(D_i + MLP_e(gamma(v_i)))`` for every shape-graph node."""

    descriptors = as_tensor(descriptors)
    if descriptors.shape[-1] != params.d:
        raise ValueError(f"descriptor width {descriptors.shape[-1]} does not match d={params.d}")
    fused = descriptors
    if use_encoding:
        encoded = mlp_forward(Tensor(fourier_encode(np.asarray(positions).reshape(-1, 3), cfg)), params.mlp_e)
        if encoded.shape != descriptors.shape:
            raise ValueError(f"encoder output {encoded.shape} does not match descriptors {descriptors.shape}")
        fused = add(descriptors, encoded)
    return mlp_forward(fused, params.mlp_p)


def node_feature(
    descriptor: Tensor,
    position: np.ndarray,
    params: DescriptorParams,
    cfg: EncodingConfig,
) -> Tensor:
    """Single-node form of :func:`node_features`; ``descriptor`` is ``(1, d)``."""

    return node_features(descriptor, np.asarray(position).reshape(1, 3), params, cfg)


def zero_descriptors(n: int, d: int, name: Optional[str] = None) -> Tensor:
    return Tensor(np.zeros((n, d)), name=name)


__all__ = [
    "DescriptorParams",
    "EncodingConfig",
    "LocalGraphBatch",
    "TAG_HOPS",
    "fourier_encode",
    "local_descriptor",
    "local_descriptors",
    "node_feature",
    "node_features",
    "propagation_operators",
    "tag_conv",
    "zero_descriptors",
]
