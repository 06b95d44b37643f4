from __future__ import annotations

import numpy as np
import pytest

from graphs.hiergraph import LocalGraph, extract_local_graph
from meshes.geometry import build_mesh_graph
from network.diffcore import Tensor, finite_difference_check, mul, sum_
from network.descriptor import (
    DescriptorParams,
    EncodingConfig,
    LocalGraphBatch,
    fourier_encode,
    local_descriptor,
    local_descriptors,
    node_feature,
    node_features,
    propagation_operators,
    tag_conv,
)
from network.params import ParameterStore


def _graph(coords, edges=(), weights=()) -> LocalGraph:
    coords = np.asarray(coords, dtype=np.float64)
    return LocalGraph(
        seed=0,
        vertex_ids=np.arange(len(coords)),
        coords=coords,
        edges=np.asarray(edges, dtype=np.int64).reshape(-1, 2),
        weights=np.asarray(weights, dtype=np.float64),
        radius=10.0,
    )


def _params(d=8, hidden=6, cfg=EncodingConfig(sigma=2.0, m=3), seed=0) -> tuple[ParameterStore, DescriptorParams]:
    store = ParameterStore()
    params = DescriptorParams.create(store, d, hidden, cfg.dim, np.random.default_rng(seed))
    return store, params


def _permuted(graph: LocalGraph, order: np.ndarray) -> LocalGraph:
    position = np.argsort(order)
    return LocalGraph(
        graph.seed,
        graph.vertex_ids[order],
        graph.coords[order],
        position[graph.edges],
        graph.weights,
        graph.radius,
    )


def test_encoding_config_validation():
    with pytest.raises(ValueError):
        EncodingConfig(sigma=1.0)
    with pytest.raises(ValueError):
        EncodingConfig(m=1)
    assert EncodingConfig().dim == 48


def test_fourier_encode_origin():
    out = fourier_encode(np.zeros(3), EncodingConfig())
    assert out.shape == (48,)
    np.testing.assert_array_equal(out[0::2], 1.0)
    np.testing.assert_array_equal(out[1::2], 0.0)


def test_fourier_encode_parity(rng):
    v = rng.normal(size=3)
    cfg = EncodingConfig()
    plus, minus = fourier_encode(v, cfg), fourier_encode(-v, cfg)
    np.testing.assert_allclose(minus[0::2], plus[0::2], atol=1e-15)
    np.testing.assert_allclose(minus[1::2], -plus[1::2], atol=1e-15)


def test_fourier_encode_scalar_oracle():
    cfg = EncodingConfig(sigma=2.0, m=3)
    out = fourier_encode(np.array([0.25, 0.0, 0.0]), cfg)
    expected_x = []
    for j in (0, 1):
        phase = 2 * np.pi * 2.0 ** (j / 3) * 0.25
        expected_x += [np.cos(phase), np.sin(phase)]
    np.testing.assert_allclose(out[:4], expected_x, atol=1e-15)
    np.testing.assert_array_equal(out[4:], [1.0, 0.0, 1.0, 0.0] * 2)


def test_fourier_encode_batch_and_range(rng):
    points = rng.uniform(-1, 1, size=(10, 3))
    cfg = EncodingConfig()
    batch = fourier_encode(points, cfg)
    assert batch.shape == (10, cfg.dim)
    np.testing.assert_allclose(batch[3], fourier_encode(points[3], cfg), atol=1e-15)
    assert np.abs(batch).max() <= 1.0


def test_tag_conv_identity_hop():
    graph = _graph([[0.3, -0.2, 0.5]])
    x = Tensor(graph.coords)
    out = tag_conv(x, graph, 0, [Tensor(np.eye(3))])
    np.testing.assert_array_equal(out.value, graph.coords)


def test_tag_conv_edgeless_graph_keeps_only_first_hop(rng):
    graph = _graph(rng.normal(size=(4, 3)))
    theta = [Tensor(rng.normal(size=(3, 5))) for _ in range(3)]
    out = tag_conv(Tensor(graph.coords), graph, 2, theta)
    np.testing.assert_allclose(out.value, graph.coords @ theta[0].value, rtol=1e-14, atol=1e-15)


def test_tag_conv_matches_dense_oracle(rng):
    graph = _graph(rng.normal(size=(3, 3)), edges=[[0, 1], [1, 2]], weights=[0.5, 2.0])
    theta = [Tensor(rng.normal(size=(3, 4))) for _ in range(3)]
    x = rng.normal(size=(3, 3))

    adjacency = np.array([[0.0, 0.5, 0.0], [0.5, 0.0, 2.0], [0.0, 2.0, 0.0]])
    degree = np.diag(1.0 + adjacency.sum(axis=1))
    inv_sqrt = np.linalg.inv(np.sqrt(degree))
    expected = sum(
        inv_sqrt @ np.linalg.matrix_power(adjacency, k) @ inv_sqrt @ x @ theta[k].value for k in range(3)
    )
    out = tag_conv(Tensor(x), graph, 2, theta)
    np.testing.assert_allclose(out.value, expected, rtol=1e-12, atol=1e-12)


def test_tag_conv_is_linear(rng):
    graph = _graph(rng.normal(size=(5, 3)), edges=[[0, 1], [1, 2], [2, 3], [0, 4]], weights=[1.0, 0.4, 0.7, 0.2])
    theta = [Tensor(rng.normal(size=(3, 2))) for _ in range(2)]
    x, y = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    combined = tag_conv(Tensor(2.0 * x - 0.5 * y), graph, 1, theta).value
    separate = 2.0 * tag_conv(Tensor(x), graph, 1, theta).value - 0.5 * tag_conv(Tensor(y), graph, 1, theta).value
    np.testing.assert_allclose(combined, separate, atol=1e-12)


def test_tag_conv_weight_count_is_checked(rng):
    graph = _graph(rng.normal(size=(2, 3)))
    with pytest.raises(ValueError):
        tag_conv(Tensor(graph.coords), graph, 2, [Tensor(np.eye(3))])


def test_batch_operators_are_block_diagonal(rng):
    first = _graph(rng.normal(size=(3, 3)), edges=[[0, 1]], weights=[0.3])
    second = _graph(rng.normal(size=(2, 3)), edges=[[0, 1]], weights=[0.8])
    batch = LocalGraphBatch([first, second])
    stacked = batch.operators(2)[2].toarray()
    np.testing.assert_allclose(stacked[:3, :3], propagation_operators(first, 2)[2])
    np.testing.assert_allclose(stacked[3:, 3:], propagation_operators(second, 2)[2])
    np.testing.assert_array_equal(stacked[:3, 3:], 0.0)
    assert batch.operators(2) is batch.operators(2)


def test_descriptors_are_unit_norm(cylinder):
    _, params = _params()
    graph = build_mesh_graph(cylinder)
    graphs = [extract_local_graph(graph, cylinder.vertices, seed, 2, 0.3) for seed in (0, 100, 300)]
    out = local_descriptors(graphs, params)
    assert out.shape == (3, 8)
    np.testing.assert_allclose(np.linalg.norm(out.value, axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(local_descriptor(graphs[1], params).value, out.value[1:2], atol=1e-12)


def test_descriptor_ignores_node_order(cylinder, rng):
    _, params = _params()
    graph = extract_local_graph(build_mesh_graph(cylinder), cylinder.vertices, 50, 2, 0.3)
    order = np.concatenate([[0], 1 + rng.permutation(graph.n_nodes - 1)])
    shuffled = _permuted(graph, order)
    np.testing.assert_allclose(
        local_descriptor(shuffled, params).value, local_descriptor(graph, params).value, atol=1e-12
    )


def test_descriptor_ignores_translation(cylinder, rng):
    _, params = _params()
    graph = build_mesh_graph(cylinder)
    seeds = rng.choice(cylinder.n_vertices, size=50, replace=False)
    for seed in seeds:
        moved = cylinder.translated(rng.uniform(-5.0, 5.0, size=3))
        first = local_descriptor(extract_local_graph(graph, cylinder.vertices, int(seed), 2, 0.3), params)
        second = local_descriptor(extract_local_graph(graph, moved.vertices, int(seed), 2, 0.3), params)
        np.testing.assert_allclose(first.value, second.value, atol=1e-9)


def test_params_reload_from_store():
    store, params = _params()
    again = DescriptorParams.from_store(store)
    assert again.d == params.d
    assert again.tag[2][3] is params.tag[2][3]
    assert [len(layer) for layer in again.tag] == [2, 3, 4]
    assert store["descriptor.tag0.theta0"].shape == (3, 6)
    assert store["descriptor.tag2.theta3"].shape == (8, 8)


def test_node_feature_reduces_to_descriptor(rng):
    cfg = EncodingConfig(sigma=2.0, m=3)
    _, params = _params(cfg=cfg)
    for weight, bias in params.mlp_e:
        weight.value[...] = 0.0
        bias.value[...] = 0.0
    for weight, bias in params.mlp_p:
        weight.value[...] = np.eye(8)
        bias.value[...] = 0.0
    descriptor = np.abs(rng.normal(size=(1, 8)))
    out = node_feature(Tensor(descriptor), rng.normal(size=3), params, cfg)
    np.testing.assert_allclose(out.value, descriptor, rtol=1e-15)


def test_node_feature_zero_descriptor_is_encoder_path(rng):
    cfg = EncodingConfig(sigma=2.0, m=3)
    _, params = _params(cfg=cfg)
    position = rng.normal(size=3)
    out = node_feature(Tensor(np.zeros((1, 8))), position, params, cfg)

    def dense(x, layers):
        for i, (weight, bias) in enumerate(layers):
            x = x @ weight.value + bias.value
            if i < len(layers) - 1:
                x = np.maximum(x, 0.0)
        return x

    expected = dense(dense(fourier_encode(position, cfg)[None], params.mlp_e), params.mlp_p)
    np.testing.assert_allclose(out.value, expected, rtol=1e-12, atol=1e-13)


def test_node_features_composition_and_gradients(rng):
    cfg = EncodingConfig(sigma=2.0, m=3)
    store, params = _params(cfg=cfg, seed=3)
    for _, bias in (*params.mlp_e, *params.mlp_p):
        bias.value[...] = rng.normal(size=bias.shape) * 0.1
    descriptors = Tensor(rng.normal(size=(4, 8)))
    positions = rng.uniform(-1, 1, size=(4, 3))

    encoded = fourier_encode(positions, cfg)
    (w0, b0), (w1, b1) = params.mlp_e
    (p0, c0), (p1, c1) = params.mlp_p
    e = np.maximum(encoded @ w0.value + b0.value, 0.0) @ w1.value + b1.value
    expected = np.maximum((descriptors.value + e) @ p0.value + c0.value, 0.0) @ p1.value + c1.value
    out = node_features(descriptors, positions, params, cfg)
    np.testing.assert_allclose(out.value, expected, rtol=1e-12, atol=1e-14)

    target = Tensor(rng.normal(size=(4, 8)))
    check = [descriptors, w1, p0, c1]
    error = finite_difference_check(lambda: sum_(mul(node_features(descriptors, positions, params, cfg), target)), check)
    assert error < 1e-5


def test_node_features_width_mismatch():
    cfg = EncodingConfig(sigma=2.0, m=3)
    _, params = _params(cfg=cfg)
    with pytest.raises(ValueError):
        node_features(Tensor(np.zeros((2, 5))), np.zeros((2, 3)), params, cfg)


def test_tag_conv_gradients_match_finite_differences(rng):
    graph = _graph(rng.normal(size=(5, 3)), [[0, 1], [1, 2], [2, 3], [3, 4], [0, 3]], [0.5, 1.0, 0.7, 0.2, 1.3])
    features = Tensor(rng.normal(size=(5, 3)))
    theta = [Tensor(rng.normal(size=(3, 2))) for _ in range(3)]
    target = Tensor(rng.normal(size=(5, 2)))
    error = finite_difference_check(lambda: sum_(mul(tag_conv(features, graph, 2, theta), target)), [features, *theta])
    assert error < 1e-7


def test_local_descriptor_gradients_match_finite_differences(rng):
    _, params = _params(d=4, hidden=4, seed=3)
    graphs = [
        _graph(rng.normal(scale=0.3, size=(5, 3)), [[0, 1], [0, 2], [1, 3], [2, 4]], [0.3, 0.2, 0.4, 0.25]),
        _graph(rng.normal(scale=0.3, size=(4, 3)), [[0, 1], [1, 2], [2, 3], [3, 0]], [0.1, 0.3, 0.2, 0.4]),
    ]
    batch = LocalGraphBatch(graphs)
    target = Tensor(rng.normal(size=(2, 4)))
    weights = [theta for layer in params.tag for theta in layer]
    weights += [tensor for layer in params.head for tensor in layer]
    error = finite_difference_check(lambda: sum_(mul(local_descriptors(batch, params), target)), weights, h=1e-7)
    assert error < 1e-4
