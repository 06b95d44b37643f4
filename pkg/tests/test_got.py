from __future__ import annotations

import math

import numpy as np
import pytest

from graphs.hiergraph import ShapeGraph
from network.diffcore import Tensor, finite_difference_check, l2_normalize, mul, sum_
from network.got import (
    GOTConfig,
    MatchSet,
    TransportPlan,
    confidence_weights,
    create_gru_stack,
    extract_matches,
    gated_propagation,
    got_forward,
    gru_stack_from_store,
    mutual_count,
    score_matrix,
    sinkhorn,
)
from network.layers import GRUParams
from network.params import ParameterStore


def _shape(n: int, edges=(), features=None) -> ShapeGraph:
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    return ShapeGraph(
        seeds=np.arange(n),
        positions=np.zeros((n, 3)),
        edges=edges,
        weights=np.ones(len(edges)),
        radius=1.0,
        node_features=features,
    )


def _plan(log_p: np.ndarray) -> TransportPlan:
    return TransportPlan(Tensor(log_p), 0, True)


def _unit_rows(rng, n: int, d: int) -> np.ndarray:
    rows = rng.normal(size=(n, d))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def _reference_sinkhorn(scores: np.ndarray, iterations: int, tau: float) -> np.ndarray:
    n, m = scores.shape
    log_p = scores / tau
    for _ in range(iterations):
        for axis, size in ((1, n), (0, m)):
            peak = log_p.max(axis=axis, keepdims=True)
            log_p = log_p - (peak + np.log(np.exp(log_p - peak).sum(axis=axis, keepdims=True))) - math.log(size)
    return log_p


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _gru_reference(h, x, gru: GRUParams):
    z = _sigmoid(x @ gru.w_z.value + h @ gru.u_z.value + gru.b_z.value)
    r = _sigmoid(x @ gru.w_r.value + h @ gru.u_r.value + gru.b_r.value)
    candidate = np.tanh(x @ gru.w_h.value + (r * h) @ gru.u_h.value + gru.b_h.value)
    return (1.0 - z) * h + z * candidate


def _gru(dim: int, seed: int = 0) -> GRUParams:
    return GRUParams.create(ParameterStore(), "gru", dim, np.random.default_rng(seed))


def test_score_matrix_examples(rng):
    eye = np.eye(3)
    np.testing.assert_array_equal(score_matrix(Tensor(eye), Tensor(eye)).value, eye)
    same = np.tile(_unit_rows(rng, 1, 4), (3, 1))
    np.testing.assert_allclose(score_matrix(Tensor(same), Tensor(same)).value, 1.0)

    a, b = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    scores = score_matrix(Tensor(a), Tensor(b)).value
    for i in range(4):
        for k in range(4):
            assert scores[i, k] == pytest.approx(sum(a[i, c] * b[k, c] for c in range(3)), abs=1e-12)


def test_score_matrix_width_mismatch():
    with pytest.raises(ValueError):
        score_matrix(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4))))


def test_sinkhorn_zero_scores_are_uniform():
    plan = sinkhorn(Tensor(np.zeros((2, 2))), 5, 0.1)
    np.testing.assert_allclose(plan.probabilities(), 0.25, rtol=1e-12)
    assert plan.converged


def test_sinkhorn_matches_reference_on_diagonal_scores():
    scores = np.diag(np.full(4, 10.0))
    plan = sinkhorn(Tensor(scores), 100, 1.0)
    np.testing.assert_allclose(plan.log_p.value, _reference_sinkhorn(scores, 100, 1.0), atol=1e-12)
    np.testing.assert_array_equal(np.argmax(plan.log_p.value, axis=1), np.arange(4))
    assert np.diag(plan.probabilities()).sum() > 0.99


def test_sinkhorn_marginals(rng):
    scores = rng.uniform(-1.0, 1.0, size=(6, 6))
    plan = sinkhorn(Tensor(scores), 100, 1.0)
    probabilities = plan.probabilities()
    np.testing.assert_allclose(probabilities.sum(axis=1), 1 / 6, atol=1e-6)
    np.testing.assert_allclose(probabilities.sum(axis=0), 1 / 6, atol=1e-6)
    assert plan.converged
    assert plan.iterations == 100
    assert np.isfinite(plan.log_p.value).all()


@pytest.mark.parametrize("n", [4, 16, 64])
@pytest.mark.parametrize("tau", [0.05, 0.1, 1.0])
def test_sinkhorn_marginal_grid(n, tau):
    rng = np.random.default_rng([n, int(round(tau * 100))])
    for _ in range(100):
        plan = sinkhorn(Tensor(rng.uniform(-10.0, 10.0, size=(n, n))), 100, tau)
        np.testing.assert_allclose(plan.probabilities().sum(axis=0), 1 / n, atol=1e-12)
        assert np.isfinite(plan.log_p.value).all()
        assert plan.converged == (plan.marginal_error() < 1e-6)

        # a score range of at most 2 tau keeps the scaling a strict contraction
        easy = sinkhorn(Tensor(rng.uniform(-tau, tau, size=(n, n))), 100, tau)
        assert easy.converged
        assert easy.marginal_error() < 1e-6


def test_sinkhorn_rectangular_targets(rng):
    plan = sinkhorn(Tensor(rng.uniform(-1, 1, size=(3, 5))), 200, 1.0)
    probabilities = plan.probabilities()
    np.testing.assert_allclose(probabilities.sum(axis=1), 1 / 3, atol=1e-6)
    np.testing.assert_allclose(probabilities.sum(axis=0), 1 / 5, atol=1e-6)


def test_sinkhorn_tolerance_stops_early(rng):
    plan = sinkhorn(Tensor(rng.uniform(-1, 1, size=(5, 5))), 500, 1.0, tol=1e-8)
    assert plan.iterations < 500
    assert plan.marginal_error() < 1e-8


def test_sinkhorn_row_permutation_equivariance(rng):
    scores = rng.uniform(-1, 1, size=(5, 5))
    order = rng.permutation(5)
    plain = sinkhorn(Tensor(scores), 50, 0.5).log_p.value
    shuffled = sinkhorn(Tensor(scores[order]), 50, 0.5).log_p.value
    np.testing.assert_allclose(shuffled, plain[order], atol=1e-12)


def test_sinkhorn_shift_invariance(rng):
    scores = rng.uniform(-1, 1, size=(4, 4))
    plain = sinkhorn(Tensor(scores), 50, 0.5).log_p.value
    shifted = sinkhorn(Tensor(scores + 3.0), 50, 0.5).log_p.value
    np.testing.assert_allclose(shifted, plain, atol=1e-9)


def test_sinkhorn_recovers_planted_permutation(rng):
    order = rng.permutation(7)
    scores = rng.uniform(-0.2, 0.2, size=(7, 7))
    scores[np.arange(7), order] += 3.0
    plan = sinkhorn(Tensor(scores), 100, 0.1)
    np.testing.assert_array_equal(np.argmax(plan.log_p.value, axis=1), order)


def test_sinkhorn_rejects_bad_input():
    with pytest.raises(ValueError):
        sinkhorn(Tensor([[0.0, np.inf], [0.0, 0.0]]), 10, 0.1)
    with pytest.raises(ValueError):
        sinkhorn(Tensor(np.zeros((2, 2))), 0, 0.1)
    with pytest.raises(ValueError):
        sinkhorn(Tensor(np.zeros((2, 2))), 10, 0.0)


def test_confidence_of_uniform_plan():
    confidence = confidence_weights(_plan(np.full((4, 4), -math.log(16.0))))
    np.testing.assert_allclose(confidence.w_row.value, math.log(0.25))
    np.testing.assert_allclose(confidence.w_col.value, math.log(0.25))


def test_confidence_of_near_permutation_plan():
    plan = sinkhorn(Tensor(np.diag(np.full(3, 10.0))), 100, 1.0)
    confidence = confidence_weights(plan)
    assert (confidence.w_row.value <= 0).all()
    assert (confidence.w_row.value > -1e-3).all()
    assert (confidence.w_col.value > -1e-3).all()


def test_uniform_row_has_lowest_confidence():
    probabilities = np.full((4, 4), 0.01)
    np.fill_diagonal(probabilities, 0.97)
    probabilities[2] = 0.25
    confidence = confidence_weights(_plan(np.log(probabilities / 4)))
    w_row = confidence.w_row.value
    assert np.argmin(w_row) == 2
    assert w_row[2] == pytest.approx(math.log(0.25))
    assert (np.delete(w_row, 2) > w_row[2]).all()


def test_propagation_without_steps_is_identity(rng):
    hidden = Tensor(rng.normal(size=(3, 4)))
    out = gated_propagation(_shape(3, [[0, 1]]), hidden, Tensor(np.zeros(3)), 0, _gru(4))
    assert out is hidden


def test_propagation_on_edgeless_graph_uses_zero_message(rng):
    gru = _gru(3, seed=2)
    hidden = rng.normal(size=(4, 3))
    out = gated_propagation(_shape(4), Tensor(hidden), Tensor(rng.normal(size=4)), 2, gru)
    expected = hidden
    for _ in range(2):
        expected = _gru_reference(expected, np.zeros((4, 3)), gru)
    np.testing.assert_allclose(out.value, expected, rtol=1e-12, atol=1e-14)


def test_propagation_two_nodes_by_hand():
    store = ParameterStore()
    gru = GRUParams.create(store, "gru", 2, np.random.default_rng(0))
    for tensor in store.tensors():
        tensor.value[...] = 0.0
    gru.w_h.value[...] = np.eye(2)
    gru.b_z.value[...] = [[math.log(3.0), math.log(3.0)]]
    hidden = np.array([[1.0, -2.0], [0.5, 4.0]])
    conf = np.array([math.log(0.5), math.log(0.25)])

    out = gated_propagation(_shape(2, [[0, 1]]), Tensor(hidden), Tensor(conf), 1, gru).value
    # z = sigmoid(log 3) = 3/4, candidate = tanh(message)
    message = np.array([[0.25 * 0.5, 0.25 * 4.0], [0.5 * 1.0, 0.5 * -2.0]])
    expected = 0.25 * hidden + 0.75 * np.tanh(message)
    np.testing.assert_allclose(out, expected, rtol=1e-12)


def test_propagation_takes_elementwise_max_over_neighbours(rng):
    gru = _gru(2, seed=4)
    hidden = np.array([[0.0, 0.0], [1.0, -3.0], [-1.0, 2.0]])
    graph = _shape(3, [[0, 1], [0, 2]])
    out = gated_propagation(graph, Tensor(hidden), Tensor(np.zeros(3)), 1, gru).value
    message = np.array([[1.0, 2.0], [0.0, 0.0], [0.0, 0.0]])
    np.testing.assert_allclose(out, _gru_reference(hidden, message, gru), rtol=1e-12, atol=1e-14)


def test_propagation_checks_shapes(rng):
    with pytest.raises(ValueError):
        gated_propagation(_shape(3), Tensor(np.zeros((2, 4))), Tensor(np.zeros(3)), 1, _gru(4))
    with pytest.raises(ValueError):
        gated_propagation(_shape(3), Tensor(np.zeros((3, 4))), Tensor(np.zeros(2)), 1, _gru(4))


def test_extract_matches_identity_plan():
    plan = sinkhorn(Tensor(np.diag(np.full(4, 10.0))), 100, 1.0)
    for mode in ("row_argmax", "mutual"):
        matches = extract_matches(plan, mode)
        assert [(i, l) for i, l, _ in matches] == [(i, i) for i in range(4)]
        assert matches.is_injective
    assert mutual_count(plan) == 4


def test_extract_matches_uniform_tie_rule():
    plan = _plan(np.full((3, 3), -math.log(9.0)))
    rows = extract_matches(plan, "row_argmax")
    assert [(i, l) for i, l, _ in rows] == [(0, 0), (1, 0), (2, 0)]
    assert not rows.is_injective
    mutual = extract_matches(plan, "mutual")
    assert [(i, l) for i, l, _ in mutual] == [(0, 0)]
    assert mutual.pairs[0][2] == pytest.approx(math.log(1 / 3))


def test_mutual_matches_match_brute_force(rng):
    for _ in range(1000):
        n = int(rng.integers(2, 9))
        log_p = np.log(rng.uniform(0.01, 1.0, size=(n, n)))
        matches = extract_matches(_plan(log_p), "mutual")
        expected = []
        for i in range(n):
            l = max(range(n), key=lambda k: log_p[i, k])
            if max(range(n), key=lambda k: log_p[k, l]) == i:
                expected.append((i, l))
        assert [(i, l) for i, l, _ in matches] == expected
        assert matches.is_injective
        assert mutual_count(_plan(log_p)) == len(expected)


def test_match_set_file_round_trip(tmp_path, rng):
    matches = extract_matches(_plan(np.log(rng.uniform(0.01, 1.0, size=(4, 4)))), "row_argmax")
    path = matches.write(tmp_path / "out" / "matches.txt")
    assert path.read_text(encoding="utf-8").startswith("# N=4 mode=row_argmax\n")
    again = MatchSet.read(path)
    assert again == matches
    assert again.as_dict() == {i: l for i, l, _ in matches}


@pytest.mark.parametrize("text", ["0 1 -0.5\n", "# N=x mode=mutual\n", "# N=2 mode=greedy\n"])
def test_match_set_parse_errors(text):
    with pytest.raises(ValueError):
        MatchSet.parse(text)


def test_got_config_validation():
    with pytest.raises(ValueError):
        GOTConfig(n_got=-1)
    with pytest.raises(ValueError):
        GOTConfig(sinkhorn_iters=0)
    with pytest.raises(ValueError):
        GOTConfig(tau=0.0)


def test_got_without_iterations_is_plain_sinkhorn(rng):
    fa, fb = _unit_rows(rng, 5, 4), _unit_rows(rng, 5, 4)
    cfg = GOTConfig(n_got=0, sinkhorn_iters=40, tau=0.2)
    result = got_forward(_shape(5, features=Tensor(fa)), _shape(5, features=Tensor(fb)), cfg)
    expected = sinkhorn(score_matrix(Tensor(fa), Tensor(fb)), 40, 0.2)
    np.testing.assert_allclose(result.plan.log_p.value, expected.log_p.value, atol=1e-9)
    assert len(result.stage_plans) == 1
    plan, confidence, matches = result
    assert len(matches) == 5


def test_got_forward_matches_step_by_step_transcript(rng):
    store = ParameterStore()
    gru = create_gru_stack(store, 1, 2, 4, rng)
    edges_a = [[0, 1], [1, 2], [2, 3], [3, 4], [4, 5]]
    edges_b = [[0, 1], [1, 2], [0, 3], [3, 4], [4, 5], [1, 5]]
    fa, fb = Tensor(rng.normal(size=(6, 4))), Tensor(rng.normal(size=(6, 4)))
    shape_a, shape_b = _shape(6, edges_a, fa), _shape(6, edges_b, fb)
    cfg = GOTConfig(n_got=1, n_gfp=2, sinkhorn_iters=30, tau=0.3)
    result = got_forward(shape_a, shape_b, cfg, gru)

    first = sinkhorn(score_matrix(l2_normalize(fa), l2_normalize(fb)), 30, 0.3)
    confidence = confidence_weights(first)
    states_a = gated_propagation(shape_a, fa, confidence.w_row, 2, gru[0])
    states_b = gated_propagation(shape_b, fb, confidence.w_col, 2, gru[0])
    final = sinkhorn(score_matrix(l2_normalize(states_a), l2_normalize(states_b)), 30, 0.3)

    np.testing.assert_array_equal(result.stage_plans[0].log_p.value, first.log_p.value)
    np.testing.assert_array_equal(result.plan.log_p.value, final.log_p.value)
    np.testing.assert_array_equal(result.states_a.value, states_a.value)
    assert result.matches == extract_matches(final, "row_argmax")


def test_got_self_matching_is_identity(rng):
    store = ParameterStore()
    gru = create_gru_stack(store, 1, 2, 16, rng)
    features = Tensor(_unit_rows(rng, 8, 16))
    edges = [[0, 1], [1, 2], [2, 3], [3, 4], [4, 5], [5, 6], [6, 7], [0, 4]]
    shape = _shape(8, edges, features)
    result = got_forward(shape, _shape(8, edges, features), GOTConfig(tau=0.05), gru)
    assert [(i, l) for i, l, _ in result.matches] == [(i, i) for i in range(8)]


def test_got_gradients_match_finite_differences(rng):
    store = ParameterStore()
    gru = create_gru_stack(store, 1, 1, 6, rng)
    fa, fb = Tensor(rng.normal(size=(4, 6))), Tensor(rng.normal(size=(4, 6)))
    shape_a = _shape(4, [[0, 1], [1, 2], [2, 3]], fa)
    shape_b = _shape(4, [[0, 1], [0, 2], [2, 3]], fb)
    target = Tensor(rng.uniform(size=(4, 4)))
    cfg = GOTConfig(n_got=1, n_gfp=1, sinkhorn_iters=10, tau=0.5)

    def loss() -> Tensor:
        return sum_(mul(got_forward(shape_a, shape_b, cfg, gru).plan.log_p, target))

    assert finite_difference_check(loss, [fa, fb]) < 1e-4


def test_got_rejects_size_mismatch(rng):
    with pytest.raises(ValueError):
        got_forward(
            _shape(3, features=Tensor(np.ones((3, 2)))), _shape(4, features=Tensor(np.ones((4, 2)))), GOTConfig(n_got=0)
        )


def test_gru_stack_reloads_by_name(rng):
    store = ParameterStore()
    created = create_gru_stack(store, 2, 2, 3, rng)
    assert "got.1.gfp.0.w_z" in store
    again = gru_stack_from_store(store, 2, 2)
    assert again[1][1].u_h is created[1][1].u_h
