"""Gated optimal transport between two shape graphs.

One GOT iteration scores the current node states, runs a log-domain Sinkhorn,
reads per-node confidences off the plan and lets every shape graph propagate
its states through confidence-scaled GRU updates. A final Sinkhorn on the
propagated states gives the returned plan.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Literal, Optional, Sequence, Union

import numpy as np

from graphs.hiergraph import ShapeGraph
from network.diffcore import (
    Tensor,
    as_tensor,
    exp,
    gather_rows,
    l2_normalize,
    logsumexp,
    matmul,
    max_,
    mul,
    reshape,
    segment_index,
    segment_max,
    sub,
    transpose,
)
from network.layers import GRUParams, gru_cell
from network.params import ParameterStore

LOGGER = logging.getLogger(__name__)
LOGGER.addHandler(logging.NullHandler())

MatchMode = Literal["row_argmax", "mutual"]

MARGINAL_TOLERANCE = 1e-6


@dataclass(frozen=True, slots=True)
class TransportPlan:
    """Log-probabilities of a balanced plan with uniform marginals."""

    log_p: Tensor
    iterations: int
    converged: bool

    @property
    def shape(self) -> tuple[int, int]:
        return self.log_p.shape

    @property
    def n(self) -> int:
        return self.log_p.shape[0]

    def probabilities(self) -> np.ndarray:
        return np.exp(self.log_p.value)

    def marginal_error(self) -> float:
        """Largest deviation of any row or column sum from its uniform target."""

        return _marginal_error(self.log_p.value)


@dataclass(frozen=True, slots=True)
class NodeConfidence:
    """Log-space confidences; ``w_row`` for shape A nodes, ``w_col`` for shape B."""

    w_row: Tensor
    w_col: Tensor


@dataclass(frozen=True, slots=True)
class MatchSet:
    pairs: tuple[tuple[int, int, float], ...]
    mode: MatchMode
    n: int

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self) -> Iterator[tuple[int, int, float]]:
        return iter(self.pairs)

    def as_dict(self) -> dict[int, int]:
        return {i: l for i, l, _ in self.pairs}

    @property
    def is_injective(self) -> bool:
        sources = [i for i, _, _ in self.pairs]
        targets = [l for _, l, _ in self.pairs]
        return len(set(sources)) == len(sources) and len(set(targets)) == len(targets)

    def format(self) -> str:
        lines = [f"# N={self.n} mode={self.mode}"]
        lines.extend(f"{i} {l} {confidence!r}" for i, l, confidence in self.pairs)
        return "\n".join(lines) + "\n"

    def write(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.format(), encoding="utf-8")
        return path

    @classmethod
    def parse(cls, text: str) -> "MatchSet":
        lines = [line for line in text.splitlines() if line.strip()]
        if not lines or not lines[0].startswith("#"):
            raise ValueError("match file lacks the '# N=<n> mode=<mode>' header")
        header = dict(token.split("=", 1) for token in lines[0][1:].split())
        try:
            n, mode = int(header["N"]), header["mode"]
        except (KeyError, ValueError):
            raise ValueError(f"malformed match header: {lines[0]!r}") from None
        if mode not in ("row_argmax", "mutual"):
            raise ValueError(f"unknown match mode {mode!r}")
        pairs = []
        for line in lines[1:]:
            i, l, confidence = line.split()
            pairs.append((int(i), int(l), float(confidence)))
        return cls(tuple(pairs), mode, n)

    @classmethod
    def read(cls, path: Path) -> "MatchSet":
        return cls.parse(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True, slots=True)
class GOTConfig:
    n_got: int = 1
    n_gfp: int = 2
    sinkhorn_iters: int = 100
    tau: float = 0.1
    match_mode: MatchMode = "row_argmax"

    def __post_init__(self) -> None:
        if self.n_got < 0 or self.n_gfp < 0:
            raise ValueError("n_got and n_gfp must be non-negative")
        if self.sinkhorn_iters < 1:
            raise ValueError("sinkhorn needs at least one iteration")
        if self.tau <= 0:
            raise ValueError("temperature tau must be positive")


@dataclass(slots=True)
class GOTResult:
    plan: TransportPlan
    confidence: NodeConfidence
    matches: MatchSet
    stage_plans: list[TransportPlan] = field(default_factory=list)
    states_a: Optional[Tensor] = None
    states_b: Optional[Tensor] = None

    def __iter__(self):
        return iter((self.plan, self.confidence, self.matches))


def _marginal_error(log_p: np.ndarray) -> float:
    probabilities = np.exp(log_p)
    n, m = probabilities.shape
    rows = np.abs(probabilities.sum(axis=1) - 1.0 / n).max()
    cols = np.abs(probabilities.sum(axis=0) - 1.0 / m).max()
    return float(max(rows, cols))


def score_matrix(features_a: Tensor, features_b: Tensor) -> Tensor:
    """Inner products ``C[i, k] = <f_i^A, f_k^B>``."""

    features_a, features_b = as_tensor(features_a), as_tensor(features_b)
    if features_a.ndim != 2 or features_b.ndim != 2 or features_a.shape[1] != features_b.shape[1]:
        raise ValueError(f"score_matrix: feature shapes {features_a.shape} and {features_b.shape}")
    return matmul(features_a, transpose(features_b))


def sinkhorn(
    scores: Tensor,
    iterations: int,
    tau: float,
    tol: Optional[float] = None,
) -> TransportPlan:
    """Alternate row and column normalisation of ``scores / tau`` in log space.

    Rows are driven to ``1/N`` and columns to ``1/M``; each iteration ends on the
    column step. With ``tol`` set the loop stops once every row sum is within
    ``tol`` of its target.
    """

    scores = as_tensor(scores)
    if iterations < 1:
        raise ValueError("sinkhorn needs at least one iteration")
    if tau <= 0:
        raise ValueError("temperature tau must be positive")
    if scores.ndim != 2 or 0 in scores.shape:
        raise ValueError(f"sinkhorn: expected a non-empty matrix, got {scores.shape}")
    if not np.all(np.isfinite(scores.value)):
        raise ValueError("sinkhorn: score matrix has non-finite entries")

    n, m = scores.shape
    log_row, log_col = -math.log(n), -math.log(m)
    log_p = scores / tau
    used = 0
    for used in range(1, iterations + 1):
        log_p = sub(log_p, logsumexp(log_p, axis=1)) + log_row
        log_p = sub(log_p, logsumexp(log_p, axis=0)) + log_col
        if tol is not None and _marginal_error(log_p.value) < tol:
            break
    error = _marginal_error(log_p.value)
    converged = error < (MARGINAL_TOLERANCE if tol is None else tol)
    if not converged:
        LOGGER.debug("sinkhorn stopped after %d iterations, marginal error %.3g", used, error)
    return TransportPlan(log_p, used, converged)


def row_normalized(plan: TransportPlan) -> Tensor:
    """``log P_hat`` with every row summing to one."""

    return sub(plan.log_p, logsumexp(plan.log_p, axis=1))


def column_normalized(plan: TransportPlan) -> Tensor:
    return sub(plan.log_p, logsumexp(plan.log_p, axis=0))


def confidence_weights(plan: TransportPlan) -> NodeConfidence:
    """Largest renormalised log-probability per row (shape A) and per column (shape B)."""

    return NodeConfidence(
        w_row=max_(row_normalized(plan), axis=1),
        w_col=max_(column_normalized(plan), axis=0),
    )


def _as_steps(gru: Union[GRUParams, Sequence[GRUParams]], steps: int) -> list[GRUParams]:
    if isinstance(gru, GRUParams):
        return [gru] * steps
    gru = list(gru)
    if len(gru) < steps:
        raise ValueError(f"{steps} propagation steps need {steps} GRU parameter sets, got {len(gru)}")
    return gru[:steps]


def gated_propagation(
    graph: ShapeGraph,
    hidden: Tensor,
    conf: Tensor,
    steps: int,
    gru: Union[GRUParams, Sequence[GRUParams]],
) -> Tensor:
    """``steps`` synchronous GRU updates driven by confidence-scaled max messages.

    Node ``i`` receives the element-wise max over neighbours ``l`` of
    ``exp(conf_l) * h_l``; isolated nodes receive a zero message.
    """

    hidden, conf = as_tensor(hidden), as_tensor(conf)
    if hidden.ndim != 2 or hidden.shape[0] != graph.n_nodes:
        raise ValueError(f"gated_propagation: states {hidden.shape} for {graph.n_nodes} nodes")
    if conf.shape != (graph.n_nodes,):
        raise ValueError(f"gated_propagation: confidences {conf.shape} for {graph.n_nodes} nodes")
    if steps < 0:
        raise ValueError("propagation steps must be non-negative")
    cells = _as_steps(gru, steps)

    src, dst = graph.directed_edges()
    inbox = segment_index(dst, graph.n_nodes)
    if len(src):
        scale = reshape(exp(gather_rows(conf, src)), (len(src), 1))
    for cell in cells:
        if len(src):
            message = segment_max(mul(gather_rows(hidden, src), scale), inbox, graph.n_nodes)
        else:
            message = Tensor(np.zeros(hidden.shape))
        hidden = gru_cell(hidden, message, cell)
    return hidden


def extract_matches(plan: TransportPlan, mode: MatchMode = "row_argmax") -> MatchSet:
    """Row-argmax pairs, optionally restricted to mutual row/column argmaxes.

    Ties resolve to the lowest index. The confidence of pair ``(i, l)`` is the
    row-renormalised log-probability of that entry.
    """

    log_p = plan.log_p.value
    renormalized = log_p - np.logaddexp.reduce(log_p, axis=1, keepdims=True)
    rows = np.argmax(log_p, axis=1)
    if mode == "row_argmax":
        keep = np.ones(len(rows), dtype=bool)
    elif mode == "mutual":
        cols = np.argmax(log_p, axis=0)
        keep = cols[rows] == np.arange(len(rows))
    else:
        raise ValueError(f"unknown match mode {mode!r}")
    pairs = tuple(
        (int(i), int(rows[i]), float(renormalized[i, rows[i]])) for i in np.flatnonzero(keep)
    )
    return MatchSet(pairs, mode, plan.n)


def mutual_count(plan: TransportPlan) -> int:
    return len(extract_matches(plan, "mutual"))


def create_gru_stack(
    store: ParameterStore,
    n_got: int,
    n_gfp: int,
    dim: int,
    rng: np.random.Generator,
) -> list[list[GRUParams]]:
    """One GRU per (GOT iteration, propagation step), shared by both shapes."""

    return [
        [GRUParams.create(store, f"got.{g}.gfp.{t}", dim, rng) for t in range(n_gfp)]
        for g in range(n_got)
    ]


def gru_stack_from_store(store: ParameterStore, n_got: int, n_gfp: int) -> list[list[GRUParams]]:
    return [
        [GRUParams.from_store(store, f"got.{g}.gfp.{t}") for t in range(n_gfp)] for g in range(n_got)
    ]


def _features(shape: ShapeGraph, label: str) -> Tensor:
    if shape.node_features is None:
        raise ValueError(f"shape {label} has no node features")
    return as_tensor(shape.node_features)


def got_forward(
    shape_a: ShapeGraph,
    shape_b: ShapeGraph,
    cfg: GOTConfig,
    gru: Sequence[Sequence[GRUParams]] = (),
) -> GOTResult:
    """Iterated GOT between two shape graphs carrying ``node_features``.

    ``gru[g][t]`` drives propagation step ``t`` of GOT iteration ``g``. States
    are L2-normalised before each score matrix.
    """

    if shape_a.n_nodes != shape_b.n_nodes:
        raise ValueError(f"got_forward: {shape_a.n_nodes} nodes on A but {shape_b.n_nodes} on B")
    states_a, states_b = _features(shape_a, "A"), _features(shape_b, "B")
    if states_a.shape[1] != states_b.shape[1]:
        raise ValueError(f"got_forward: feature widths {states_a.shape[1]} and {states_b.shape[1]}")
    if len(gru) < cfg.n_got:
        raise ValueError(f"{cfg.n_got} GOT iterations need {cfg.n_got} GRU stacks, got {len(gru)}")

    stage_plans = []
    for g in range(cfg.n_got):
        plan = sinkhorn(
            score_matrix(l2_normalize(states_a), l2_normalize(states_b)), cfg.sinkhorn_iters, cfg.tau
        )
        stage_plans.append(plan)
        confidence = confidence_weights(plan)
        states_a = gated_propagation(shape_a, states_a, confidence.w_row, cfg.n_gfp, gru[g])
        states_b = gated_propagation(shape_b, states_b, confidence.w_col, cfg.n_gfp, gru[g])

    plan = sinkhorn(
        score_matrix(l2_normalize(states_a), l2_normalize(states_b)), cfg.sinkhorn_iters, cfg.tau
    )
    stage_plans.append(plan)
    confidence = confidence_weights(plan)
    matches = extract_matches(plan, cfg.match_mode)
    LOGGER.debug(
        "got_forward: N=%d, %d stages, %d matches (%s)", shape_a.n_nodes, len(stage_plans), len(matches), cfg.match_mode
    )
    return GOTResult(plan, confidence, matches, stage_plans, states_a, states_b)


__all__ = [
    "GOTConfig",
    "GOTResult",
    "MatchMode",
    "MatchSet",
    "NodeConfidence",
    "TransportPlan",
    "column_normalized",
    "confidence_weights",
    "create_gru_stack",
    "extract_matches",
    "gated_propagation",
    "got_forward",
    "gru_stack_from_store",
    "mutual_count",
    "row_normalized",
    "score_matrix",
    "sinkhorn",
]
