"""Training objectives: triplet descriptor loss, soft matching NLL, Laplacian regulariser."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from network.diffcore import (
    Tensor,
    absolute,
    add,
    as_tensor,
    exp,
    matmul,
    mul,
    relu,
    reshape,
    row_norm,
    spmm,
    sub,
    sum_,
)
from network.got import TransportPlan, row_normalized

LOGGER = logging.getLogger(__name__)
LOGGER.addHandler(logging.NullHandler())

Scalar = Union[Tensor, float]


def triplet_loss(anchor: Tensor, positive: Tensor, negative: Tensor, alpha: float) -> Tensor:
    """``max(sum_i ||a_i - p_i|| - ||a_i - n_i|| + alpha, 0)``; the clamp is on the batch sum."""

    anchor, positive, negative = as_tensor(anchor), as_tensor(positive), as_tensor(negative)
    if not anchor.shape == positive.shape == negative.shape:
        raise ValueError(
            f"triplet_loss: batch shapes {anchor.shape}, {positive.shape}, {negative.shape}"
        )
    margin = sub(row_norm(sub(anchor, positive)), row_norm(sub(anchor, negative)))
    return relu(add(sum_(margin), alpha))


@dataclass(frozen=True, slots=True)
class SoftWeightMatrix:
    weights: np.ndarray
    r_d: float

    @property
    def shape(self) -> tuple[int, ...]:
        return self.weights.shape

    @property
    def support(self) -> np.ndarray:
        return self.weights > 0.0


def soft_weight_matrix(bipartite: np.ndarray, r_d: float) -> SoftWeightMatrix:
    """``(r_d - M) / r_d`` inside the geodesic radius ``r_d``, zero outside."""

    if r_d <= 0:
        raise ValueError("r_d must be positive")
    bipartite = np.asarray(bipartite, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        weights = np.where(bipartite <= r_d, (r_d - bipartite) / r_d, 0.0)
    return SoftWeightMatrix(weights, float(r_d))


def matching_loss(plan: TransportPlan, weights: SoftWeightMatrix) -> Tensor:
    """``-sum W[i, l] * log P_hat[i, l]`` over the positive entries of ``W``."""

    if weights.shape != plan.shape:
        raise ValueError(f"matching_loss: plan {plan.shape} but weights {weights.shape}")
    masked = np.where(weights.support, weights.weights, 0.0)
    return mul(sum_(mul(Tensor(masked), row_normalized(plan))), -1.0)


def softpool_positions(plan: TransportPlan, positions_b: np.ndarray) -> Tensor:
    """Barycentres of the B seeds under the row-renormalised plan."""

    positions_b = np.asarray(positions_b, dtype=np.float64)
    if positions_b.shape != (plan.shape[1], 3):
        raise ValueError(f"softpool_positions: {positions_b.shape} positions for plan {plan.shape}")
    return matmul(exp(row_normalized(plan)), Tensor(positions_b))


def incidence_matrix(edges: np.ndarray, n_nodes: int) -> sp.csr_matrix:
    """Signed ``(E, N)`` incidence: +1 at the first endpoint, -1 at the second."""

    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= n_nodes):
        raise ValueError(f"edge endpoint out of range for {n_nodes} nodes")
    rows = np.repeat(np.arange(len(edges)), 2)
    data = np.tile([1.0, -1.0], len(edges))
    return sp.csr_matrix((data, (rows, edges.reshape(-1))), shape=(len(edges), n_nodes))


def laplace_operator(positions: Tensor, edges: np.ndarray) -> Tensor:
    """Sum of incident edge lengths per node, ``(N,)``."""

    positions = as_tensor(positions)
    n_nodes = positions.shape[0]
    incidence = incidence_matrix(edges, n_nodes)
    if incidence.shape[0] == 0:
        return Tensor(np.zeros(n_nodes))
    lengths = row_norm(spmm(incidence, positions))
    per_node = spmm(abs(incidence).T.tocsr(), reshape(lengths, (incidence.shape[0], 1)))
    return reshape(per_node, (n_nodes,))


def regularization_loss(predicted: Tensor, source: np.ndarray, edges: np.ndarray) -> Tensor:
    """``sum_i |Lap(predicted)_i - Lap(source)_i|`` over the shape-graph edges."""

    predicted = as_tensor(predicted)
    source = np.asarray(source, dtype=np.float64)
    if predicted.shape != source.shape:
        raise ValueError(f"regularization_loss: predicted {predicted.shape} vs source {source.shape}")
    target = laplace_operator(Tensor(source), edges).value
    return sum_(absolute(sub(laplace_operator(predicted, edges), target)))


@dataclass(frozen=True, slots=True)
class WeightStage:
    """Loss weights used up to and including ``until_epoch`` (``None`` means open-ended)."""

    until_epoch: Optional[int]
    gamma_d: float
    gamma_m: float
    gamma_r: float

    def __post_init__(self) -> None:
        if min(self.gamma_d, self.gamma_m, self.gamma_r) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True, slots=True)
class LossWeights:
    stages: tuple[WeightStage, ...]

    def __post_init__(self) -> None:
        if not self.stages:
            raise ValueError("a loss-weight schedule needs at least one stage")
        bounds = [stage.until_epoch for stage in self.stages[:-1]]
        if any(bound is None for bound in bounds) or bounds != sorted(bounds):
            raise ValueError("schedule stages must have increasing epoch bounds")

    def at(self, epoch: int) -> tuple[float, float, float]:
        """``(gamma_D, gamma_M, gamma_R)`` for a 1-based epoch; past the end the last stage holds."""

        for stage in self.stages:
            if stage.until_epoch is None or epoch <= stage.until_epoch:
                return stage.gamma_d, stage.gamma_m, stage.gamma_r
        last = self.stages[-1]
        return last.gamma_d, last.gamma_m, last.gamma_r


def default_loss_weights(switch_epoch: int = 30) -> LossWeights:
    return LossWeights(
        (
            WeightStage(switch_epoch, 1.0, 0.0, 1.0),
            WeightStage(None, 0.1, 1.0, 1.0),
        )
    )


def total_loss(
    loss_d: Scalar,
    loss_m: Scalar,
    loss_r: Scalar,
    weights: LossWeights,
    epoch: int,
) -> Tensor:
    gamma_d, gamma_m, gamma_r = weights.at(epoch)
    terms: Sequence[tuple[float, Scalar]] = ((gamma_d, loss_d), (gamma_m, loss_m), (gamma_r, loss_r))
    total: Tensor = Tensor(0.0)
    for gamma, term in terms:
        total = add(total, mul(as_tensor(term), gamma))
    return total


__all__ = [
    "LossWeights",
    "SoftWeightMatrix",
    "WeightStage",
    "default_loss_weights",
    "incidence_matrix",
    "laplace_operator",
    "matching_loss",
    "regularization_loss",
    "soft_weight_matrix",
    "softpool_positions",
    "total_loss",
    "triplet_loss",
]
