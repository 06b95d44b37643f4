"""Coarse geodesic error and bijectivity rate of predicted seed matches."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from loguru import logger

from meshes.geometry import geodesic_distances, normalize_to_unit_ball, surface_area
from meshes.synthetic import ShapePairSample
from models.report import EvalReport, PairReport
from models.train_config import TrainConfig
from network.got import TransportPlan, mutual_count
from network.model import BendingGraphModel, PreparedShape, prepare_shape


@dataclass(frozen=True, slots=True)
class PlanScore:
    error: float
    br: float
    mutual: int


def score_plan(
    plan: TransportPlan,
    shape_a: PreparedShape,
    shape_b: PreparedShape,
    correspondence: np.ndarray,
) -> PlanScore:
    """Error of the row-argmax seeds against the true images, and the mutual-match rate.

    The error is the mean geodesic distance on B divided by ``sqrt(area(B))``.
    """

    rows = np.argmax(plan.log_p.value, axis=1)
    predicted = shape_b.seeds[rows]
    truth = np.asarray(correspondence, dtype=np.int64)[shape_a.seeds]
    distances = geodesic_distances(shape_b.graph, truth)[np.arange(len(truth)), predicted]
    area = surface_area(shape_b.mesh)
    if area <= 0.0:
        raise ValueError("target mesh has zero surface area")
    mutual = mutual_count(plan)
    return PlanScore(
        error=float(distances.mean() / math.sqrt(area)),
        br=100.0 * mutual / plan.n,
        mutual=mutual,
    )


def evaluate_pair(model: BendingGraphModel, sample: ShapePairSample, config: TrainConfig) -> PairReport:
    shape_a = prepare_shape(
        normalize_to_unit_ball(sample.mesh_a), config.n_seeds, config.d_cut, config.r, config.r_shape, config.d_cut_mode
    )
    shape_b = prepare_shape(
        normalize_to_unit_ball(sample.mesh_b), config.n_seeds, config.d_cut, config.r, config.r_shape, config.d_cut_mode
    )
    result = model.forward(shape_a, shape_b).result
    final = score_plan(result.plan, shape_a, shape_b, sample.correspondence)
    first = score_plan(result.stage_plans[0], shape_a, shape_b, sample.correspondence)
    return PairReport(
        name=sample.name,
        n=result.plan.n,
        error=final.error,
        br=final.br,
        error_first=first.error,
        br_first=first.br,
        mutual=final.mutual,
    )


def evaluate(
    model: BendingGraphModel,
    pairs: Sequence[ShapePairSample],
    config: TrainConfig,
) -> EvalReport:
    """Match every pair independently; ``config.workers`` threads share the read-only parameters."""

    if config.workers > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            reports = list(pool.map(lambda sample: evaluate_pair(model, sample, config), pairs))
    else:
        reports = [evaluate_pair(model, sample, config) for sample in pairs]
    report = EvalReport(pairs=reports)
    logger.info("Evaluation finished: error={error:.6f} br={br:.2f}", pairs=len(reports), error=report.error, br=report.br)
    return report


__all__ = ["PlanScore", "evaluate", "evaluate_pair", "score_plan"]
