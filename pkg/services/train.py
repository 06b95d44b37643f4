"""Training orchestration: per-sample losses, gradient accumulation and the epoch loop."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from loguru import logger
from scipy.spatial.transform import Rotation

from graphs.hiergraph import (
    HardNegativeError,
    bipartite_geodesic_matrix,
    extract_local_graph,
    mine_hard_negative,
)
from meshes.geometry import hop_distances, normalize_to_unit_ball
from meshes.synthetic import ShapePairSample
from models.train_config import TrainConfig
from network.descriptor import LocalGraphBatch
from network.diffcore import Tensor
from network.losses import (
    SoftWeightMatrix,
    matching_loss,
    regularization_loss,
    soft_weight_matrix,
    softpool_positions,
    total_loss,
    triplet_loss,
)
from network.model import BendingGraphModel, PreparedShape, prepare_shape
from network.params import adam_step
from services.checkpoint_store import CheckpointStore, TrainLogRow


class NonFiniteLossError(RuntimeError):
    """A loss component became NaN or infinite; carries the diagnostic payload."""

    def __init__(self, sample: str, epoch: int, components: Dict[str, float]) -> None:
        self.sample = sample
        self.epoch = epoch
        self.components = components
        details = ", ".join(f"{key}={value!r}" for key, value in components.items())
        super().__init__(f"non-finite loss on sample {sample!r} in epoch {epoch}: {details}")

    def as_dict(self) -> Dict[str, object]:
        return {"sample": self.sample, "epoch": self.epoch, "components": self.components}


@dataclass(slots=True)
class PairState:
    """Parameter-independent data of one training pair, computed once."""

    name: str
    shape_a: PreparedShape
    shape_b: PreparedShape
    images: np.ndarray
    positives: LocalGraphBatch
    soft_weights: SoftWeightMatrix


@dataclass(slots=True)
class SampleLosses:
    loss_d: Tensor
    loss_m: Tensor
    loss_r: Tensor
    total: Tensor

    def components(self) -> Dict[str, float]:
        return {
            "L_D": float(self.loss_d.value),
            "L_M": float(self.loss_m.value),
            "L_R": float(self.loss_r.value),
            "total": float(self.total.value),
        }


@dataclass(slots=True)
class TrainResult:
    model: BendingGraphModel
    log: List[TrainLogRow] = field(default_factory=list)


def prepare_pair(sample: ShapePairSample, config: TrainConfig) -> PairState:
    mesh_a = normalize_to_unit_ball(sample.mesh_a)
    mesh_b = normalize_to_unit_ball(sample.mesh_b)
    shape_a = prepare_shape(mesh_a, config.n_seeds, config.d_cut, config.r, config.r_shape, config.d_cut_mode)
    shape_b = prepare_shape(mesh_b, config.n_seeds, config.d_cut, config.r, config.r_shape, config.d_cut_mode)
    images = sample.correspondence[shape_a.seeds]
    positives = LocalGraphBatch(
        [
            extract_local_graph(shape_b.graph, mesh_b.vertices, int(vertex), config.d_cut, config.r, config.d_cut_mode)
            for vertex in images
        ]
    )
    bipartite = bipartite_geodesic_matrix(sample.correspondence, shape_a.seeds, shape_b.seeds, shape_b.graph)
    logger.debug("Pair prepared", name=sample.name, seeds=config.n_seeds)
    return PairState(sample.name, shape_a, shape_b, images, positives, soft_weight_matrix(bipartite, config.r_d))


def sample_negatives(
    state: PairState,
    vertices_b: np.ndarray,
    config: TrainConfig,
    rng: np.random.Generator,
) -> LocalGraphBatch:
    """One hard negative local graph on B per positive, from the configured hop ring."""

    graph = state.shape_b.graph
    negatives = []
    for vertex in state.images:
        try:
            negative = mine_hard_negative(graph, int(vertex), config.negative_ring, rng)
        except HardNegativeError:
            hops = hop_distances(graph, int(vertex))
            eccentricity = int(hops[np.isfinite(hops)].max())
            if eccentricity < 1:
                raise
            negative = mine_hard_negative(graph, int(vertex), (1, eccentricity), rng)
        negatives.append(
            extract_local_graph(graph, vertices_b, negative, config.d_cut, config.r, config.d_cut_mode)
        )
    return LocalGraphBatch(negatives)


def sample_rng(config: TrainConfig, epoch: int, index: int) -> np.random.Generator:
    """Randomness of one sample in one epoch, independent of batching and workers."""

    return np.random.default_rng([config.seed, epoch, index])


def augmentation_rotations(config: TrainConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    if config.rotation_mode == "shared":
        rotation = Rotation.random(None, rng).as_matrix()
        return rotation, rotation
    rotation_a, rotation_b = Rotation.random(2, rng).as_matrix()
    return rotation_a, rotation_b


def sample_losses(
    model: BendingGraphModel,
    state: PairState,
    config: TrainConfig,
    epoch: int,
    rng: np.random.Generator,
) -> SampleLosses:
    shape_a, shape_b, positives = state.shape_a, state.shape_b, state.positives
    if config.augment_rotation:
        rotation_a, rotation_b = augmentation_rotations(config, rng)
        shape_a, shape_b = shape_a.rotated(rotation_a), shape_b.rotated(rotation_b)
        positives = positives.rotated(rotation_b)

    forward = model.forward(shape_a, shape_b)
    plan = forward.result.plan

    if config.use_local_descriptor:
        negatives = sample_negatives(state, shape_b.mesh.vertices, config, rng)
        loss_d = triplet_loss(
            forward.descriptors_a, model.describe(positives), model.describe(negatives), config.alpha
        )
    else:
        loss_d = Tensor(0.0)
    loss_m = matching_loss(plan, state.soft_weights)
    loss_r = regularization_loss(
        softpool_positions(plan, shape_b.positions), shape_a.positions, shape_a.shape_graph.edges
    )
    total = total_loss(loss_d, loss_m, loss_r, config.loss_weights(), epoch)
    return SampleLosses(loss_d, loss_m, loss_r, total)


def _sample_gradients(
    model: BendingGraphModel,
    state: PairState,
    config: TrainConfig,
    epoch: int,
    index: int,
):
    """Losses of one sample with gradients recorded on a detached parameter copy."""

    worker_model = model.with_store(model.store.copy_detached())
    losses = sample_losses(worker_model, state, config, epoch, sample_rng(config, epoch, index))
    components = losses.components()
    if not all(math.isfinite(value) for value in components.values()):
        raise NonFiniteLossError(state.name, epoch, components)
    losses.total.backward()
    return worker_model.store, components


def batch_gradients(
    model: BendingGraphModel,
    states: Sequence[PairState],
    indices: Sequence[int],
    config: TrainConfig,
    epoch: int,
) -> List[Dict[str, float]]:
    """Accumulate the gradients of ``indices`` into ``model.store`` in sample order."""

    def work(index: int):
        return _sample_gradients(model, states[index], config, epoch, index)

    if config.workers > 1 and len(indices) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            outcomes = list(pool.map(work, indices))
    else:
        outcomes = [work(index) for index in indices]

    components = []
    for store, losses in outcomes:
        model.store.accumulate_grads(store)
        components.append(losses)
    return components


def train(
    config: TrainConfig,
    dataset: Sequence[ShapePairSample],
    checkpoints: Optional[CheckpointStore] = None,
) -> TrainResult:
    """Adam training over ``dataset``; deterministic for a given config and seed."""

    if not dataset:
        raise ValueError("training needs at least one sample")
    model = BendingGraphModel.create(config.model_spec(), np.random.default_rng(config.seed))
    states = [prepare_pair(sample, config) for sample in dataset]
    weights = config.loss_weights()
    if checkpoints is not None:
        checkpoints.write_config(config)
        checkpoints.start_log()
    logger.info(
        "Training started",
        samples=len(states),
        epochs=config.epochs,
        parameters=len(model.store),
        seeds=config.n_seeds,
    )

    result = TrainResult(model)
    for epoch in range(1, config.epochs + 1):
        lr = config.learning_rate(epoch)
        gamma_d, gamma_m, gamma_r = weights.at(epoch)
        rows: List[TrainLogRow] = []
        for start in range(0, len(states), config.batch_size):
            indices = list(range(start, min(start + config.batch_size, len(states))))
            try:
                components = batch_gradients(model, states, indices, config, epoch)
            except NonFiniteLossError as exc:
                if checkpoints is not None:
                    dump = checkpoints.write_failure(exc.as_dict())
                    logger.error("Non-finite loss; diagnostic written", path=str(dump), sample=exc.sample)
                raise
            adam_step(model.store, lr)
            for losses in components:
                rows.append(
                    TrainLogRow(
                        epoch,
                        model.store.step,
                        losses["L_D"],
                        losses["L_M"],
                        losses["L_R"],
                        losses["total"],
                        gamma_d,
                        gamma_m,
                        gamma_r,
                        lr,
                    )
                )
        result.log.extend(rows)
        if checkpoints is not None:
            checkpoints.append_log(rows)
        mean_total = sum(row.total for row in rows) / len(rows)
        logger.info("Epoch {epoch} finished: total={mean_total:.6f} lr={lr:g}", epoch=epoch, mean_total=mean_total, lr=lr)
        if checkpoints is not None and config.checkpoint_every and epoch % config.checkpoint_every == 0:
            checkpoints.save(model.store, epoch)

    if checkpoints is not None:
        checkpoints.save(model.store)
    logger.info("Training finished after {steps} steps", steps=model.store.step, checksum=model.store.checksum())
    return result


def epoch_means(log: Sequence[TrainLogRow]) -> Dict[int, float]:
    """Mean total loss per epoch."""

    totals: Dict[int, List[float]] = {}
    for row in log:
        totals.setdefault(row.epoch, []).append(row.total)
    return {epoch: sum(values) / len(values) for epoch, values in sorted(totals.items())}


__all__ = [
    "NonFiniteLossError",
    "PairState",
    "SampleLosses",
    "TrainResult",
    "batch_gradients",
    "epoch_means",
    "prepare_pair",
    "sample_losses",
    "sample_negatives",
    "train",
]
