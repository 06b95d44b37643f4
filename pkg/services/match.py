"""Match two mesh files with a trained checkpoint and export the result."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

from loguru import logger

from graphs.hiergraph import write_shape_graph
from meshes.geometry import TriangleMesh, normalize_to_unit_ball
from meshes.io import read_mesh
from models.train_config import TrainConfig
from network.got import GOTResult
from network.model import BendingGraphModel, PreparedShape, prepare_shape
from network.params import ParameterStore
from services.checkpoint_store import config_for_checkpoint, resolve_checkpoint


@dataclass(slots=True)
class MatchOutcome:
    result: GOTResult
    shape_a: PreparedShape
    shape_b: PreparedShape
    written: List[Path]


def load_model(checkpoint: Path, config: TrainConfig) -> tuple[BendingGraphModel, TrainConfig]:
    """Model from a checkpoint file or run directory, with the config it was trained with."""

    path = resolve_checkpoint(checkpoint)
    config = config_for_checkpoint(path, config)
    store = ParameterStore.load(path)
    logger.info("Checkpoint loaded", path=str(path), step=store.step)
    return BendingGraphModel.from_store(store, config.model_spec()), config


def match_meshes(
    model: BendingGraphModel,
    mesh_a: TriangleMesh,
    mesh_b: TriangleMesh,
    config: TrainConfig,
) -> MatchOutcome:
    shapes = [
        prepare_shape(
            normalize_to_unit_ball(mesh), config.n_seeds, config.d_cut, config.r, config.r_shape, config.d_cut_mode
        )
        for mesh in (mesh_a, mesh_b)
    ]
    result = model.forward(shapes[0], shapes[1]).result
    return MatchOutcome(result, shapes[0], shapes[1], [])


def run_match(
    source: Path,
    target: Path,
    checkpoint: Path,
    config: TrainConfig,
    output: Path,
    dump_graphs: bool = False,
    mode: Optional[str] = None,
    n_seeds: Optional[int] = None,
) -> MatchOutcome:
    """Write the MatchSet for ``source`` vs ``target`` and, optionally, both shape graphs."""

    model, config = load_model(checkpoint, config)
    if mode is not None or n_seeds is not None:
        config = config.with_overrides(match_mode=mode, n_seeds=n_seeds)
        model = BendingGraphModel.from_store(model.store, config.model_spec())
    outcome = match_meshes(model, read_mesh(source), read_mesh(target), config)
    output = Path(output)
    outcome.written.append(outcome.result.matches.write(output))
    if dump_graphs:
        stem = output.with_suffix("")
        outcome.written.append(write_shape_graph(outcome.shape_a.shape_graph, stem.with_name(f"{stem.name}_a.shapegraph")))
        outcome.written.append(write_shape_graph(outcome.shape_b.shape_graph, stem.with_name(f"{stem.name}_b.shapegraph")))
    logger.info(
        "Match written",
        output=str(output),
        matches=len(outcome.result.matches),
        mode=outcome.result.matches.mode,
    )
    return outcome


__all__ = ["MatchOutcome", "load_model", "match_meshes", "run_match"]
