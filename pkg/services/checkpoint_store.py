"""Run directory layout: checkpoints, the training log and the resolved config."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional

from loguru import logger

from models.train_config import TrainConfig
from network.params import ParameterStore

LOG_COLUMNS = ("epoch", "step", "L_D", "L_M", "L_R", "total", "gamma_D", "gamma_M", "gamma_R", "lr")
LOG_NAME = "train_log.tsv"
CONFIG_NAME = "config.json"
FINAL_NAME = "final.ckpt"
FAILURE_NAME = "failure.json"


@dataclass(slots=True)
class TrainLogRow:
    epoch: int
    step: int
    loss_d: float
    loss_m: float
    loss_r: float
    total: float
    gamma_d: float
    gamma_m: float
    gamma_r: float
    lr: float

    def as_tsv(self) -> str:
        floats = (self.loss_d, self.loss_m, self.loss_r, self.total, self.gamma_d, self.gamma_m, self.gamma_r, self.lr)
        return "\t".join([str(self.epoch), str(self.step), *(f"{value:.17g}" for value in floats)])

    @classmethod
    def parse(cls, line: str) -> "TrainLogRow":
        fields = line.rstrip("\n").split("\t")
        if len(fields) != len(LOG_COLUMNS):
            raise ValueError(f"training log row has {len(fields)} fields, expected {len(LOG_COLUMNS)}")
        return cls(int(fields[0]), int(fields[1]), *(float(value) for value in fields[2:]))

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


def read_train_log(path: Path) -> List[TrainLogRow]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [TrainLogRow.parse(line) for line in lines[1:] if line.strip()]


class CheckpointStore:
    """Owns one run directory; every file a training run produces goes through it."""

    def __init__(self, run_dir: Path) -> None:
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.log_path = self.run_dir / LOG_NAME

    def checkpoint_path(self, epoch: Optional[int] = None) -> Path:
        return self.run_dir / (FINAL_NAME if epoch is None else f"epoch_{epoch:03d}.ckpt")

    def save(self, store: ParameterStore, epoch: Optional[int] = None) -> Path:
        path = store.save(self.checkpoint_path(epoch))
        logger.info("Checkpoint saved", path=str(path), step=store.step, checksum=store.checksum())
        return path

    def checkpoints(self) -> List[Path]:
        return sorted(self.run_dir.glob("epoch_*.ckpt"))

    def write_config(self, config: TrainConfig) -> Path:
        return config.to_file(self.run_dir / CONFIG_NAME)

    def read_config(self) -> TrainConfig:
        return TrainConfig.from_file(self.run_dir / CONFIG_NAME)

    def start_log(self) -> None:
        self.log_path.write_text("\t".join(LOG_COLUMNS) + "\n", encoding="utf-8")

    def append_log(self, rows: List[TrainLogRow]) -> None:
        with self.log_path.open("a", encoding="utf-8") as fh:
            for row in rows:
                fh.write(row.as_tsv() + "\n")

    def read_log(self) -> List[TrainLogRow]:
        return read_train_log(self.log_path)

    def write_failure(self, payload: Dict[str, object]) -> Path:
        path = self.run_dir / FAILURE_NAME
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def resolve_checkpoint(path: Path) -> Path:
    """A checkpoint file, or ``final.ckpt`` inside a run directory."""

    path = Path(path)
    if path.is_dir():
        path = path / FINAL_NAME
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return path


def config_for_checkpoint(checkpoint: Path, fallback: TrainConfig) -> TrainConfig:
    """The config saved next to ``checkpoint`` when present, otherwise ``fallback``."""

    saved = Path(checkpoint).parent / CONFIG_NAME
    if saved.exists():
        return TrainConfig.from_file(saved)
    logger.warning("No config next to checkpoint; using the supplied one", checkpoint=str(checkpoint))
    return fallback


__all__ = [
    "CheckpointStore",
    "LOG_COLUMNS",
    "TrainLogRow",
    "config_for_checkpoint",
    "read_train_log",
    "resolve_checkpoint",
]
