"""Pydantic model holding every training and architecture setting."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, Field, ValidationError, model_validator

from network.descriptor import EncodingConfig
from network.got import GOTConfig
from network.losses import LossWeights, WeightStage
from network.model import ModelSpec


class TrainConfig(BaseModel):
    """Flat configuration of a run; serialises losslessly to JSON and key=value text."""

    n_seeds: int = Field(200, gt=0, description="Seeds per shape (shape-graph nodes)")
    d_cut: float = Field(7, ge=0, description="Local graph cut, in hops or geodesic units")
    d_cut_mode: Literal["hops", "geodesic"] = "hops"
    r: float = Field(0.1, gt=0, description="Local ball radius for local-graph edges")
    r_shape: float = Field(0.35, gt=0, description="Geodesic radius for shape-graph edges")
    d: int = Field(64, gt=0, description="Descriptor and node feature width")
    tag_hidden: int = Field(32, gt=0)
    sigma: float = Field(8.0, gt=1)
    m: int = Field(9, ge=2)
    tau: float = Field(0.1, gt=0, description="Sinkhorn temperature")
    sinkhorn_iters: int = Field(100, ge=1)
    n_got: int = Field(1, ge=0)
    n_gfp: int = Field(2, ge=0)
    match_mode: Literal["row_argmax", "mutual"] = "row_argmax"
    alpha: float = Field(0.2, ge=0, description="Triplet margin")
    r_d: float = Field(0.15, gt=0, description="Soft supervision radius")
    lr: float = Field(0.001, gt=0)
    lr_late: float = Field(0.0001, gt=0)
    lr_switch_epoch: int = Field(30, ge=0)
    epochs: int = Field(60, ge=1)
    seed: int = 0
    weight_switch_epoch: int = Field(30, ge=0)
    gamma_d_early: float = Field(1.0, ge=0)
    gamma_m_early: float = Field(0.0, ge=0)
    gamma_r_early: float = Field(1.0, ge=0)
    gamma_d_late: float = Field(0.1, ge=0)
    gamma_m_late: float = Field(1.0, ge=0)
    gamma_r_late: float = Field(1.0, ge=0)
    negative_min_hops: Optional[int] = Field(None, ge=1, description="Defaults to 2 * d_cut")
    negative_max_hops: Optional[int] = Field(None, ge=1, description="Defaults to 4 * d_cut")
    checkpoint_every: int = Field(10, ge=0, description="0 keeps only final.ckpt")
    augment_rotation: bool = True
    rotation_mode: Literal["independent", "shared"] = Field(
        "independent", description="shared applies one rotation to both shapes of a pair"
    )
    batch_size: int = Field(1, ge=1)
    workers: int = Field(1, ge=1)
    use_local_descriptor: bool = True
    use_shape_graph: bool = True
    use_regularization: bool = True

    model_config = {
        "extra": "forbid",
        "frozen": True,
    }

    @model_validator(mode="after")
    def _check_ring(self) -> "TrainConfig":
        low, high = self.negative_ring
        if high < low:
            raise ValueError(f"negative ring ({low}, {high}) is empty")
        return self

    # --- derived settings

    @property
    def negative_ring(self) -> tuple[int, int]:
        base = max(1, int(round(self.d_cut)))
        low = self.negative_min_hops if self.negative_min_hops is not None else 2 * base
        high = self.negative_max_hops if self.negative_max_hops is not None else 4 * base
        return low, high

    def encoding(self) -> EncodingConfig:
        return EncodingConfig(self.sigma, self.m)

    def got_config(self) -> GOTConfig:
        return GOTConfig(self.n_got, self.n_gfp, self.sinkhorn_iters, self.tau, self.match_mode)

    def model_spec(self) -> ModelSpec:
        return ModelSpec(
            d=self.d,
            tag_hidden=self.tag_hidden,
            encoding=self.encoding(),
            got=self.got_config(),
            use_local_descriptor=self.use_local_descriptor,
            use_shape_graph=self.use_shape_graph,
        )

    def loss_weights(self) -> LossWeights:
        gamma_r_early = self.gamma_r_early if self.use_regularization else 0.0
        gamma_r_late = self.gamma_r_late if self.use_regularization else 0.0
        return LossWeights(
            (
                WeightStage(self.weight_switch_epoch, self.gamma_d_early, self.gamma_m_early, gamma_r_early),
                WeightStage(None, self.gamma_d_late, self.gamma_m_late, gamma_r_late),
            )
        )

    def learning_rate(self, epoch: int) -> float:
        return self.lr if epoch <= self.lr_switch_epoch else self.lr_late

    # --- (de)serialisation

    def to_text(self) -> str:
        lines = []
        for key, value in self.model_dump().items():
            if value is None:
                continue
            lines.append(f"{key}={json.dumps(value)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        """Parse ``key=value`` lines; values are JSON literals or bare strings."""

        values: dict[str, object] = {}
        for number, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {number}: expected key=value, got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            try:
                values[key] = json.loads(value)
            except json.JSONDecodeError:
                values[key] = value
        return cls.model_validate(values)

    @classmethod
    def from_file(cls, path: Path) -> "TrainConfig":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config not found: {path}")
        text = path.read_text(encoding="utf-8")
        if path.suffix.lower() == ".json":
            payload = json.loads(text)
            return cls.model_validate(payload.get("train", payload))
        return cls.from_text(text)

    def to_file(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        if path.suffix.lower() == ".json":
            path.write_text(json.dumps({"train": self.model_dump()}, indent=2) + "\n", encoding="utf-8")
        else:
            path.write_text(self.to_text(), encoding="utf-8")
        return path

    def with_overrides(self, **overrides: object) -> "TrainConfig":
        """Copy with the non-``None`` overrides applied and validated."""

        values = self.model_dump()
        values.update({key: value for key, value in overrides.items() if value is not None})
        return TrainConfig.model_validate(values)


__all__ = ["TrainConfig", "ValidationError"]
