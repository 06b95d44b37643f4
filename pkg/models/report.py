"""Pydantic models describing evaluation results."""
from __future__ import annotations

from typing import List

from pydantic import BaseModel, Field

TSV_COLUMNS = ("pair", "n", "error", "br", "error_first", "br_first", "mutual")


class PairReport(BaseModel):
    """Coarse geodesic error and bijectivity of one matched pair."""

    name: str
    n: int = Field(..., gt=0, description="Seeds per shape")
    error: float = Field(..., ge=0, description="Mean geodesic error over A seeds, divided by sqrt(area of B)")
    br: float = Field(..., ge=0, le=100, description="Percentage of mutual row/column argmax matches")
    error_first: float = Field(..., ge=0, description="Error of the plan before any propagation")
    br_first: float = Field(..., ge=0, le=100)
    mutual: int = Field(..., ge=0)

    model_config = {
        "extra": "ignore",
    }

    def as_row(self) -> list[str]:
        return [
            self.name,
            str(self.n),
            f"{self.error:.17g}",
            f"{self.br:.17g}",
            f"{self.error_first:.17g}",
            f"{self.br_first:.17g}",
            str(self.mutual),
        ]


class EvalReport(BaseModel):
    pairs: List[PairReport] = Field(default_factory=list)

    model_config = {
        "extra": "ignore",
    }

    @property
    def error(self) -> float:
        return sum(pair.error for pair in self.pairs) / len(self.pairs) if self.pairs else 0.0

    @property
    def br(self) -> float:
        return sum(pair.br for pair in self.pairs) / len(self.pairs) if self.pairs else 0.0

    @property
    def error_first(self) -> float:
        return sum(pair.error_first for pair in self.pairs) / len(self.pairs) if self.pairs else 0.0

    @property
    def br_first(self) -> float:
        return sum(pair.br_first for pair in self.pairs) / len(self.pairs) if self.pairs else 0.0

    def summary(self) -> str:
        return (
            f"pairs={len(self.pairs)} error={self.error:.6f} br={self.br:.2f}"
            f" error_first={self.error_first:.6f} br_first={self.br_first:.2f}"
        )

    def to_tsv(self) -> str:
        lines = ["\t".join(TSV_COLUMNS)]
        lines.extend("\t".join(pair.as_row()) for pair in self.pairs)
        lines.append(f"# {self.summary()}")
        return "\n".join(lines) + "\n"


__all__ = ["EvalReport", "PairReport", "TSV_COLUMNS"]
