"""Read and write synthetic pair datasets as OFF files, correspondence files and a manifest."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List

import numpy as np
from loguru import logger

from meshes.io import read_mesh, write_off
from meshes.synthetic import Deformation, ShapePairSample

MANIFEST_NAME = "dataset.json"


@dataclass(slots=True)
class DatasetStats:
    pairs: int
    vertices: int
    directory: Path

    def as_dict(self) -> Dict[str, object]:
        return {
            "pairs": self.pairs,
            "vertices": self.vertices,
            "directory": str(self.directory),
        }


def format_correspondence(correspondence: np.ndarray) -> str:
    return "".join(f"{src} {dst}\n" for src, dst in enumerate(np.asarray(correspondence).tolist()))


def parse_correspondence(text: str, n_vertices: int) -> np.ndarray:
    """``src_idx dst_idx`` lines into a total map over ``n_vertices`` source vertices."""

    mapping = np.full(n_vertices, -1, dtype=np.int64)
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            src, dst = (int(token) for token in line.split())
        except ValueError:
            raise ValueError(f"correspondence line {number}: expected 'src dst', got {raw!r}") from None
        if not 0 <= src < n_vertices:
            raise ValueError(f"correspondence line {number}: source {src} out of range")
        mapping[src] = dst
    missing = np.flatnonzero(mapping < 0)
    if missing.size:
        raise ValueError(f"correspondence misses {missing.size} source vertices (first {int(missing[0])})")
    return mapping


def write_dataset(samples: Iterable[ShapePairSample], directory: Path) -> DatasetStats:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries: List[Dict[str, object]] = []
    vertices = 0
    for sample in samples:
        write_off(sample.mesh_a, directory / f"{sample.name}_a.off")
        write_off(sample.mesh_b, directory / f"{sample.name}_b.off")
        (directory / f"{sample.name}.corr").write_text(
            format_correspondence(sample.correspondence), encoding="utf-8"
        )
        entries.append(
            {
                "name": sample.name,
                "base": sample.base,
                "vertices": sample.mesh_a.n_vertices,
                "deformation": sample.deformation.as_dict(),
            }
        )
        vertices += sample.mesh_a.n_vertices
    manifest = {"pairs": entries}
    (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    stats = DatasetStats(len(entries), vertices, directory)
    logger.info("Dataset written", **stats.as_dict())
    return stats


def _manifest_entries(directory: Path) -> List[Dict[str, object]]:
    manifest = directory / MANIFEST_NAME
    if manifest.exists():
        return list(json.loads(manifest.read_text(encoding="utf-8")).get("pairs", []))
    names = sorted(path.name[: -len("_a.off")] for path in directory.glob("*_a.off"))
    return [{"name": name} for name in names]


def read_pair(directory: Path, entry: Dict[str, object]) -> ShapePairSample:
    name = str(entry["name"])
    mesh_a = read_mesh(directory / f"{name}_a.off")
    mesh_b = read_mesh(directory / f"{name}_b.off")
    corr_path = directory / f"{name}.corr"
    if corr_path.exists():
        correspondence = parse_correspondence(corr_path.read_text(encoding="utf-8"), mesh_a.n_vertices)
    else:
        if mesh_a.n_vertices != mesh_b.n_vertices:
            raise ValueError(f"{name}: no correspondence file and vertex counts differ")
        correspondence = np.arange(mesh_a.n_vertices)
    deformation = Deformation(**entry["deformation"]) if entry.get("deformation") else Deformation()
    return ShapePairSample(
        mesh_a=mesh_a,
        mesh_b=mesh_b,
        correspondence=correspondence,
        deformation=deformation,
        base=str(entry.get("base", "cylinder")),
        name=name,
    )


def read_dataset(directory: Path) -> List[ShapePairSample]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {directory}")
    samples = [read_pair(directory, entry) for entry in _manifest_entries(directory)]
    if not samples:
        raise ValueError(f"no pairs found in {directory}")
    logger.debug("Dataset loaded", directory=str(directory), pairs=len(samples))
    return samples


__all__ = [
    "DatasetStats",
    "MANIFEST_NAME",
    "format_correspondence",
    "parse_correspondence",
    "read_dataset",
    "read_pair",
    "write_dataset",
]
