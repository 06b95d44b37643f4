"""Centralised filesystem paths for the bending-graphs project."""
from __future__ import annotations

from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
DATA = ROOT / "data"
CONFIG_PATH = ROOT / "config.json"
DATASET_DIR = DATA / "synthetic"
RUNS_DIR = DATA / "runs"
LOG_DIR = DATA / "logs"

__all__ = ["ROOT", "DATA", "CONFIG_PATH", "DATASET_DIR", "RUNS_DIR", "LOG_DIR"]
