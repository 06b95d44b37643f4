from __future__ import annotations

import numpy as np
import pytest

from meshes.geometry import TriangleMesh, normalize_to_unit_ball
from meshes.synthetic import base_mesh
from models.train_config import TrainConfig
from tests.builders import tiny_config


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def cylinder() -> TriangleMesh:
    return normalize_to_unit_ball(base_mesh("cylinder", 24))


@pytest.fixture
def small_config() -> TrainConfig:
    return tiny_config()
