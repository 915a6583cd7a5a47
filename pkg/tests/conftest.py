from __future__ import annotations

import numpy as np
import pytest

from glc_lab.dynamics import SystemParams
from glc_lab.grid import build_meshes


@pytest.fixture
def system() -> SystemParams:
    return SystemParams(alpha=1.0, beta=0.5, c=0.5, gamma=1.0, T=1.0, omega=(0.3, 0.6), omega0=(0.35, 0.55))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def small_meshes():
    return build_meshes(5, 4, 1.0)


@pytest.fixture
def medium_meshes():
    return build_meshes(15, 16, 1.0)
