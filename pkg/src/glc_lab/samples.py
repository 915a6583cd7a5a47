"""Initial-data presets, adjoint sample families and the counter-based seed scheme."""

from __future__ import annotations

from enum import Enum, IntEnum
from typing import Dict, List, Sequence, Tuple

import numpy as np

from glc_lab.grid import SpaceMesh


class Stream(IntEnum):
    IDENTITIES = 1
    WEIGHTS = 2
    SOLVE = 3
    CARLEMAN = 4
    ENERGY = 5
    OBSERVABILITY = 6
    CONTROL = 7


class Preset(str, Enum):
    CONSTANT = "constant"
    GAUSSIAN_BUMP = "gaussian-bump"
    RANDOM = "random"


class SampleKind(str, Enum):
    RANDOM = "random"
    BOUNDARY = "boundary"
    LOW_MODE = "low-mode"
    HIGH_MODE = "high-mode"


CARLEMAN_FAMILY: Tuple[SampleKind, ...] = (SampleKind.RANDOM, SampleKind.BOUNDARY, SampleKind.HIGH_MODE)
OBSERVABILITY_FAMILY: Tuple[SampleKind, ...] = (
    SampleKind.RANDOM,
    SampleKind.BOUNDARY,
    SampleKind.LOW_MODE,
    SampleKind.HIGH_MODE,
)


def rng_for(seed: int, stream: Stream, cell: int = 0, sample: int = 0) -> np.random.Generator:
    """Generator for (seed, stream, cell, sample); independent of evaluation order."""
    return np.random.default_rng([int(seed), int(stream), int(cell), int(sample)])


def complex_gaussian(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.standard_normal(n) + 1j * rng.standard_normal(n)


def initial_data(preset: Preset, mesh: SpaceMesh, rng: np.random.Generator = None) -> np.ndarray:
    x = mesh.primal_nodes
    if preset == Preset.CONSTANT:
        return np.ones_like(x, dtype=np.complex128)
    if preset == Preset.GAUSSIAN_BUMP:
        return np.exp(-(((x - 0.5) / 0.1) ** 2)).astype(np.complex128)
    if rng is None:
        raise ValueError("the random preset needs a generator")
    return complex_gaussian(rng, len(x))


def adjoint_sample(kind: SampleKind, mesh: SpaceMesh, rng: np.random.Generator) -> np.ndarray:
    x = mesh.primal_nodes
    if kind == SampleKind.RANDOM:
        return complex_gaussian(rng, len(x))
    if kind == SampleKind.BOUNDARY:
        q = np.zeros(len(x), dtype=np.complex128)
        q[[0, -1]] = complex_gaussian(rng, 2)
        return q
    phase = np.exp(2j * np.pi * rng.random())
    if kind == SampleKind.LOW_MODE:
        return phase * np.cos(np.pi * x)
    return phase * (-1.0) ** np.arange(len(x))


def sample_family(
    kinds: Sequence[SampleKind],
    count: int,
    mesh: SpaceMesh,
    seed: int,
    stream: Stream,
    cell: int = 0,
) -> List[Tuple[int, SampleKind, np.ndarray]]:
    """``count`` samples cycling through ``kinds``; sample i always uses the generator (seed, stream, cell, i)."""
    out: List[Tuple[int, SampleKind, np.ndarray]] = []
    for i in range(count):
        kind = kinds[i % len(kinds)]
        out.append((i, kind, adjoint_sample(kind, mesh, rng_for(seed, stream, cell, i))))
    return out


PRESET_LABELS: Dict[str, Preset] = {p.value: p for p in Preset}
