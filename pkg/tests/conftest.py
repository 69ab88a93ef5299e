"""Shared builders for the test suite."""

from __future__ import annotations

import numpy as np

from vocscan import AbundanceMatrix, RTAxis

RT_STEP = 1.0 / 375.0


def uniform_axis(rows: int, step: float = RT_STEP) -> RTAxis:
    """Axis with row i (0-based) at (i + 1) * step minutes."""
    return RTAxis((np.arange(rows, dtype=np.float64) + 1.0) * step)


def make_matrix(
    rows: int,
    channels: int,
    *,
    step: float = RT_STEP,
    values: np.ndarray | None = None,
    sample_id: str = "t",
    column_epoch: int = 1,
) -> AbundanceMatrix:
    if values is None:
        values = np.zeros((rows, channels))
    return AbundanceMatrix(
        values=values, axis=uniform_axis(rows, step), sample_id=sample_id, column_epoch=column_epoch
    )


def random_matrix(
    rows: int, channels: int, rng: np.random.Generator, *, step: float = RT_STEP, scale: float = 100.0
) -> AbundanceMatrix:
    values = rng.uniform(0.0, scale, size=(rows, channels))
    return make_matrix(rows, channels, step=step, values=values)
