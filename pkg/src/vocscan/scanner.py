"""Whole-sample scanning: classify every window of an abundance matrix.

A sample with R rows yields N = R - delta + 1 overlapping windows. Each
window is min-max normalized exactly like a training point, classified,
and reduced to (label, confidence) = (argmax class, max probability).
The output sequences drive the detection rules.

Windows are processed in fixed-size batches whose boundaries do not
depend on the worker count, and per-window normalization uses the same
arithmetic as :func:`vocscan.dataset.normalize_values`, so parallel and
serial scans of the same sample are identical bit for bit.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import AbundanceMatrix, ContractError, RTAxis, ValidationError, _readonly
from .classifier import ClassifierModel

DEFAULT_BATCH = 256


@dataclass(frozen=True)
class ScanResult:
    """Per-window labels and confidences for one scanned sample."""

    labels: np.ndarray
    confidences: np.ndarray
    sample_id: str
    axis: RTAxis
    delta: int

    def __post_init__(self) -> None:
        labels = np.asarray(self.labels, dtype=np.int64)
        confs = np.asarray(self.confidences, dtype=np.float64)
        n = len(self.axis) - self.delta + 1
        if self.delta < 1 or n < 1:
            raise ValidationError(f"delta {self.delta} leaves no window on a {len(self.axis)}-row axis")
        if labels.shape != (n,) or confs.shape != (n,):
            raise ValidationError(
                f"expected {n} windows, got {labels.shape[0]} labels and {confs.shape[0]} confidences"
            )
        if labels.min(initial=0) < 0:
            raise ValidationError("window labels must be >= 0")
        if confs.size and (confs.min() <= 0.0 or confs.max() > 1.0):
            raise ValidationError("window confidences must lie in (0, 1]")
        object.__setattr__(self, "labels", _readonly(labels))
        object.__setattr__(self, "confidences", _readonly(confs))

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def window_rt(self, i: int) -> float:
        """RT of window i's middle row (row i + delta // 2)."""
        if not 0 <= i < len(self):
            raise ContractError(f"window index {i} out of range [0, {len(self)})")
        return float(self.axis[i + self.delta // 2])


def _window_extrema(values: np.ndarray, delta: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-window min and max over all delta x C values, in O(R*C + N*delta)."""
    row_min = values.min(axis=1)
    row_max = values.max(axis=1)
    win_min = sliding_window_view(row_min, delta).min(axis=1)
    win_max = sliding_window_view(row_max, delta).max(axis=1)
    return win_min, win_max


def scan(
    matrix: AbundanceMatrix,
    model: ClassifierModel,
    delta: int | None = None,
    *,
    batch_size: int = DEFAULT_BATCH,
    workers: int = 1,
) -> ScanResult:
    """Classify all N = R - delta + 1 windows of a sample.

    ``delta`` defaults to the model's window length and must match it
    when given. ``workers`` > 1 spreads batches over a thread pool;
    batch boundaries are fixed by ``batch_size`` alone, so the result is
    identical for any worker count.

    Raises
    ------
    ContractError
        Channel/window shape mismatch with the model, or R < delta.
    """
    meta = model.meta
    if delta is None:
        delta = meta.delta
    if delta != meta.delta:
        raise ContractError(f"delta {delta} does not match the model's window length {meta.delta}")
    if matrix.channels != meta.channels:
        raise ContractError(
            f"sample {matrix.sample_id!r} has {matrix.channels} channels, model expects {meta.channels}"
        )
    if matrix.n_rows < delta:
        raise ContractError(
            f"sample {matrix.sample_id!r} has {matrix.n_rows} rows, fewer than delta={delta}"
        )
    if batch_size < 1:
        raise ContractError(f"batch_size must be >= 1, got {batch_size}")
    if workers < 1:
        raise ContractError(f"workers must be >= 1, got {workers}")

    windows = sliding_window_view(matrix.values, delta, axis=0)  # (N, C, delta) view
    n = windows.shape[0]
    win_min, win_max = _window_extrema(matrix.values, delta)
    span = win_max - win_min
    denom = np.where(span > 0.0, span, 1.0)  # constant windows normalize to all zeros

    labels = np.empty(n, dtype=np.int64)
    confidences = np.empty(n, dtype=np.float64)
    starts = range(0, n, batch_size)

    def run_batch(start: int) -> None:
        stop = min(start + batch_size, n)
        block = np.array(windows[start:stop], dtype=np.float64)
        block -= win_min[start:stop, None, None]
        block /= denom[start:stop, None, None]
        probs = model.predict_batch(block)
        idx = probs.argmax(axis=1)
        labels[start:stop] = idx
        confidences[start:stop] = probs[np.arange(stop - start), idx]

    if workers == 1:
        for start in starts:
            run_batch(start)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            # materialize to surface worker exceptions
            list(pool.map(run_batch, starts))

    return ScanResult(
        labels=labels,
        confidences=confidences,
        sample_id=matrix.sample_id,
        axis=matrix.axis,
        delta=delta,
    )
