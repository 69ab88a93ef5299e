"""Core domain types for raw GC-MS samples.

A GC-MS sample is an abundance matrix: each row is the mass spectrum
measured at one retention time (RT) point, each column is one m/z ion
channel. Rows are ordered by strictly increasing retention time. All
downstream stages (window extraction, scanning, detection, evaluation)
operate on the types defined here.

Conventions used across the package:

* Row and window indices are 0-based.
* Retention times are in minutes.
* Class labels are plain ints: 0 is the negative ("no target compound")
  class, 1..K are the target compounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

# Default dimensions: unit-resolution m/z channels 40..450 and an
# 80-row analysis window.
DEFAULT_CHANNELS = 411
DEFAULT_DELTA = 80
FIRST_MZ = 40

NEGATIVE_LABEL = 0


class VocScanError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(VocScanError):
    """A domain invariant was violated while constructing a value."""


class WindowBoundsError(VocScanError, IndexError):
    """A requested window does not fit inside the matrix."""


class ContractError(VocScanError):
    """Arguments violate an operation's contract (shape or precondition)."""


def derive_rng(seed: int, *stream: int) -> np.random.Generator:
    """Derive an independent RNG from a master seed and a stream path.

    Every random choice in the pipeline draws from a generator obtained
    through this function, so a single manifest seed reproduces any stage
    in isolation. ``stream`` is a tuple of small non-negative ints
    identifying the consumer (stage id, sample index, annotation index...).
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, stream)]))


def derive_seed(seed: int, *stream: int) -> int:
    """Like :func:`derive_rng` but yields a plain int for seed-carrying configs."""
    ss = np.random.SeedSequence([int(seed), *map(int, stream)])
    return int(ss.generate_state(1, np.uint64)[0])


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class RTAxis:
    """Retention-time axis: strictly increasing times (minutes), one per row."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise ValidationError("RT axis must be a non-empty 1-D array")
        if not np.all(np.isfinite(v)):
            raise ValidationError("RT axis contains non-finite values")
        if v.size > 1 and not np.all(np.diff(v) > 0):
            bad = int(np.argmax(np.diff(v) <= 0))
            raise ValidationError(
                f"RT axis must be strictly increasing (violated between rows {bad} and {bad + 1})"
            )
        object.__setattr__(self, "values", _readonly(v))

    def __len__(self) -> int:
        return int(self.values.size)

    def __getitem__(self, i):
        return self.values[i]

    @property
    def span(self) -> float:
        """Total RT extent, last minus first (minutes)."""
        return float(self.values[-1] - self.values[0])

    def nearest_row(self, rt: float) -> int:
        """Index of the row whose RT is closest to ``rt``; ties go to the earlier row."""
        v = self.values
        i = int(np.searchsorted(v, rt))
        if i == 0:
            return 0
        if i >= v.size:
            return int(v.size - 1)
        return i - 1 if rt - v[i - 1] <= v[i] - rt else i


@dataclass(frozen=True)
class AbundanceMatrix:
    """One raw GC-MS sample: an R x C grid of ion intensities plus its RT axis.

    Rows are mass spectra at consecutive RT points, columns are m/z
    channels. Intensities are non-negative, stored as float64 (raw counts
    can span several orders of magnitude). Instances are immutable after
    construction and safe to share across workers.
    """

    values: np.ndarray
    axis: RTAxis
    sample_id: str = ""
    column_epoch: int = 1  # GC column generation; bumped when the column is replaced

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValidationError(f"abundance matrix must be 2-D, got shape {v.shape}")
        if v.shape[0] != len(self.axis):
            raise ValidationError(
                f"matrix has {v.shape[0]} rows but RT axis has {len(self.axis)} entries"
            )
        if not np.all(np.isfinite(v)):
            raise ValidationError("abundance matrix contains non-finite intensities")
        if np.any(v < 0):
            r, c = np.argwhere(v < 0)[0]
            raise ValidationError(f"negative intensity at row {r}, channel {c}")
        if self.column_epoch < 1:
            raise ValidationError("column_epoch must be >= 1")
        object.__setattr__(self, "values", _readonly(v))

    @property
    def n_rows(self) -> int:
        return int(self.values.shape[0])

    @property
    def channels(self) -> int:
        return int(self.values.shape[1])


@dataclass(frozen=True)
class GroundTruthAnnotation:
    """One expert-confirmed compound instance: label plus its elution interval.

    ``start_rt`` / ``end_rt`` bound the elution on the RT axis and
    ``peak_rt`` marks the apex. The label is 1-based; the negative class
    cannot be annotated.
    """

    sample_id: str
    label: int
    start_rt: float
    peak_rt: float
    end_rt: float

    def __post_init__(self) -> None:
        if int(self.label) != self.label or self.label < 1:
            raise ValidationError(f"annotation label must be a positive int, got {self.label!r}")
        if not (self.start_rt <= self.peak_rt <= self.end_rt):
            raise ValidationError(
                f"annotation for label {self.label} must satisfy start <= peak <= end, "
                f"got ({self.start_rt}, {self.peak_rt}, {self.end_rt})"
            )
        if not np.isfinite([self.start_rt, self.peak_rt, self.end_rt]).all():
            raise ValidationError("annotation RT values must be finite")

    @property
    def interval(self) -> tuple[float, float]:
        return (float(self.start_rt), float(self.end_rt))


def n_windows(matrix: AbundanceMatrix, delta: int = DEFAULT_DELTA) -> int:
    """Number of valid analysis windows: R - delta + 1."""
    if delta < 1:
        raise ContractError(f"delta must be >= 1, got {delta}")
    if matrix.n_rows < delta:
        raise ContractError(
            f"sample {matrix.sample_id!r} has {matrix.n_rows} rows, fewer than delta={delta}"
        )
    return matrix.n_rows - delta + 1


def window(matrix: AbundanceMatrix, start: int, delta: int = DEFAULT_DELTA) -> np.ndarray:
    """Extract the delta x C sub-matrix of rows ``start .. start + delta - 1``.

    Intensities are returned untouched (a read-only view, no copy).

    Raises
    ------
    WindowBoundsError
        If the window does not fit inside the matrix.
    """
    if delta < 1:
        raise ContractError(f"delta must be >= 1, got {delta}")
    if start < 0 or start + delta > matrix.n_rows:
        raise WindowBoundsError(
            f"window [{start}, {start + delta}) out of bounds for {matrix.n_rows} rows"
        )
    return matrix.values[start : start + delta]


def rt_of_window(matrix: AbundanceMatrix, start: int, delta: int = DEFAULT_DELTA) -> float:
    """Retention time assigned to a window: the RT of its middle row.

    The middle row of a window starting at ``start`` is
    ``start + delta // 2``.
    """
    if delta < 1:
        raise ContractError(f"delta must be >= 1, got {delta}")
    if start < 0 or start + delta > matrix.n_rows:
        raise WindowBoundsError(
            f"window [{start}, {start + delta}) out of bounds for {matrix.n_rows} rows"
        )
    return float(matrix.axis[start + delta // 2])


def intervals_overlap(a: tuple[float, float], b: tuple[float, float]) -> bool:
    """Closed-interval intersection test used by detection/annotation matching."""
    return a[0] <= b[1] and b[0] <= a[1]


def tic(matrix: AbundanceMatrix) -> np.ndarray:
    """Total ion current: per-row sum across all channels."""
    return matrix.values.sum(axis=1)
