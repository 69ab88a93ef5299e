"""Training-data preparation from annotated abundance matrices.

One training example (a :class:`DataPoint`) is a delta x C sub-matrix
cut out around an annotated compound so the elution apex row sits at
offset ``delta // 2``. The dataset is expanded by translating each
window along the RT axis and by scaling rows under the peak with a
Gaussian-shaped intensity factor, then min-max normalized per point.
Negative examples are windows drawn away from every annotated interval.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import (
    DEFAULT_DELTA,
    NEGATIVE_LABEL,
    AbundanceMatrix,
    ContractError,
    GroundTruthAnnotation,
    VocScanError,
    derive_rng,
    _readonly,
)

# derive_rng streams used by build_dataset
_STREAM_AUGMENT = 0
_STREAM_NEGATIVES = 1


class ExtractionError(VocScanError, IndexError):
    """An annotation's window does not fit inside its matrix."""


class SamplingError(VocScanError):
    """Too few compound-free windows to draw the requested negatives."""


class SplitError(VocScanError):
    """A participant-level split cannot be formed."""


class ElutionTooLongWarning(UserWarning):
    """An annotated elution exceeds the span a window can fully translate."""


@dataclass(frozen=True)
class Provenance:
    """Where a data point came from: source window plus augmentation ids.

    ``anchor_row`` is the first matrix row of the extracted window (after
    any translation), ``shift`` the translation offset in rows relative
    to the centered window, ``variant`` 0 for the unscaled point and
    1..V for its intensity-scaled copies.
    """

    sample_id: str
    anchor_row: int
    shift: int = 0
    variant: int = 0


@dataclass(frozen=True)
class DataPoint:
    """One delta x C training/inference example."""

    values: np.ndarray
    label: int
    row_rts: np.ndarray
    normalized: bool = False
    provenance: Provenance | None = None

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ContractError(f"data point values must be 2-D, got shape {v.shape}")
        r = np.asarray(self.row_rts, dtype=np.float64)
        if r.shape != (v.shape[0],):
            raise ContractError(
                f"row_rts shape {r.shape} does not match the {v.shape[0]} window rows"
            )
        if self.label < 0:
            raise ContractError(f"label must be >= 0, got {self.label}")
        object.__setattr__(self, "values", _readonly(v))
        object.__setattr__(self, "row_rts", _readonly(r))

    @property
    def delta(self) -> int:
        return int(self.values.shape[0])

    @property
    def channels(self) -> int:
        return int(self.values.shape[1])


@dataclass(frozen=True)
class LabeledDataset:
    """A list of shape-consistent data points plus per-class counts."""

    points: tuple[DataPoint, ...]
    class_counts: dict[int, int] = field(init=False)

    def __post_init__(self) -> None:
        pts = tuple(self.points)
        if pts:
            shape = pts[0].values.shape
            for p in pts:
                if p.values.shape != shape:
                    raise ContractError(
                        f"mixed point shapes in dataset: {shape} vs {p.values.shape}"
                    )
        counts: dict[int, int] = {}
        for p in pts:
            counts[p.label] = counts.get(p.label, 0) + 1
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "class_counts", counts)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def n_classes(self) -> int:
        """Highest label + 1 (the negative class counts as class 0)."""
        if not self.points:
            return 0
        return max(self.class_counts) + 1

    def to_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Stack into (n, delta, C) values and (n,) labels."""
        if not self.points:
            raise ContractError("cannot stack an empty dataset")
        x = np.stack([p.values for p in self.points])
        y = np.array([p.label for p in self.points], dtype=np.int64)
        return x, y


# ---------------------------------------------------------------------------
# extraction

def extract_datapoint(
    matrix: AbundanceMatrix, ann: GroundTruthAnnotation, delta: int = DEFAULT_DELTA
) -> DataPoint:
    """Cut the window centered on an annotated compound.

    The apex of the annotated interval is the RT midpoint
    ``(start_rt + end_rt) / 2``; the window is placed so the matrix row
    nearest that midpoint sits at offset ``delta // 2``.

    Raises
    ------
    ExtractionError
        The centered window does not fit inside the matrix.

    Warns
    -----
    ElutionTooLongWarning
        The annotated elution spans more than ``delta - 19`` rows, so
        translated copies cannot all contain the full peak.
    """
    mid_row = matrix.axis.nearest_row((ann.start_rt + ann.end_rt) / 2.0)
    start = mid_row - delta // 2
    if start < 0 or start + delta > matrix.n_rows:
        raise ExtractionError(
            f"sample {matrix.sample_id!r}, label {ann.label}: centered window "
            f"[{start}, {start + delta}) out of bounds for {matrix.n_rows} rows"
        )
    rows = matrix.axis.nearest_row(ann.end_rt) - matrix.axis.nearest_row(ann.start_rt) + 1
    if rows > delta - 19:
        warnings.warn(
            f"sample {matrix.sample_id!r}, label {ann.label}: elution spans {rows} rows, "
            f"more than delta - 19 = {delta - 19}; translated copies will clip the peak",
            ElutionTooLongWarning,
            stacklevel=2,
        )
    return DataPoint(
        values=matrix.values[start : start + delta],
        label=ann.label,
        row_rts=matrix.axis.values[start : start + delta],
        provenance=Provenance(sample_id=matrix.sample_id, anchor_row=start),
    )


def translation_offsets(shifts: int) -> range:
    """Offsets used for translation augmentation, centered on 0.

    ``shifts=20`` gives -9..+10; odd counts are symmetric around 0.
    """
    if shifts < 1:
        raise ContractError(f"shifts must be >= 1, got {shifts}")
    return range(shifts // 2 - shifts + 1, shifts // 2 + 1)


def augment_translation(
    matrix: AbundanceMatrix,
    ann: GroundTruthAnnotation,
    delta: int = DEFAULT_DELTA,
    shifts: int = 20,
) -> list[DataPoint]:
    """Extract ``shifts`` windows translated around the centered one.

    Offset 0 reproduces :func:`extract_datapoint`'s window. All shifted
    windows must fit in the matrix, else :class:`ExtractionError`.
    """
    offsets = translation_offsets(shifts)
    centered = extract_datapoint(matrix, ann, delta)
    base = centered.provenance.anchor_row
    if base + offsets[0] < 0 or base + offsets[-1] + delta > matrix.n_rows:
        raise ExtractionError(
            f"sample {matrix.sample_id!r}, label {ann.label}: translated windows "
            f"[{base + offsets[0]}, {base + offsets[-1] + delta}) out of bounds "
            f"for {matrix.n_rows} rows"
        )
    out = []
    for n in offsets:
        start = base + n
        out.append(
            DataPoint(
                values=matrix.values[start : start + delta],
                label=ann.label,
                row_rts=matrix.axis.values[start : start + delta],
                provenance=Provenance(sample_id=matrix.sample_id, anchor_row=start, shift=n),
            )
        )
    return out


# ---------------------------------------------------------------------------
# augmentation

def augment_intensity(
    dp: DataPoint,
    ann: GroundTruthAnnotation,
    rng: np.random.Generator,
    *,
    r_max: float = 0.1,
    sigma: float | None = None,
    variant: int = 1,
) -> DataPoint:
    """Scale the rows under the annotated peak by a Gaussian-shaped factor.

    Every row whose RT ``x`` lies strictly inside (start_rt, end_rt) is
    multiplied (across all channels, preserving ion ratios) by
    ``exp(-((x - mid) / sigma)^2 / 2) * r + 1`` with ``r`` drawn once
    from U(0, r_max); ``mid`` is the interval midpoint. ``sigma``
    defaults to a quarter of the interval width, concentrating the boost
    at the apex. Rows outside the interval are untouched.
    """
    if dp.normalized:
        raise ContractError("intensity augmentation must run before normalization")
    mid = (ann.start_rt + ann.end_rt) / 2.0
    if sigma is None:
        sigma = (ann.end_rt - ann.start_rt) / 4.0
    r = float(rng.uniform(0.0, r_max))
    values = dp.values.copy()
    mask = (dp.row_rts > ann.start_rt) & (dp.row_rts < ann.end_rt)
    if sigma > 0 and mask.any():
        x = dp.row_rts[mask]
        factor = np.exp(-0.5 * ((x - mid) / sigma) ** 2) * r + 1.0
        values[mask] *= factor[:, None]
    prov = replace(dp.provenance, variant=variant) if dp.provenance else None
    return DataPoint(
        values=values, label=dp.label, row_rts=dp.row_rts, normalized=False, provenance=prov
    )


def augment_full(
    matrix: AbundanceMatrix,
    ann: GroundTruthAnnotation,
    rng: np.random.Generator,
    delta: int = DEFAULT_DELTA,
    *,
    shifts: int = 20,
    variants_per_shift: int = 4,
    r_max: float = 0.1,
    sigma: float | None = None,
) -> list[DataPoint]:
    """Full augmentation of one annotation.

    Emits ``shifts * (1 + variants_per_shift)`` points: each translated
    window followed by its intensity-scaled variants, in deterministic
    order (shift ascending, variant ascending).
    """
    if variants_per_shift < 0:
        raise ContractError(f"variants_per_shift must be >= 0, got {variants_per_shift}")
    out = []
    for dp in augment_translation(matrix, ann, delta, shifts):
        out.append(dp)
        for v in range(1, variants_per_shift + 1):
            out.append(augment_intensity(dp, ann, rng, r_max=r_max, sigma=sigma, variant=v))
    return out


# ---------------------------------------------------------------------------
# normalization

def normalize_values(values: np.ndarray) -> np.ndarray:
    """Min-max scale a whole grid to [0, 1]; constant input becomes zeros."""
    values = np.asarray(values, dtype=np.float64)
    lo = values.min()
    hi = values.max()
    if hi > lo:
        return (values - lo) / (hi - lo)
    return np.zeros_like(values)


def normalize(dp: DataPoint) -> DataPoint:
    """Min-max normalize one point over all its delta x C values."""
    return DataPoint(
        values=normalize_values(dp.values),
        label=dp.label,
        row_rts=dp.row_rts,
        normalized=True,
        provenance=dp.provenance,
    )


# ---------------------------------------------------------------------------
# negatives

def sample_negatives(
    matrix: AbundanceMatrix,
    annotations: Sequence[GroundTruthAnnotation],
    count: int,
    rng: np.random.Generator,
    delta: int = DEFAULT_DELTA,
) -> list[DataPoint]:
    """Draw ``count`` windows whose RT spans avoid every annotated interval.

    Valid window starts are enumerated exactly and drawn without
    replacement, so the result is deterministic for a given generator
    state and never overlaps an annotation.

    Raises
    ------
    SamplingError
        Fewer than ``count`` compound-free windows exist.
    """
    if count < 0:
        raise ContractError(f"count must be >= 0, got {count}")
    n = matrix.n_rows - delta + 1
    if n < 1:
        raise SamplingError(
            f"sample {matrix.sample_id!r} has {matrix.n_rows} rows, no window of {delta} fits"
        )
    first_rts = matrix.axis.values[:n]
    last_rts = matrix.axis.values[delta - 1 :]
    ok = np.ones(n, dtype=bool)
    for ann in annotations:
        ok &= (last_rts < ann.start_rt) | (first_rts > ann.end_rt)
    valid = np.nonzero(ok)[0]
    if count > valid.size:
        raise SamplingError(
            f"sample {matrix.sample_id!r}: requested {count} negative windows but only "
            f"{valid.size} compound-free positions exist"
        )
    starts = rng.choice(valid, size=count, replace=False)
    out = []
    for start in map(int, starts):
        out.append(
            DataPoint(
                values=matrix.values[start : start + delta],
                label=NEGATIVE_LABEL,
                row_rts=matrix.axis.values[start : start + delta],
                provenance=Provenance(sample_id=matrix.sample_id, anchor_row=start),
            )
        )
    return out


# ---------------------------------------------------------------------------
# dataset assembly

def build_dataset(
    samples: Sequence[tuple[AbundanceMatrix, Sequence[GroundTruthAnnotation]]],
    *,
    seed: int,
    delta: int = DEFAULT_DELTA,
    shifts: int = 20,
    variants_per_shift: int = 4,
    r_max: float = 0.1,
    negative_ratio: float = 1.0,
    normalize_points: bool = True,
) -> LabeledDataset:
    """Assemble the labeled dataset from annotated samples.

    Positives are the augmented windows of every annotation; negatives
    are compound-free windows, ``negative_ratio`` x the positive count
    in total (default 1:1, making the negative class half the dataset),
    spread as evenly as possible across samples. Randomness is derived
    per annotation and per sample from ``seed``, so the result does not
    depend on processing order.
    """
    if negative_ratio < 0:
        raise ContractError(f"negative_ratio must be >= 0, got {negative_ratio}")
    points: list[DataPoint] = []
    n_pos = 0
    for i, (matrix, anns) in enumerate(samples):
        for j, ann in enumerate(anns):
            rng = derive_rng(seed, _STREAM_AUGMENT, i, j)
            aug = augment_full(
                matrix,
                ann,
                rng,
                delta,
                shifts=shifts,
                variants_per_shift=variants_per_shift,
                r_max=r_max,
            )
            points.extend(aug)
            n_pos += len(aug)
    total_neg = int(round(negative_ratio * n_pos))
    n_samples = len(samples)
    for i, (matrix, anns) in enumerate(samples):
        quota = total_neg // n_samples + (1 if i < total_neg % n_samples else 0)
        if quota == 0:
            continue
        rng = derive_rng(seed, _STREAM_NEGATIVES, i)
        points.extend(sample_negatives(matrix, anns, quota, rng, delta))
    if normalize_points:
        points = [normalize(p) for p in points]
    return LabeledDataset(points=tuple(points))


def split_by_participant(manifest, folds: int) -> list[tuple[list[str], list[str]]]:
    """Partition manifest samples into cross-validation folds by participant.

    Participants are sorted and dealt round-robin into ``folds`` groups
    (sizes differ by at most one); each returned pair is the sample ids
    whose participants fall outside / inside one group. No participant
    ever appears on both sides of a split.

    Raises
    ------
    SplitError
        ``folds < 2`` or fewer participants than folds.
    """
    if folds < 2:
        raise SplitError(f"folds must be >= 2, got {folds}")
    by_participant: dict[str, list[str]] = {}
    for s in manifest.samples:
        by_participant.setdefault(s.participant_id, []).append(s.sample_id)
    participants = sorted(by_participant)
    if len(participants) < folds:
        raise SplitError(f"{len(participants)} participants cannot fill {folds} folds")
    groups: list[list[str]] = [[] for _ in range(folds)]
    for i, p in enumerate(participants):
        groups[i % folds].append(p)
    out = []
    for g in groups:
        val_ids = sorted(sid for p in g for sid in by_participant[p])
        train_ids = sorted(
            sid for p in participants if p not in g for sid in by_participant[p]
        )
        out.append((train_ids, val_ids))
    return out


# ---------------------------------------------------------------------------
# dataset cache

_CACHE_VERSION = 1


def save_dataset(ds: LabeledDataset, path) -> None:
    """Write a dataset to an .npz container for train/scan reuse."""
    if not ds.points:
        raise ContractError("refusing to save an empty dataset")
    x, y = ds.to_arrays()
    rts = np.stack([p.row_rts for p in ds.points])
    prov = [p.provenance or Provenance("", -1) for p in ds.points]
    np.savez(
        path,
        version=np.array(_CACHE_VERSION),
        values=x,
        labels=y,
        row_rts=rts,
        normalized=np.array([p.normalized for p in ds.points], dtype=bool),
        prov_sample_id=np.array([p.sample_id for p in prov], dtype=str),
        prov_anchor_row=np.array([p.anchor_row for p in prov], dtype=np.int64),
        prov_shift=np.array([p.shift for p in prov], dtype=np.int64),
        prov_variant=np.array([p.variant for p in prov], dtype=np.int64),
    )


def load_dataset(path) -> LabeledDataset:
    """Read a dataset written by :func:`save_dataset`."""
    with np.load(path, allow_pickle=False) as z:
        version = int(z["version"])
        if version != _CACHE_VERSION:
            raise ContractError(f"dataset cache version {version} unsupported (expected {_CACHE_VERSION})")
        points = tuple(
            DataPoint(
                values=z["values"][i],
                label=int(z["labels"][i]),
                row_rts=z["row_rts"][i],
                normalized=bool(z["normalized"][i]),
                provenance=Provenance(
                    sample_id=str(z["prov_sample_id"][i]),
                    anchor_row=int(z["prov_anchor_row"][i]),
                    shift=int(z["prov_shift"][i]),
                    variant=int(z["prov_variant"][i]),
                ),
            )
            for i in range(z["values"].shape[0])
        )
    return LabeledDataset(points=points)
