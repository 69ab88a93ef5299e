"""Detection rules: turn per-window labels into a final detection list.

Three rules run in order:

1. duration rule  -- keep maximal constant-label runs of at least gamma
   windows (label > 0); each becomes a candidate detection whose
   interval spans the middle rows of its first and last window and whose
   confidence is the best gamma-long moving average of the run's window
   confidences.
2. order rule     -- drop a candidate when three candidates with
   distinct smaller labels start at or after it, or three with distinct
   larger labels start at or before it (target compounds elute in label
   order, so such a candidate contradicts the expected sequence).
   Applied once against the full candidate set, not iterated.
3. uniqueness rule -- keep at most one detection per label: the highest
   confidence, ties toward smaller start RT, then smaller end RT.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import AbundanceMatrix, ContractError, ValidationError
from .classifier import ClassifierModel
from .scanner import DEFAULT_BATCH, ScanResult, scan as _scan


@dataclass(frozen=True)
class Detection:
    """One detected compound instance.

    ``start_index``/``run_length`` locate the window run inside the scan
    (absent on records read back from report files or merged across
    models); they are excluded from equality so a round-tripped
    detection equals its source.
    """

    label: int
    s_rt: float
    e_rt: float
    confidence: float
    sample_id: str = ""
    start_index: int | None = field(default=None, compare=False)
    run_length: int | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.label < 1:
            raise ValidationError(f"detection label must be >= 1, got {self.label}")
        if not self.s_rt <= self.e_rt:
            raise ValidationError(f"detection interval must satisfy s_rt <= e_rt, got ({self.s_rt}, {self.e_rt})")
        if not 0.0 < self.confidence <= 1.0:
            raise ValidationError(f"detection confidence must lie in (0, 1], got {self.confidence}")

    @property
    def interval(self) -> tuple[float, float]:
        return (float(self.s_rt), float(self.e_rt))


@dataclass(frozen=True)
class DetectionStages:
    """All three rule outputs for one sample, outermost last."""

    candidates: tuple[Detection, ...]  # after the duration rule
    order_filtered: tuple[Detection, ...]  # after the order rule
    final: tuple[Detection, ...]  # after the uniqueness rule, sorted by start RT


def detection_confidence(confidences: np.ndarray, gamma: int) -> float:
    """Best gamma-long moving average over a run's window confidences."""
    confidences = np.asarray(confidences, dtype=np.float64)
    if confidences.ndim != 1:
        raise ContractError(f"expected a 1-D confidence slice, got shape {confidences.shape}")
    if gamma < 1:
        raise ContractError(f"gamma must be >= 1, got {gamma}")
    n = confidences.shape[0]
    if n < gamma:
        raise ContractError(f"run length {n} is shorter than gamma {gamma}")
    means = np.lib.stride_tricks.sliding_window_view(confidences, gamma).mean(axis=1)
    return float(means.max())


def duration_rule(scan_result: ScanResult, gamma: int = 20) -> list[Detection]:
    """Candidate detections: maximal same-label runs of >= gamma windows.

    A run of windows [l, l + n) labeled j > 0 becomes a Detection with
    ``s_rt``/``e_rt`` the RTs of the first and last window (middle-row
    convention) and confidence from :func:`detection_confidence`.
    Candidates come out ordered by start index.
    """
    if gamma < 1:
        raise ContractError(f"gamma must be >= 1, got {gamma}")
    labels = scan_result.labels
    out: list[Detection] = []
    n = len(scan_result)
    boundaries = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [n]])
    for start, end in zip(map(int, starts), map(int, ends)):
        label = int(labels[start])
        length = end - start
        if label == 0 or length < gamma:
            continue
        out.append(
            Detection(
                label=label,
                s_rt=scan_result.window_rt(start),
                e_rt=scan_result.window_rt(end - 1),
                confidence=detection_confidence(scan_result.confidences[start:end], gamma),
                sample_id=scan_result.sample_id,
                start_index=start,
                run_length=length,
            )
        )
    return out


def order_rule(candidates: list[Detection]) -> list[Detection]:
    """Drop candidates that contradict the expected elution order.

    A candidate with label f is removed when the *original* list holds
    detections of three distinct labels below f all starting at or after
    it, or of three distinct labels above f all starting at or before
    it. One-shot: removed candidates still count as witnesses for
    others. Start-RT comparisons are non-strict.
    """
    kept = []
    for d in candidates:
        later_smaller = {o.label for o in candidates if o.label < d.label and o.s_rt >= d.s_rt}
        earlier_larger = {o.label for o in candidates if o.label > d.label and o.s_rt <= d.s_rt}
        if len(later_smaller) < 3 and len(earlier_larger) < 3:
            kept.append(d)
    return kept


def uniqueness_rule(detections: list[Detection]) -> list[Detection]:
    """Keep one detection per label: max confidence, ties to earlier interval.

    Output is sorted by start RT (then label for exact ties).
    """
    best: dict[int, Detection] = {}
    for d in detections:
        cur = best.get(d.label)
        if cur is None or (-d.confidence, d.s_rt, d.e_rt) < (-cur.confidence, cur.s_rt, cur.e_rt):
            best[d.label] = d
    return sorted(best.values(), key=lambda d: (d.s_rt, d.label))


def run_rules(scan_result: ScanResult, gamma: int = 20) -> DetectionStages:
    """Apply all three rules to one scan, keeping every stage's output."""
    candidates = duration_rule(scan_result, gamma)
    ordered = order_rule(candidates)
    final = uniqueness_rule(ordered)
    return DetectionStages(
        candidates=tuple(candidates), order_filtered=tuple(ordered), final=tuple(final)
    )


def detect(
    matrix: AbundanceMatrix,
    model: ClassifierModel,
    gamma: int = 20,
    *,
    delta: int | None = None,
    batch_size: int = DEFAULT_BATCH,
    workers: int = 1,
) -> list[Detection]:
    """Scan a sample and reduce it to the final detection list.

    Equivalent to ``uniqueness_rule(order_rule(duration_rule(scan(...))))``;
    at most one detection per label, sorted by start RT.
    """
    scan_result = _scan(matrix, model, delta, batch_size=batch_size, workers=workers)
    return list(run_rules(scan_result, gamma).final)


def tic_trace(matrix: AbundanceMatrix, detections: list[Detection]) -> dict:
    """Total-ion-current trace plus detection spans, for external plotting."""
    return {
        "sample_id": matrix.sample_id,
        "rt": matrix.axis.values.tolist(),
        "tic": matrix.values.sum(axis=1).tolist(),
        "detections": [
            {"label": d.label, "s_rt": d.s_rt, "e_rt": d.e_rt, "confidence": d.confidence}
            for d in detections
        ],
    }
