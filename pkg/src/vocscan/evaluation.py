"""Evaluation of detection output against expert annotations.

Two protocols are computed:

1. localization + classification -- a final detection is a true
   positive when its label matches an annotation of the same sample and
   the detection interval overlaps the annotated elution interval.
2. presence-only -- per (sample, label), only presence/absence is
   compared, which allows counting true negatives.

Because expert annotations themselves miss compounds, unmatched
detections are triaged further ("tentative" analysis): a false positive
whose interval intersects the label's historical RT range (from the
training annotations) is a tentative true positive, and an annotation
missed by the system whose label has such a tentative positive in the
same sample is a tentative true negative. Metrics are reported under
both readings: "expert" takes the annotations as complete truth,
"corrected" counts the tentative calls as correct.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import ContractError, GroundTruthAnnotation, intervals_overlap
from .detector import Detection


class EvaluationWarning(UserWarning):
    """A metric could not be fully grounded (missing range, empty class...)."""


# ---------------------------------------------------------------------------
# RT ranges

@dataclass(frozen=True)
class RTRangeTable:
    """Per (label, column epoch): [min, max] of training peak RTs."""

    entries: dict[tuple[int, int], tuple[float, float]]

    def get(self, label: int, column_epoch: int = 1) -> tuple[float, float] | None:
        return self.entries.get((label, column_epoch))

    def max_length(self) -> float:
        """Longest range in the table (0 when empty)."""
        if not self.entries:
            return 0.0
        return max(hi - lo for lo, hi in self.entries.values())

    def __len__(self) -> int:
        return len(self.entries)


def build_rt_ranges(
    annotations: Sequence[GroundTruthAnnotation],
    *,
    epoch_by_sample: Mapping[str, int] | None = None,
) -> RTRangeTable:
    """Collect [min peak RT, max peak RT] per label and column epoch.

    ``epoch_by_sample`` maps sample ids to their GC column epoch
    (defaults to epoch 1 for every sample). Only labels present in
    ``annotations`` get an entry.
    """
    acc: dict[tuple[int, int], tuple[float, float]] = {}
    for a in annotations:
        epoch = 1 if epoch_by_sample is None else int(epoch_by_sample.get(a.sample_id, 1))
        key = (a.label, epoch)
        cur = acc.get(key)
        if cur is None:
            acc[key] = (a.peak_rt, a.peak_rt)
        else:
            acc[key] = (min(cur[0], a.peak_rt), max(cur[1], a.peak_rt))
    return RTRangeTable(entries=acc)


# ---------------------------------------------------------------------------
# protocol 1: localization + classification

@dataclass(frozen=True)
class MatchResult:
    """Protocol-1 outcome for one sample."""

    tp: tuple[Detection, ...]
    fp: tuple[Detection, ...]
    fn: tuple[GroundTruthAnnotation, ...]


def _check_unique_labels(items, what: str, sample_id: str) -> None:
    labels = [x.label for x in items]
    if len(set(labels)) != len(labels):
        dup = next(l for l in labels if labels.count(l) > 1)
        raise ContractError(f"sample {sample_id!r}: duplicate {what} for label {dup}")


def match_protocol1(
    detections: Sequence[Detection], annotations: Sequence[GroundTruthAnnotation]
) -> MatchResult:
    """Match final detections against annotations by label and interval overlap.

    A detection is a true positive when an annotation of the same label
    exists and the intervals intersect; otherwise it is a false
    positive. Every annotation without a true positive is a false
    negative. Expects at most one detection and one annotation per label
    (the uniqueness rule and the one-elution-per-compound property).
    """
    sample_id = detections[0].sample_id if detections else (
        annotations[0].sample_id if annotations else ""
    )
    _check_unique_labels(detections, "detection", sample_id)
    _check_unique_labels(annotations, "annotation", sample_id)
    ann_by_label = {a.label: a for a in annotations}
    tp, fp = [], []
    matched_labels = set()
    for d in detections:
        a = ann_by_label.get(d.label)
        if a is not None and intervals_overlap(d.interval, a.interval):
            tp.append(d)
            matched_labels.add(d.label)
        else:
            fp.append(d)
    fn = tuple(a for a in annotations if a.label not in matched_labels)
    return MatchResult(tp=tuple(tp), fp=tuple(fp), fn=fn)


# ---------------------------------------------------------------------------
# tentative analysis (pre-filter detections vs. historical RT ranges)

@dataclass(frozen=True)
class TentativeResult:
    """Triage of one sample's pre-filter detections and missed annotations.

    ``matched`` are pre-filter detections that agree with an annotation
    (they are not false positives at any level and are tallied nowhere);
    ``tentative_tp`` intersect their label's RT range; ``certain_fp`` do
    not (or have no range to check -- those labels are listed in
    ``unverifiable_labels``). Missed annotations split into
    ``tentative_tn`` (label has a tentative positive in this sample) and
    ``semi_certain_fn``.
    """

    matched: tuple[Detection, ...]
    tentative_tp: tuple[Detection, ...]
    certain_fp: tuple[Detection, ...]
    tentative_tn: tuple[GroundTruthAnnotation, ...]
    semi_certain_fn: tuple[GroundTruthAnnotation, ...]
    unverifiable_labels: tuple[int, ...]


def tentative_analysis(
    prefilter: Sequence[Detection],
    annotations: Sequence[GroundTruthAnnotation],
    ranges: RTRangeTable,
    *,
    column_epoch: int = 1,
    fn_annotations: Sequence[GroundTruthAnnotation] | None = None,
) -> TentativeResult:
    """Triage pre-filter detections that expert annotations do not confirm.

    Runs on the duration-rule output (before order/uniqueness filtering),
    where the system's raw calls live. ``fn_annotations`` should be the
    protocol-1 false negatives of the same sample (computed on the final
    detections); when omitted they are derived from ``prefilter`` itself.
    A detection whose label has no RT range for this epoch cannot be
    verified and is counted as a certain false positive with a warning.
    """
    _check_unique_labels(annotations, "annotation", annotations[0].sample_id if annotations else "")
    ann_by_label = {a.label: a for a in annotations}
    matched, tentative_tp, certain_fp = [], [], []
    unverifiable: list[int] = []
    for d in prefilter:
        a = ann_by_label.get(d.label)
        if a is not None and intervals_overlap(d.interval, a.interval):
            matched.append(d)
            continue
        r = ranges.get(d.label, column_epoch)
        if r is None:
            warnings.warn(
                f"no RT range for label {d.label} (column epoch {column_epoch}); "
                f"counting its detection as a certain false positive",
                EvaluationWarning,
                stacklevel=2,
            )
            unverifiable.append(d.label)
            certain_fp.append(d)
        elif intervals_overlap(d.interval, r):
            tentative_tp.append(d)
        else:
            certain_fp.append(d)
    if fn_annotations is None:
        matched_labels = {d.label for d in matched}
        fn_annotations = [a for a in annotations if a.label not in matched_labels]
    ttp_labels = {d.label for d in tentative_tp}
    tentative_tn = tuple(a for a in fn_annotations if a.label in ttp_labels)
    semi_certain_fn = tuple(a for a in fn_annotations if a.label not in ttp_labels)
    return TentativeResult(
        matched=tuple(matched),
        tentative_tp=tuple(tentative_tp),
        certain_fp=tuple(certain_fp),
        tentative_tn=tentative_tn,
        semi_certain_fn=semi_certain_fn,
        unverifiable_labels=tuple(unverifiable),
    )


# ---------------------------------------------------------------------------
# protocol 2: presence only

@dataclass(frozen=True)
class PresenceResult:
    """Per-sample presence/absence tallies over the whole label universe."""

    tn: int
    fp_star: int
    ttp_star: int


def presence_protocol2(
    detections: Sequence[Detection],
    annotations: Sequence[GroundTruthAnnotation],
    ranges: RTRangeTable,
    n_targets: int,
    *,
    column_epoch: int = 1,
) -> PresenceResult:
    """Presence-only comparison per (sample, label).

    A label absent in both system output and annotations is a true
    negative. A label the system reports but the expert does not is a
    starred tentative true positive when some detection of it lies in
    its RT range, else a starred false positive. Labels the expert
    annotated are not tallied here (they belong to protocol 1).
    """
    if n_targets < 1:
        raise ContractError(f"n_targets must be >= 1, got {n_targets}")
    det_by_label: dict[int, list[Detection]] = {}
    for d in detections:
        det_by_label.setdefault(d.label, []).append(d)
    gt_labels = {a.label for a in annotations}
    tn = fp_star = ttp_star = 0
    for label in range(1, n_targets + 1):
        system = det_by_label.get(label, [])
        expert = label in gt_labels
        if not system and not expert:
            tn += 1
        elif system and not expert:
            r = ranges.get(label, column_epoch)
            if r is not None and any(intervals_overlap(d.interval, r) for d in system):
                ttp_star += 1
            else:
                fp_star += 1
    return PresenceResult(tn=tn, fp_star=fp_star, ttp_star=ttp_star)


# ---------------------------------------------------------------------------
# random-overlap bound

def random_overlap_bound(
    ranges: RTRangeTable, prefilter: Sequence[Detection], rt_span_minutes: float
) -> float:
    """Upper bound on the probability that a random detection lands in range.

    With the longest RT range and the longest detection interval over
    the run, the bound is (max range + max interval) / (span - max
    interval). Puts the tentative-positive counts in perspective: a
    small bound means in-range detections are unlikely to be chance.
    """
    max_di = max((d.e_rt - d.s_rt for d in prefilter), default=0.0)
    if not rt_span_minutes > max_di:
        raise ContractError(
            f"RT span {rt_span_minutes} must exceed the longest detection interval {max_di}"
        )
    return (ranges.max_length() + max_di) / (rt_span_minutes - max_di)


# ---------------------------------------------------------------------------
# average precision

def average_precision(
    records: Sequence[tuple[Detection, bool]], gt_count: int
) -> float | None:
    """AP of one label: step integral of precision over recall.

    ``records`` pair each detection of the label (across all test
    samples) with its protocol-1 true-positive flag. Ranking is by
    confidence descending, ties by sample id then start RT. With zero
    ground truth recall is undefined; returns None with a warning.
    """
    if gt_count < 0:
        raise ContractError(f"gt_count must be >= 0, got {gt_count}")
    if gt_count == 0:
        warnings.warn(
            "average precision undefined for a label with zero ground truth",
            EvaluationWarning,
            stacklevel=2,
        )
        return None
    order = sorted(records, key=lambda r: (-r[0].confidence, r[0].sample_id, r[0].s_rt))
    tp_seen = 0
    ap = 0.0
    prev_recall = 0.0
    for n, (_, is_tp) in enumerate(order, start=1):
        if is_tp:
            tp_seen += 1
        recall = tp_seen / gt_count
        ap += (recall - prev_recall) * (tp_seen / n)
        prev_recall = recall
    return ap


# ---------------------------------------------------------------------------
# model consensus

def intersect_models(model_detections: Sequence[Sequence[Detection]]) -> list[Detection]:
    """Keep detections consistent across all models (label + interval).

    A (sample, label) pair survives when every model reports it and all
    detection intervals pairwise intersect; for intervals on a line that
    is the same as sharing a common point, so the consensus interval is
    [max of starts, min of ends] and the confidence is the member mean.
    Expects post-uniqueness lists (one detection per label per sample).
    """
    if len(model_detections) < 2:
        raise ContractError(f"need at least 2 model outputs, got {len(model_detections)}")
    keyed: list[dict[tuple[str, int], Detection]] = []
    for detections in model_detections:
        by_key: dict[tuple[str, int], Detection] = {}
        for d in detections:
            key = (d.sample_id, d.label)
            if key in by_key:
                raise ContractError(
                    f"sample {d.sample_id!r}: multiple detections of label {d.label} in one model list"
                )
            by_key[key] = d
        keyed.append(by_key)
    common = set(keyed[0])
    for by_key in keyed[1:]:
        common &= set(by_key)
    out = []
    for key in sorted(common):
        members = [by_key[key] for by_key in keyed]
        lo = max(d.s_rt for d in members)
        hi = min(d.e_rt for d in members)
        if lo <= hi:
            out.append(
                Detection(
                    label=key[1],
                    s_rt=lo,
                    e_rt=hi,
                    confidence=sum(d.confidence for d in members) / len(members),
                    sample_id=key[0],
                )
            )
    return sorted(out, key=lambda d: (d.sample_id, d.s_rt, d.label))


# ---------------------------------------------------------------------------
# report

@dataclass(frozen=True)
class EvaluationReport:
    """All tallies and metrics of one evaluation run.

    ``fn`` counts only the semi-certain false negatives; the raw
    protocol-1 miss count is ``fn + ttn``. Metrics with an empty
    denominator are None (undefined), never silently zero.
    """

    tp: int
    ttp: int
    fp: int
    ttn: int
    fn: int
    tn: int
    fp_star: int
    ttp_star: int
    ap: dict[int, float | None]
    mean_ap: float | None
    sensitivity_expert: float | None
    sensitivity_corrected: float | None
    specificity_expert: float | None
    specificity_corrected: float | None
    p_max: float | None = None
    per_sample: dict[str, dict[str, int]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in ("tp", "ttp", "fp", "ttn", "fn", "tn", "fp_star", "ttp_star"):
            if getattr(self, name) < 0:
                raise ContractError(f"tally {name} must be >= 0")
        for name in (
            "sensitivity_expert",
            "sensitivity_corrected",
            "specificity_expert",
            "specificity_corrected",
        ):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ContractError(f"{name} must lie in [0, 1], got {v}")


def _ratio(num: int | float, den: int | float) -> float | None:
    return None if den == 0 else num / den


def summarize(
    *,
    tp: int,
    ttp: int,
    fp: int,
    ttn: int,
    fn: int,
    tn: int,
    fp_star: int,
    ttp_star: int,
    ap: Mapping[int, float | None],
    p_max: float | None = None,
    per_sample: Mapping[str, Mapping[str, int]] | None = None,
) -> EvaluationReport:
    """Assemble the report and derive all metrics from the tallies.

    Expert metrics take annotations as complete truth: sensitivity
    tp/(tp+fn+ttn), specificity tn/(tn+fp*+ttp*). Corrected metrics
    count tentative calls as correct: sensitivity (tp+ttp)/(tp+ttp+fn),
    specificity tn/(tn+fp*). The mean AP averages the defined per-label
    APs only.
    """
    defined = [v for v in ap.values() if v is not None]
    return EvaluationReport(
        tp=tp,
        ttp=ttp,
        fp=fp,
        ttn=ttn,
        fn=fn,
        tn=tn,
        fp_star=fp_star,
        ttp_star=ttp_star,
        ap=dict(ap),
        mean_ap=float(np.mean(defined)) if defined else None,
        sensitivity_expert=_ratio(tp, tp + fn + ttn),
        sensitivity_corrected=_ratio(tp + ttp, tp + ttp + fn),
        specificity_expert=_ratio(tn, tn + fp_star + ttp_star),
        specificity_corrected=_ratio(tn, tn + fp_star),
        p_max=p_max,
        per_sample={k: dict(v) for k, v in (per_sample or {}).items()},
    )


@dataclass(frozen=True)
class SampleDetections:
    """Evaluation input for one test sample."""

    sample_id: str
    final: tuple[Detection, ...]
    prefilter: tuple[Detection, ...]
    annotations: tuple[GroundTruthAnnotation, ...]
    column_epoch: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "final", tuple(self.final))
        object.__setattr__(self, "prefilter", tuple(self.prefilter))
        object.__setattr__(self, "annotations", tuple(self.annotations))


def evaluate(
    samples: Sequence[SampleDetections],
    ranges: RTRangeTable,
    n_targets: int,
    *,
    rt_span_minutes: float | None = None,
) -> EvaluationReport:
    """Run both protocols over all test samples and assemble the report.

    ``ranges`` must come from the *training* annotations. When
    ``rt_span_minutes`` (the longest sample's RT extent) is given, the
    random-overlap bound is included.
    """
    if n_targets < 1:
        raise ContractError(f"n_targets must be >= 1, got {n_targets}")
    tallies = dict(tp=0, ttp=0, fp=0, ttn=0, fn=0, tn=0, fp_star=0, ttp_star=0)
    per_sample: dict[str, dict[str, int]] = {}
    ap_records: dict[int, list[tuple[Detection, bool]]] = {j: [] for j in range(1, n_targets + 1)}
    gt_counts: dict[int, int] = {j: 0 for j in range(1, n_targets + 1)}
    all_prefilter: list[Detection] = []
    for s in samples:
        matched = match_protocol1(s.final, s.annotations)
        tentative = tentative_analysis(
            s.prefilter,
            s.annotations,
            ranges,
            column_epoch=s.column_epoch,
            fn_annotations=matched.fn,
        )
        presence = presence_protocol2(
            s.final, s.annotations, ranges, n_targets, column_epoch=s.column_epoch
        )
        counts = dict(
            tp=len(matched.tp),
            ttp=len(tentative.tentative_tp),
            fp=len(tentative.certain_fp),
            ttn=len(tentative.tentative_tn),
            fn=len(tentative.semi_certain_fn),
            tn=presence.tn,
            fp_star=presence.fp_star,
            ttp_star=presence.ttp_star,
        )
        per_sample[s.sample_id] = counts
        for k, v in counts.items():
            tallies[k] += v
        tp_labels = {d.label for d in matched.tp}
        for d in s.final:
            if 1 <= d.label <= n_targets:
                ap_records[d.label].append((d, d.label in tp_labels))
        for a in s.annotations:
            if 1 <= a.label <= n_targets:
                gt_counts[a.label] += 1
        all_prefilter.extend(s.prefilter)
    ap = {j: average_precision(ap_records[j], gt_counts[j]) for j in range(1, n_targets + 1)}
    p_max = None
    if rt_span_minutes is not None:
        p_max = random_overlap_bound(ranges, all_prefilter, rt_span_minutes)
    return summarize(**tallies, ap=ap, p_max=p_max, per_sample=per_sample)


def report_to_dict(report: EvaluationReport) -> dict:
    """JSON-serializable view of a report."""
    return {
        "tallies": {
            "tp": report.tp,
            "ttp": report.ttp,
            "fp": report.fp,
            "ttn": report.ttn,
            "fn": report.fn,
            "tn": report.tn,
            "fp_star": report.fp_star,
            "ttp_star": report.ttp_star,
        },
        "ap": {str(k): v for k, v in sorted(report.ap.items())},
        "mean_ap": report.mean_ap,
        "sensitivity": {
            "expert": report.sensitivity_expert,
            "corrected": report.sensitivity_corrected,
        },
        "specificity": {
            "expert": report.specificity_expert,
            "corrected": report.specificity_corrected,
        },
        "p_max": report.p_max,
        "per_sample": report.per_sample,
    }


def report_from_dict(doc: dict) -> EvaluationReport:
    """Rebuild a report from :func:`report_to_dict` output."""
    t = doc["tallies"]
    return EvaluationReport(
        tp=t["tp"],
        ttp=t["ttp"],
        fp=t["fp"],
        ttn=t["ttn"],
        fn=t["fn"],
        tn=t["tn"],
        fp_star=t["fp_star"],
        ttp_star=t["ttp_star"],
        ap={int(k): v for k, v in doc.get("ap", {}).items()},
        mean_ap=doc.get("mean_ap"),
        sensitivity_expert=doc["sensitivity"]["expert"],
        sensitivity_corrected=doc["sensitivity"]["corrected"],
        specificity_expert=doc["specificity"]["expert"],
        specificity_corrected=doc["specificity"]["corrected"],
        p_max=doc.get("p_max"),
        per_sample=doc.get("per_sample", {}),
    )


def _fmt_metric(v: float | None) -> str:
    return "undefined" if v is None else f"{v:.4f}"


def render_report(report: EvaluationReport, label_names: Mapping[int, str] | None = None) -> str:
    """Human-readable summary table."""
    lines = []
    lines.append("detection tallies")
    lines.append(
        f"  TP {report.tp}  TTP {report.ttp}  FP {report.fp}  TTN {report.ttn}  FN {report.fn}"
    )
    lines.append(f"  TN {report.tn}  FP* {report.fp_star}  TTP* {report.ttp_star}")
    lines.append("metrics")
    lines.append(
        f"  sensitivity  expert {_fmt_metric(report.sensitivity_expert)}"
        f"  corrected {_fmt_metric(report.sensitivity_corrected)}"
    )
    lines.append(
        f"  specificity  expert {_fmt_metric(report.specificity_expert)}"
        f"  corrected {_fmt_metric(report.specificity_corrected)}"
    )
    lines.append(f"  mean AP {_fmt_metric(report.mean_ap)}")
    if report.p_max is not None:
        lines.append(f"  random-overlap bound {report.p_max:.4f}")
    lines.append("average precision per label")
    for label in sorted(report.ap):
        name = label_names.get(label, f"label {label}") if label_names else f"label {label}"
        lines.append(f"  {label:>3} {name}: {_fmt_metric(report.ap[label])}")
    return "\n".join(lines)
