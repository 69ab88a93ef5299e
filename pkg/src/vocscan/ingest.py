"""File formats: sample matrices, annotations, manifests, detection reports.

All artifacts are plain text so runs can be inspected and diffed:

* matrix CSV      -- header ``rt,mz_40,mz_41,...``; one row per RT point
* annotation CSV  -- header ``sample_id,label,start_rt,peak_rt,end_rt``
* detection CSV   -- header ``label,s_rt,e_rt,confidence,sample_id``
* detection JSON  -- list of objects with the same five keys
* manifest JSON   -- samples + voc_table + params, one file per run

Emitters write floats with enough digits to reparse to the exact same
value; ``parse(emit(x))`` returns a value equal to ``x``. Parsers report
the 1-based line number of the first malformed line.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    FIRST_MZ,
    AbundanceMatrix,
    GroundTruthAnnotation,
    RTAxis,
    ValidationError,
    VocScanError,
)
from .detector import Detection


class ParseError(VocScanError):
    """A file could not be parsed; carries path and 1-based line number."""

    def __init__(self, path: str | os.PathLike, line: int | None, message: str):
        self.path = os.fspath(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


# ---------------------------------------------------------------------------
# float formatting

def _fmt_float(x: float) -> str:
    """Shortest decimal string that reparses to exactly ``x``."""
    return repr(float(x))


def _fmt_rt(x: float) -> str:
    """Exact RT string, padded to at least six decimal places."""
    s = repr(float(x))
    if "e" in s or "E" in s:
        s = np.format_float_positional(np.float64(x), unique=True, trim="0")
    if "." not in s:
        s += ".0"
    whole, frac = s.split(".")
    if len(frac) < 6:
        frac += "0" * (6 - len(frac))
    return f"{whole}.{frac}"


def _parse_float(text: str, path, line: int, what: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ParseError(path, line, f"{what}: cannot parse {text!r} as a number") from None


def _parse_int(text: str, path, line: int, what: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ParseError(path, line, f"{what}: cannot parse {text!r} as an integer") from None


# ---------------------------------------------------------------------------
# sample matrices

def _matrix_header(channels: int, first_mz: int = FIRST_MZ) -> list[str]:
    return ["rt"] + [f"mz_{first_mz + i}" for i in range(channels)]


def parse_matrix(
    path: str | os.PathLike,
    *,
    sample_id: str | None = None,
    column_epoch: int = 1,
) -> AbundanceMatrix:
    """Read one sample matrix from CSV.

    The header names the channels (``rt,mz_40,mz_41,...`` with consecutive
    m/z values); every data row carries one RT point followed by one
    intensity per channel. ``sample_id`` defaults to the file stem.

    Raises
    ------
    ParseError
        Malformed header, inconsistent field count, or an unparseable or
        domain-invalid value; the message names the offending line.
    """
    path = os.fspath(path)
    with open(path, newline="", encoding="utf-8") as f:
        header_line = f.readline()
        if not header_line:
            raise ParseError(path, 1, "empty file, expected a matrix header")
        header = [h.strip() for h in header_line.strip().lstrip("﻿").split(",")]
        _validate_matrix_header(header, path)
        n_cols = len(header)
        try:
            data = np.loadtxt(f, delimiter=",", dtype=np.float64, ndmin=2)
        except ValueError:
            _locate_bad_matrix_row(path, n_cols)
            raise ParseError(path, None, "malformed matrix data") from None
    if data.size == 0:
        raise ParseError(path, 2, "matrix has a header but no data rows")
    if data.shape[1] != n_cols:
        raise ParseError(path, 2, f"expected {n_cols} fields per row, found {data.shape[1]}")
    sid = sample_id if sample_id is not None else Path(path).stem
    try:
        return AbundanceMatrix(
            values=data[:, 1:], axis=RTAxis(data[:, 0]), sample_id=sid, column_epoch=column_epoch
        )
    except ValidationError as e:
        raise ParseError(path, None, str(e)) from None


def _validate_matrix_header(header: list[str], path) -> None:
    if len(header) < 2 or header[0] != "rt":
        raise ParseError(path, 1, "matrix header must start with 'rt' and name at least one channel")
    mz = []
    for name in header[1:]:
        if not name.startswith("mz_"):
            raise ParseError(path, 1, f"channel column {name!r} must be named mz_<integer>")
        try:
            mz.append(int(name[3:]))
        except ValueError:
            raise ParseError(path, 1, f"channel column {name!r} must be named mz_<integer>") from None
    expected = list(range(mz[0], mz[0] + len(mz)))
    if mz != expected:
        raise ParseError(path, 1, "channel columns must be consecutive m/z values")


def _locate_bad_matrix_row(path, n_cols: int) -> None:
    """Re-scan a matrix file that numpy rejected to report the bad line."""
    with open(path, newline="", encoding="utf-8") as f:
        f.readline()
        for lineno, line in enumerate(f, start=2):
            if not line.strip():
                continue
            fields = line.strip().split(",")
            if len(fields) != n_cols:
                raise ParseError(path, lineno, f"expected {n_cols} fields, found {len(fields)}")
            for i, text in enumerate(fields):
                try:
                    float(text)
                except ValueError:
                    raise ParseError(
                        path, lineno, f"cannot parse {text!r} as a number (column {i + 1})"
                    ) from None


def emit_matrix(matrix: AbundanceMatrix, path: str | os.PathLike, *, first_mz: int = FIRST_MZ) -> None:
    """Write one sample matrix as CSV; reparsing restores values exactly."""
    path = os.fspath(path)
    rts = [_fmt_rt(v) for v in matrix.axis.values.tolist()]
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(",".join(_matrix_header(matrix.channels, first_mz)) + "\n")
        for rt_str, row in zip(rts, matrix.values.tolist()):
            f.write(rt_str)
            f.write(",")
            f.write(",".join(map(repr, row)))
            f.write("\n")


# ---------------------------------------------------------------------------
# annotations

_ANNOTATION_HEADER = ["sample_id", "label", "start_rt", "peak_rt", "end_rt"]


def parse_annotations(path: str | os.PathLike) -> list[GroundTruthAnnotation]:
    """Read expert annotations from CSV; an empty file (header only) gives []."""
    path = os.fspath(path)
    out: list[GroundTruthAnnotation] = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise ParseError(path, 1, "empty file, expected an annotation header")
        if [h.strip() for h in header] != _ANNOTATION_HEADER:
            raise ParseError(path, 1, f"annotation header must be {','.join(_ANNOTATION_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise ParseError(path, lineno, f"expected 5 fields, found {len(row)}")
            try:
                out.append(
                    GroundTruthAnnotation(
                        sample_id=row[0],
                        label=_parse_int(row[1], path, lineno, "label"),
                        start_rt=_parse_float(row[2], path, lineno, "start_rt"),
                        peak_rt=_parse_float(row[3], path, lineno, "peak_rt"),
                        end_rt=_parse_float(row[4], path, lineno, "end_rt"),
                    )
                )
            except ValidationError as e:
                raise ParseError(path, lineno, str(e)) from None
    return out


def emit_annotations(annotations: list[GroundTruthAnnotation], path: str | os.PathLike) -> None:
    """Write annotations as CSV in the given order."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(_ANNOTATION_HEADER)
        for a in annotations:
            w.writerow(
                [a.sample_id, a.label, _fmt_float(a.start_rt), _fmt_float(a.peak_rt), _fmt_float(a.end_rt)]
            )


# ---------------------------------------------------------------------------
# detections

_DETECTION_HEADER = ["label", "s_rt", "e_rt", "confidence", "sample_id"]


def _detection_sort_key(d: Detection):
    return (d.s_rt, d.e_rt, d.label, d.sample_id)


def _detection_format(path: str) -> str:
    if path.endswith(".json"):
        return "json"
    if path.endswith(".csv"):
        return "csv"
    raise ValidationError(f"detection reports use .csv or .json, got {path!r}")


def parse_detections(path: str | os.PathLike) -> list[Detection]:
    """Read a detection report; format chosen by extension (.csv or .json)."""
    path = os.fspath(path)
    if _detection_format(path) == "json":
        return _parse_detections_json(path)
    return _parse_detections_csv(path)


def emit_detections(detections: list[Detection], path: str | os.PathLike) -> None:
    """Write a detection report ordered by start RT; extension picks the format."""
    path = os.fspath(path)
    ordered = sorted(detections, key=_detection_sort_key)
    if _detection_format(path) == "json":
        _emit_detections_json(ordered, path)
    else:
        _emit_detections_csv(ordered, path)


def _parse_detections_csv(path: str) -> list[Detection]:
    out: list[Detection] = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise ParseError(path, 1, "empty file, expected a detection header")
        if [h.strip() for h in header] != _DETECTION_HEADER:
            raise ParseError(path, 1, f"detection header must be {','.join(_DETECTION_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise ParseError(path, lineno, f"expected 5 fields, found {len(row)}")
            try:
                out.append(
                    Detection(
                        label=_parse_int(row[0], path, lineno, "label"),
                        s_rt=_parse_float(row[1], path, lineno, "s_rt"),
                        e_rt=_parse_float(row[2], path, lineno, "e_rt"),
                        confidence=_parse_float(row[3], path, lineno, "confidence"),
                        sample_id=row[4],
                    )
                )
            except ValidationError as e:
                raise ParseError(path, lineno, str(e)) from None
    return out


def _emit_detections_csv(detections: list[Detection], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(_DETECTION_HEADER)
        for d in detections:
            w.writerow([d.label, _fmt_float(d.s_rt), _fmt_float(d.e_rt), _fmt_float(d.confidence), d.sample_id])


def _parse_detections_json(path: str) -> list[Detection]:
    with open(path, encoding="utf-8") as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(path, e.lineno, e.msg) from None
    if not isinstance(raw, list):
        raise ParseError(path, None, "detection JSON must be a list of objects")
    out = []
    for i, obj in enumerate(raw):
        try:
            out.append(
                Detection(
                    label=int(obj["label"]),
                    s_rt=float(obj["s_rt"]),
                    e_rt=float(obj["e_rt"]),
                    confidence=float(obj["confidence"]),
                    sample_id=str(obj["sample_id"]),
                )
            )
        except (KeyError, TypeError, ValueError, ValidationError) as e:
            raise ParseError(path, None, f"detection #{i}: {e}") from None
    return out


def _emit_detections_json(detections: list[Detection], path: str) -> None:
    records = [
        {"label": d.label, "s_rt": d.s_rt, "e_rt": d.e_rt, "confidence": d.confidence, "sample_id": d.sample_id}
        for d in detections
    ]
    with open(path, "w", encoding="utf-8") as f:
        json.dump(records, f, indent=2)
        f.write("\n")


# ---------------------------------------------------------------------------
# manifests

_SPLITS = ("train", "test")


@dataclass(frozen=True)
class SampleEntry:
    """One sample listed in a manifest."""

    sample_id: str
    matrix_path: str
    annotation_path: str | None = None
    participant_id: str = ""
    column_epoch: int = 1
    split: str = "train"

    def __post_init__(self) -> None:
        if not self.sample_id:
            raise ValidationError("sample_id must be non-empty")
        if not self.matrix_path:
            raise ValidationError(f"sample {self.sample_id!r}: matrix_path must be non-empty")
        if self.split not in _SPLITS:
            raise ValidationError(f"sample {self.sample_id!r}: split must be one of {_SPLITS}")
        if self.column_epoch < 1:
            raise ValidationError(f"sample {self.sample_id!r}: column_epoch must be >= 1")


@dataclass(frozen=True)
class VocTableEntry:
    """Label-to-name mapping for one target compound."""

    label: int
    name: str

    def __post_init__(self) -> None:
        if self.label < 1:
            raise ValidationError(f"voc_table label must be >= 1, got {self.label}")


@dataclass(frozen=True)
class PipelineParams:
    """Tunable pipeline parameters carried by a manifest."""

    delta: int = 80  # analysis window length in RT rows
    gamma: int = 20  # minimum consecutive same-label windows for a detection
    shifts: int = 20  # translation variants per anchor during augmentation
    intensity_variants: int = 4  # extra intensity-scaled copies per translation
    r_max: float = 0.1  # upper bound of the intensity variation factor
    seed: int = 0

    def __post_init__(self) -> None:
        if self.delta < 1:
            raise ValidationError(f"delta must be >= 1, got {self.delta}")
        if self.gamma < 1:
            raise ValidationError(f"gamma must be >= 1, got {self.gamma}")
        if self.shifts < 1:
            raise ValidationError(f"shifts must be >= 1, got {self.shifts}")
        if self.intensity_variants < 0:
            raise ValidationError(f"intensity_variants must be >= 0, got {self.intensity_variants}")
        if not (0.0 <= self.r_max):
            raise ValidationError(f"r_max must be >= 0, got {self.r_max}")
        if self.seed < 0:
            raise ValidationError(f"seed must be >= 0, got {self.seed}")


@dataclass(frozen=True)
class Manifest:
    """Everything one run needs: sample list, label table, parameters."""

    samples: tuple[SampleEntry, ...]
    voc_table: tuple[VocTableEntry, ...]
    params: PipelineParams = field(default_factory=PipelineParams)

    def __post_init__(self) -> None:
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "voc_table", tuple(self.voc_table))
        ids = [s.sample_id for s in self.samples]
        if len(set(ids)) != len(ids):
            dup = next(i for i in ids if ids.count(i) > 1)
            raise ValidationError(f"duplicate sample_id {dup!r} in manifest")
        labels = sorted(v.label for v in self.voc_table)
        if labels != list(range(1, len(labels) + 1)):
            raise ValidationError("voc_table labels must be unique and contiguous from 1")

    @property
    def n_targets(self) -> int:
        """Number of target compounds K (the negative class is extra)."""
        return len(self.voc_table)

    def split_samples(self, split: str) -> list[SampleEntry]:
        if split not in _SPLITS:
            raise ValidationError(f"split must be one of {_SPLITS}")
        return [s for s in self.samples if s.split == split]

    def label_name(self, label: int) -> str:
        for v in self.voc_table:
            if v.label == label:
                return v.name
        return f"label {label}"


def parse_manifest(path: str | os.PathLike) -> Manifest:
    """Read a manifest (JSON). Unknown keys are ignored."""
    path = os.fspath(path)
    with open(path, encoding="utf-8") as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(path, e.lineno, e.msg) from None
    if not isinstance(raw, dict):
        raise ParseError(path, None, "manifest must be a JSON object")
    try:
        samples = tuple(
            SampleEntry(
                sample_id=str(s["sample_id"]),
                matrix_path=str(s["matrix_path"]),
                annotation_path=None if s.get("annotation_path") is None else str(s["annotation_path"]),
                participant_id=str(s.get("participant_id", "")),
                column_epoch=int(s.get("column_epoch", 1)),
                split=str(s.get("split", "train")),
            )
            for s in raw.get("samples", [])
        )
        voc_table = tuple(
            VocTableEntry(label=int(v["label"]), name=str(v.get("name", f"voc_{v['label']}")))
            for v in raw.get("voc_table", [])
        )
        p = raw.get("params", {})
        defaults = PipelineParams()
        params = PipelineParams(
            delta=int(p.get("delta", defaults.delta)),
            gamma=int(p.get("gamma", defaults.gamma)),
            shifts=int(p.get("shifts", defaults.shifts)),
            intensity_variants=int(p.get("intensity_variants", defaults.intensity_variants)),
            r_max=float(p.get("r_max", defaults.r_max)),
            seed=int(p.get("seed", defaults.seed)),
        )
        return Manifest(samples=samples, voc_table=voc_table, params=params)
    except KeyError as e:
        raise ParseError(path, None, f"manifest is missing required key {e}") from None
    except (TypeError, ValueError) as e:
        raise ParseError(path, None, f"malformed manifest: {e}") from None
    except ValidationError as e:
        raise ParseError(path, None, str(e)) from None


def emit_manifest(manifest: Manifest, path: str | os.PathLike) -> None:
    """Write a manifest as JSON."""
    doc = {
        "samples": [
            {
                "sample_id": s.sample_id,
                "matrix_path": s.matrix_path,
                "annotation_path": s.annotation_path,
                "participant_id": s.participant_id,
                "column_epoch": s.column_epoch,
                "split": s.split,
            }
            for s in manifest.samples
        ],
        "voc_table": [{"label": v.label, "name": v.name} for v in manifest.voc_table],
        "params": {
            "delta": manifest.params.delta,
            "gamma": manifest.params.gamma,
            "shifts": manifest.params.shifts,
            "intensity_variants": manifest.params.intensity_variants,
            "r_max": manifest.params.r_max,
            "seed": manifest.params.seed,
        },
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def resolve_path(manifest_path: str | os.PathLike, p: str) -> str:
    """Resolve a manifest-relative path against the manifest's directory."""
    if os.path.isabs(p):
        return p
    return os.path.join(os.path.dirname(os.fspath(manifest_path)), p)


# ---------------------------------------------------------------------------
# scan dumps (debug aid)

def emit_scan(scan_result, path: str | os.PathLike) -> None:
    """Write per-window scan output as CSV: index, rt, label, confidence."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["index", "rt", "label", "confidence"])
        for i in range(len(scan_result)):
            w.writerow(
                [
                    i,
                    _fmt_float(scan_result.window_rt(i)),
                    int(scan_result.labels[i]),
                    _fmt_float(scan_result.confidences[i]),
                ]
            )
