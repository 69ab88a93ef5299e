"""Synthetic GC-MS sample generator with known ground truth.

Builds abundance matrices whose target compounds are Gaussian elution
peaks with fixed ion patterns, so the full pipeline (extraction,
training, scanning, detection, evaluation) can be exercised and verified
without access to clinical data. Generated difficulty mirrors the hard
cases a real panel contains: a pair of compounds sharing top ions, a
pair with overlapping retention-time ranges, and a low-abundance
compound near the noise floor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    AbundanceMatrix,
    ContractError,
    GroundTruthAnnotation,
    RTAxis,
    ValidationError,
    VocScanError,
    derive_rng,
)

# Streams for derive_rng: keep template and sample draws independent
# even when both are fed the same seed.
_STREAM_TEMPLATES = 0
_STREAM_SAMPLE = 1


class ConfigError(VocScanError):
    """Generator inputs are inconsistent (geometry, duplicate labels...)."""


@dataclass(frozen=True)
class VocTemplate:
    """Recipe for one synthetic target compound.

    Parameters
    ----------
    label : int
        Class label (>= 1).
    ion_pattern : tuple of (channel, relative abundance)
        Channels the compound fragments into. Abundances are scaled at
        construction so the strongest ion is exactly 1.
    rt_center_range : (float, float)
        Interval (minutes) the elution apex is drawn from.
    elution_sigma : float
        Gaussian peak width (minutes); elution spans apex +- 3 sigma.
    amplitude_range : (float, float)
        Interval the apex intensity of the strongest ion is drawn from.
    """

    label: int
    ion_pattern: tuple[tuple[int, float], ...]
    rt_center_range: tuple[float, float]
    elution_sigma: float
    amplitude_range: tuple[float, float]

    def __post_init__(self) -> None:
        if self.label < 1:
            raise ValidationError(f"template label must be >= 1, got {self.label}")
        if not self.ion_pattern:
            raise ValidationError("ion_pattern must list at least one channel")
        channels = [ch for ch, _ in self.ion_pattern]
        if len(set(channels)) != len(channels):
            raise ValidationError(f"label {self.label}: duplicate channel in ion_pattern")
        if min(channels) < 0:
            raise ValidationError(f"label {self.label}: negative channel index")
        rels = np.array([r for _, r in self.ion_pattern], dtype=np.float64)
        if np.any(rels <= 0) or not np.all(np.isfinite(rels)):
            raise ValidationError(f"label {self.label}: relative abundances must be positive")
        rels = rels / rels.max()
        object.__setattr__(
            self, "ion_pattern", tuple((int(ch), float(r)) for (ch, _), r in zip(self.ion_pattern, rels))
        )
        lo, hi = self.rt_center_range
        if not (0 < lo <= hi):
            raise ValidationError(f"label {self.label}: rt_center_range must satisfy 0 < min <= max")
        if self.elution_sigma <= 0:
            raise ValidationError(f"label {self.label}: elution_sigma must be > 0")
        alo, ahi = self.amplitude_range
        if not (0 < alo <= ahi):
            raise ValidationError(f"label {self.label}: amplitude_range must satisfy 0 < min <= max")

    @property
    def top_channels(self) -> tuple[int, ...]:
        """Channels ordered by decreasing relative abundance."""
        return tuple(ch for ch, _ in sorted(self.ion_pattern, key=lambda p: (-p[1], p[0])))


@dataclass(frozen=True)
class SynthConfig:
    """Geometry and noise model of one generated sample."""

    R: int = 6000  # RT rows
    C: int = 64  # m/z channels
    rt_step: float = 1.0 / 375.0  # minutes per row
    baseline_level: float = 2.0
    noise_sigma: float = 1.0
    rng_seed: int = 0
    delta: int = 80  # analysis window rows; bounds the allowed elution width

    def __post_init__(self) -> None:
        if self.R < self.delta:
            raise ValidationError(f"R={self.R} is smaller than the analysis window delta={self.delta}")
        if self.C < 1:
            raise ValidationError(f"C must be >= 1, got {self.C}")
        if self.rt_step <= 0:
            raise ValidationError(f"rt_step must be > 0, got {self.rt_step}")
        if self.noise_sigma < 0:
            raise ValidationError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.baseline_level < 0:
            raise ValidationError(f"baseline_level must be >= 0, got {self.baseline_level}")
        if self.delta < 21:
            raise ValidationError(f"delta must leave translation slack, got {self.delta}")

    def axis(self) -> RTAxis:
        """RT axis: row i (0-based) at (i + 1) * rt_step minutes."""
        return RTAxis((np.arange(self.R, dtype=np.float64) + 1.0) * self.rt_step)


def _elution_rows(sigma: float, cfg: SynthConfig) -> int:
    """Rows spanned by an elution of width +-3 sigma."""
    return int(math.floor(6.0 * sigma / cfg.rt_step)) + 1


def _check_template_fits(t: VocTemplate, cfg: SynthConfig, axis: RTAxis) -> None:
    if any(ch >= cfg.C for ch, _ in t.ion_pattern):
        bad = max(ch for ch, _ in t.ion_pattern)
        raise ConfigError(f"label {t.label}: ion channel {bad} outside the {cfg.C} configured channels")
    lo, hi = t.rt_center_range
    if lo - 3.0 * t.elution_sigma < float(axis[0]) or hi + 3.0 * t.elution_sigma > float(axis[-1]):
        raise ConfigError(
            f"label {t.label}: rt_center_range +- 3 sigma exceeds the sample RT span "
            f"[{float(axis[0]):.4f}, {float(axis[-1]):.4f}]"
        )
    max_rows = cfg.delta - 19
    if _elution_rows(t.elution_sigma, cfg) > max_rows:
        raise ConfigError(
            f"label {t.label}: elution spans {_elution_rows(t.elution_sigma, cfg)} rows, "
            f"more than the {max_rows} that fit a delta={cfg.delta} window with translation slack"
        )


def synth_sample(
    templates: list[VocTemplate],
    presence: list[bool],
    cfg: SynthConfig,
    *,
    sample_id: str = "synthetic",
    column_epoch: int = 1,
) -> tuple[AbundanceMatrix, list[GroundTruthAnnotation]]:
    """Generate one sample containing the present templates' peaks.

    For each present template the elution apex RT and amplitude are drawn
    uniformly from the template's ranges, then
    ``amplitude * rel_abundance * exp(-(rt - apex)^2 / (2 sigma^2))`` is
    added to each of its channels over the whole RT axis. Baseline level
    plus zero-mean Gaussian noise (clipped at 0) covers the entire
    matrix. Annotations mark apex -+ 3 sigma. Deterministic given
    ``cfg.rng_seed``.

    Raises
    ------
    ContractError
        ``presence`` length does not match ``templates``.
    ConfigError
        Two present templates share a label, or a template's geometry
        does not fit the configured sample.
    """
    if len(presence) != len(templates):
        raise ContractError(f"presence has {len(presence)} entries for {len(templates)} templates")
    axis = cfg.axis()
    present = [t for t, p in zip(templates, presence) if p]
    labels = [t.label for t in present]
    if len(set(labels)) != len(labels):
        dup = next(l for l in labels if labels.count(l) > 1)
        raise ConfigError(f"label {dup} would elute more than once in one sample")
    for t in present:
        _check_template_fits(t, cfg, axis)

    rng = derive_rng(cfg.rng_seed, _STREAM_SAMPLE)
    values = np.zeros((cfg.R, cfg.C), dtype=np.float64)
    annotations: list[GroundTruthAnnotation] = []
    rt = axis.values
    for t in present:
        center = float(rng.uniform(*t.rt_center_range))
        amplitude = float(rng.uniform(*t.amplitude_range))
        shape = np.exp(-((rt - center) ** 2) / (2.0 * t.elution_sigma**2))
        for ch, rel in t.ion_pattern:
            values[:, ch] += amplitude * rel * shape
        annotations.append(
            GroundTruthAnnotation(
                sample_id=sample_id,
                label=t.label,
                start_rt=center - 3.0 * t.elution_sigma,
                peak_rt=center,
                end_rt=center + 3.0 * t.elution_sigma,
            )
        )
    values += cfg.baseline_level
    if cfg.noise_sigma > 0:
        values += rng.normal(0.0, cfg.noise_sigma, size=values.shape)
    np.clip(values, 0.0, None, out=values)
    matrix = AbundanceMatrix(values=values, axis=axis, sample_id=sample_id, column_epoch=column_epoch)
    return matrix, annotations


def default_template_set(k: int, cfg: SynthConfig) -> list[VocTemplate]:
    """Build ``k`` templates with labels 1..k in elution order.

    The set bakes in the hard cases a detector must survive: labels 1
    and 2 share three of their five strongest ions *and* have
    intersecting rt_center_ranges, and the last label is low-amplitude
    (near the noise floor). Requires ``k >= 2`` for the pairs to exist;
    ``k = 1`` yields a single plain template. Deterministic given
    ``cfg.rng_seed``.
    """
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    if cfg.C < 5:
        raise ConfigError(f"default templates need at least 5 channels, cfg has {cfg.C}")
    rng = derive_rng(cfg.rng_seed, _STREAM_TEMPLATES)
    axis = cfg.axis()
    sigma_cap = (cfg.delta - 20) * cfg.rt_step / 6.0
    sigmas = rng.uniform(0.45 * sigma_cap, 0.95 * sigma_cap, size=k)

    # Usable apex span: keep apex +- 3 sigma plus the full translated
    # window inside the matrix.
    margin = (cfg.delta + 12) * cfg.rt_step + 3.0 * sigma_cap
    lo = float(axis[0]) + margin
    hi = float(axis[-1]) - margin
    if hi <= lo:
        raise ConfigError(f"sample of {cfg.R} rows is too short to place {k} templates")
    spacing = (hi - lo) / k
    half = 0.18 * spacing
    ranges = [(lo + (j + 0.5) * spacing - half, lo + (j + 0.5) * spacing + half) for j in range(k)]
    if k >= 2:
        # Overlapping pair: label 2's range starts inside label 1's.
        ranges[1] = (ranges[0][1] - half, ranges[1][1])

    n_ions = 5
    patterns: list[tuple[tuple[int, float], ...]] = []
    for j in range(k):
        if j == 1 and k >= 2:
            shared = list(patterns[0][:3])
            used = {ch for ch, _ in shared}
            pool = [c for c in range(cfg.C) if c not in used]
            fresh = rng.choice(len(pool), size=n_ions - 3, replace=False)
            channels = [ch for ch, _ in shared] + [pool[i] for i in fresh]
        else:
            channels = list(rng.choice(cfg.C, size=n_ions, replace=False))
        weights = np.concatenate([[1.0], np.sort(rng.uniform(0.25, 0.9, size=n_ions - 1))[::-1]])
        patterns.append(tuple((int(ch), float(w)) for ch, w in zip(channels, weights)))

    templates = []
    for j in range(k):
        low_amp = k >= 2 and j == k - 1
        amp_lo, amp_hi = ((8.0, 16.0) if low_amp else (60.0, 140.0))
        templates.append(
            VocTemplate(
                label=j + 1,
                ion_pattern=patterns[j],
                rt_center_range=ranges[j],
                elution_sigma=float(sigmas[j]),
                amplitude_range=(amp_lo, amp_hi),
            )
        )
    return templates
