"""Targeted compound detection in raw GC-MS abundance matrices.

The pipeline has two stages. Stage 1 builds a labeled window dataset
from annotated samples (extraction, augmentation, normalization) and
trains a window classifier. Stage 2 slides the classifier over whole
samples, converts the per-window labels into detections via the
duration/order/uniqueness rules, and evaluates the output against
expert annotations under localization and presence-only protocols.
"""

from .core import (
    DEFAULT_CHANNELS,
    DEFAULT_DELTA,
    NEGATIVE_LABEL,
    AbundanceMatrix,
    ContractError,
    GroundTruthAnnotation,
    RTAxis,
    ValidationError,
    VocScanError,
    WindowBoundsError,
    derive_rng,
    derive_seed,
    intervals_overlap,
    n_windows,
    rt_of_window,
    tic,
    window,
)
from .dataset import (
    DataPoint,
    ElutionTooLongWarning,
    ExtractionError,
    LabeledDataset,
    Provenance,
    SamplingError,
    SplitError,
    augment_full,
    augment_intensity,
    augment_translation,
    build_dataset,
    extract_datapoint,
    load_dataset,
    normalize,
    normalize_values,
    sample_negatives,
    save_dataset,
    split_by_participant,
)
from .synthgen import ConfigError, SynthConfig, VocTemplate, default_template_set, synth_sample
from .network import ConvBlock, ConvNet1d, ConvNetConfig, TrainingError, softmax
from .classifier import (
    CentroidModel,
    ClassifierModel,
    ConvNetModel,
    ModelMeta,
    accuracy,
    classify,
    load_model,
    save_model,
    train_centroid,
    train_convnet,
)
from .scanner import ScanResult, scan
from .detector import (
    Detection,
    DetectionStages,
    detect,
    detection_confidence,
    duration_rule,
    order_rule,
    run_rules,
    uniqueness_rule,
)
from .evaluation import (
    EvaluationReport,
    EvaluationWarning,
    RTRangeTable,
    SampleDetections,
    average_precision,
    build_rt_ranges,
    evaluate,
    intersect_models,
    match_protocol1,
    presence_protocol2,
    random_overlap_bound,
    render_report,
    report_from_dict,
    report_to_dict,
    summarize,
    tentative_analysis,
)
from .ingest import (
    Manifest,
    ParseError,
    PipelineParams,
    SampleEntry,
    VocTableEntry,
    emit_annotations,
    emit_detections,
    emit_manifest,
    emit_matrix,
    emit_scan,
    parse_annotations,
    parse_detections,
    parse_manifest,
    parse_matrix,
    resolve_path,
)

__version__ = "0.1.0"
