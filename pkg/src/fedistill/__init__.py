"""Simulator for vertical federated knowledge transfer.

Hospitals holding different feature sets over partially overlapping patients
jointly learn a shared-sample representation (masked federated SVD or
federated power-iteration PCA), distill it into a local encoder, and train
ordinary classifiers on the enriched local features. Every cross-party
message is recorded in an auditable transcript.
"""

from .datasets import (
    Dataset,
    PartySpec,
    PartyView,
    ScenarioSplit,
    SplitConfig,
    export_scenario,
    inductive_split,
    load_breast,
    load_csv,
    partition_scenario,
    psi_intersect,
    synth_generate,
    synth_latent_signal,
)
from .downstream import (
    ClassifierConfig,
    KNearestNeighbors,
    MultilayerPerceptron,
    RandomForest,
    accuracy,
)
from .exceptions import (
    ConfigError,
    DataFormatError,
    PipelineError,
    ProtocolError,
    SvdConvergenceError,
    TrainingDivergedError,
)
from .frl import (
    DegenerateAggregationWarning,
    DegenerateSpectrumWarning,
    FedRepresentation,
    FrlConfig,
    MaskingKeys,
    fedsvd_keygen,
    fedsvd_mask,
    fedsvd_run,
    run_frl,
    vfedpca_aggregate,
    vfedpca_local,
    vfedpca_reconstruct,
    vfedpca_run,
)
from .linalg import SvdResult, power_iteration, random_orthogonal, svd
from .lrd import (
    DistillConfig,
    DistilledAutoencoder,
    EncoderParams,
    EnrichedRepresentation,
    enrich,
    lrd_gradient,
    lrd_loss,
    train_distilled_encoder,
)
from .orchestrator import (
    AuditReport,
    AuditViolation,
    DatasetConfig,
    ExperimentConfig,
    LocalOutcome,
    PartyIntervals,
    PipelineOutcome,
    RunResult,
    RunRow,
    StandardScaler,
    add_data_hospital,
    audit_transcript,
    distill_ablation,
    inductive_eval,
    linear_fit_r2,
    local_incremental,
    results_from_csv,
    results_to_csv,
    retrain_for_new_task,
    run_experiment,
    run_local_baseline,
    run_pipeline,
    sweep,
    timing_report,
    timings_to_csv,
)
from .transcript import Transcript, TranscriptRecord, array_digest

__version__ = "0.1.0"

__all__ = [
    "AuditReport",
    "AuditViolation",
    "ClassifierConfig",
    "ConfigError",
    "DataFormatError",
    "Dataset",
    "DatasetConfig",
    "DegenerateAggregationWarning",
    "DegenerateSpectrumWarning",
    "DistillConfig",
    "DistilledAutoencoder",
    "EncoderParams",
    "EnrichedRepresentation",
    "ExperimentConfig",
    "FedRepresentation",
    "FrlConfig",
    "KNearestNeighbors",
    "LocalOutcome",
    "MaskingKeys",
    "MultilayerPerceptron",
    "PartyIntervals",
    "PartySpec",
    "PartyView",
    "PipelineError",
    "PipelineOutcome",
    "ProtocolError",
    "RandomForest",
    "RunResult",
    "RunRow",
    "ScenarioSplit",
    "SplitConfig",
    "StandardScaler",
    "SvdConvergenceError",
    "SvdResult",
    "TrainingDivergedError",
    "Transcript",
    "TranscriptRecord",
    "accuracy",
    "add_data_hospital",
    "array_digest",
    "audit_transcript",
    "distill_ablation",
    "enrich",
    "export_scenario",
    "fedsvd_keygen",
    "fedsvd_mask",
    "fedsvd_run",
    "inductive_eval",
    "inductive_split",
    "linear_fit_r2",
    "load_breast",
    "load_csv",
    "local_incremental",
    "lrd_gradient",
    "lrd_loss",
    "partition_scenario",
    "power_iteration",
    "psi_intersect",
    "random_orthogonal",
    "results_from_csv",
    "results_to_csv",
    "retrain_for_new_task",
    "run_experiment",
    "run_frl",
    "run_local_baseline",
    "run_pipeline",
    "svd",
    "sweep",
    "synth_generate",
    "synth_latent_signal",
    "timing_report",
    "timings_to_csv",
    "train_distilled_encoder",
    "vfedpca_aggregate",
    "vfedpca_local",
    "vfedpca_reconstruct",
    "vfedpca_run",
]
