"""Experiment harness: metrics, run execution, sweeps, CLI."""

from .metrics import (
    METRICS,
    MetricError,
    RMatrix,
    accuracy,
    auc_score,
    compute_ap_af,
    evaluate,
    micro_f1,
)
from .runner import (
    ABLATION_PRESET,
    DATASET_KINDS,
    GRAPHS_DEFAULTS,
    SBM_DEFAULTS,
    RunConfig,
    RunResult,
    SweepCell,
    aggregate_csv,
    build_dataset,
    build_model,
    resolve_dataset,
    resolve_sweep,
    resolved_dict,
    retention_csv,
    run_config_from_dict,
    run_sequence,
    running_avg_csv,
    sweep_and_report,
)

__all__ = [
    "METRICS",
    "MetricError",
    "RMatrix",
    "accuracy",
    "auc_score",
    "compute_ap_af",
    "evaluate",
    "micro_f1",
    "ABLATION_PRESET",
    "DATASET_KINDS",
    "GRAPHS_DEFAULTS",
    "SBM_DEFAULTS",
    "RunConfig",
    "RunResult",
    "SweepCell",
    "aggregate_csv",
    "build_dataset",
    "build_model",
    "resolve_dataset",
    "resolve_sweep",
    "resolved_dict",
    "retention_csv",
    "run_config_from_dict",
    "run_sequence",
    "running_avg_csv",
    "sweep_and_report",
]
