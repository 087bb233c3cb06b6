"""DynFormer neural operator: PDE data generation, training and evaluation."""

from ._core import (
    DimensionError,
    Error,
    IoError,
    Model,
    NumericalError,
    ValidationError,
    cost_account,
    evaluate_checkpoint,
    file_checksum,
    generate_dataset,
    invariant_criteria,
    kronecker_mix,
    load_dataset,
    log_minmax_scores,
    normalize_config,
    project_large_scale,
    project_small_scale,
    relative_mse,
    run_criterion,
    run_preset,
    run_preset_names,
    steplr,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
