"""Convolutional-autoencoder artefact detection for hyperspectral imagery."""

from ._core import (
    CaeConfig,
    Error,
    Model,
    OutputActivation,
    QuantizedModel,
    classify,
    compute_metrics,
    gen_cube,
    quantize,
    reconstruction_error,
    resolve_config,
    run_bench,
    run_eval,
    run_gen,
    run_quantize,
    run_train,
    select_k,
    select_threshold,
)

DEFAULT_THRESHOLD = 70000.0

__all__ = [
    "CaeConfig",
    "DEFAULT_THRESHOLD",
    "Error",
    "Model",
    "OutputActivation",
    "QuantizedModel",
    "classify",
    "compute_metrics",
    "gen_cube",
    "quantize",
    "reconstruction_error",
    "resolve_config",
    "run_bench",
    "run_eval",
    "run_gen",
    "run_quantize",
    "run_train",
    "select_k",
    "select_threshold",
]
