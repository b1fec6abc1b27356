"""Hypernetwork-generated adapters on a toy multimodal transformer."""

from ._hyperadapt import (
    EXIT_CONFIG_ERROR,
    EXIT_NUMERIC_ABORT,
    EXIT_OK,
    IGNORE_INDEX,
    CheckpointError,
    ConfigError,
    Model,
    NumericError,
    ShapeError,
    adapter_flat_size,
    audit,
    default_spec,
    full_matrix_flat_size,
    inspect,
    normalize_spec,
    parse_config,
    run,
)

__all__ = [
    "EXIT_CONFIG_ERROR",
    "EXIT_NUMERIC_ABORT",
    "EXIT_OK",
    "IGNORE_INDEX",
    "CheckpointError",
    "ConfigError",
    "Model",
    "NumericError",
    "ShapeError",
    "adapter_flat_size",
    "audit",
    "default_spec",
    "full_matrix_flat_size",
    "inspect",
    "normalize_spec",
    "parse_config",
    "run",
]
