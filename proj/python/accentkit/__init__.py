"""Image-seeded feature accentuation for small CNNs."""

from ._accentkit import (
    ConfigError,
    Model,
    accentuate,
    attribution_map,
    default_model_dir,
    held_out_images,
    load_model,
    normalize_distance,
    normalize_value,
    percentile,
    reg_distance,
    round_trip,
    run_command,
    stripe_test,
)

__all__ = [
    "ConfigError",
    "Model",
    "accentuate",
    "attribution_map",
    "default_model_dir",
    "held_out_images",
    "load_model",
    "normalize_distance",
    "normalize_value",
    "percentile",
    "reg_distance",
    "round_trip",
    "run_command",
    "stripe_test",
]
