"""Python bindings for the corrosion classifier core."""

from ._core import (
    CorrosionError,
    ModelConfig,
    Service,
    Weights,
    aggregate_label,
    build_model,
    decode_image,
    gradcheck,
    majority_accuracy_oracle,
    predict,
    synthetic_image,
)

__all__ = [
    "CorrosionError",
    "ModelConfig",
    "Service",
    "Weights",
    "aggregate_label",
    "build_model",
    "decode_image",
    "gradcheck",
    "majority_accuracy_oracle",
    "predict",
    "synthetic_image",
]
