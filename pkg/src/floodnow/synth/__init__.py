from .encoding import EncodingLayout, decode, encode
from .model import (
    GradientCheck,
    SynthConfig,
    SynthDivergenceError,
    SynthesizerModel,
    TrainingLog,
    class_counts,
    fit,
    generator_forward,
    gradient_check,
    sample,
)
from .network import AdamState, NetworkParams, adam_step

__all__ = [
    "EncodingLayout", "decode", "encode",
    "GradientCheck", "SynthConfig", "SynthDivergenceError", "SynthesizerModel", "TrainingLog",
    "class_counts", "fit", "generator_forward", "gradient_check", "sample",
    "AdamState", "NetworkParams", "adam_step",
]
