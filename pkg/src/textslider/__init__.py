"""Text sliders: low-rank concept directions learned inside a small text encoder."""

__version__ = "0.1.0"

from .artifact import SliderArtifact
from .encoder import EncoderConfig, EncodingOutput, TextEncoder, encode_text, init_encoder, load_encoder
from .errors import (
    ConfigurationError,
    ContainerError,
    ContractError,
    DegenerateDirectionError,
    DimensionError,
    NumericalError,
    TextSliderError,
)
from .evaluation import SweepReport, concept_direction, sweep
from .lora import AdapterSet, LoraAdapter, apply_lora, compose, set_multiplier
from .runtime import ConditioningRequest, GateSchedule, condition, gate_multiplier
from .tensor import Tensor
from .tokenizer import TokenSeq, Vocab, encode, join_prompt
from .trainer import PromptSpec, TrainConfig, build_target, prompt_table, slider_loss, train_slider

__all__ = [
    "AdapterSet",
    "ConditioningRequest",
    "ConfigurationError",
    "ContainerError",
    "ContractError",
    "DegenerateDirectionError",
    "DimensionError",
    "EncoderConfig",
    "EncodingOutput",
    "GateSchedule",
    "LoraAdapter",
    "NumericalError",
    "PromptSpec",
    "SliderArtifact",
    "SweepReport",
    "Tensor",
    "TextEncoder",
    "TextSliderError",
    "TokenSeq",
    "TrainConfig",
    "Vocab",
    "apply_lora",
    "build_target",
    "compose",
    "concept_direction",
    "condition",
    "encode",
    "encode_text",
    "gate_multiplier",
    "init_encoder",
    "join_prompt",
    "load_encoder",
    "prompt_table",
    "set_multiplier",
    "slider_loss",
    "sweep",
    "train_slider",
]
