"""Semantic-aware residually-quantized neural audio codec.

Two encoders (acoustic waveform, semantic feature stream) meet in one
residual vector quantizer; two decoders reconstruct both views from the
shared tokens. Includes a from-scratch autodiff core, training loop with
EMA codebooks, and an ABX/spectral evaluation harness.
"""

from .codec import CodecConfig, CodecModel, ForwardOutput, HOP
from .dsp import Waveform, load_wav, save_wav, spectral_distance, stft
from .errors import (ConfigError, DataError, DatasetError, FormatError,
                     ModeMismatchError, NumericError, ParameterError,
                     SemCodecError, ShapeError, StateError,
                     UnsupportedFormatError)
from .evaluation import (ABXItem, ABXResult, abx_error_rate, dtw_distance,
                         reconstruction_report, representation_dump)
from .rvq import QuantizerState, dequantize, quantize
from .semantic import SemanticFeatures, load_features, surrogate_extractor, write_features
from .tokens import TokenFile, load_tokens, write_tokens
from .training import (LossReport, TrainConfig, load_checkpoint, save_checkpoint,
                       total_loss, train_loop, train_step)

__version__ = "0.1.0"

__all__ = [
    "ABXItem", "ABXResult", "CodecConfig", "CodecModel", "ConfigError",
    "DataError", "DatasetError", "ForwardOutput", "FormatError", "HOP",
    "LossReport", "ModeMismatchError", "NumericError", "ParameterError",
    "QuantizerState", "SemCodecError", "SemanticFeatures", "ShapeError",
    "StateError", "TokenFile", "TrainConfig", "UnsupportedFormatError",
    "Waveform", "abx_error_rate", "dequantize", "dtw_distance",
    "load_checkpoint", "load_features", "load_tokens", "load_wav", "quantize",
    "reconstruction_report", "representation_dump", "save_checkpoint",
    "save_wav", "spectral_distance", "stft", "surrogate_extractor",
    "total_loss", "train_loop", "train_step", "write_features", "write_tokens",
]
