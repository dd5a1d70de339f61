"""Pluggable generation backends: scripted stubs, remote adapters, and the
local toy sequence model with its training loop."""

from .base import (
    BackendDescriptor,
    BackendError,
    BackendKind,
    BackendRegistry,
    GenerationBackend,
    GenRequest,
    RemoteBackend,
    ScriptExhaustedError,
    ScriptedBackend,
    Segment,
    SegmentTag,
    TransportError,
    UnknownBackendError,
    load_registry,
    request,
)
from .toy import (
    EOS,
    PAD,
    SEP,
    AdamW,
    ToyBackend,
    ToySequenceModel,
    TrainReport,
    TrainingError,
    Vocab,
    VocabularyError,
    condition_tokens,
    conditional_nll,
    fit,
)

__all__ = [
    "AdamW",
    "BackendDescriptor",
    "BackendError",
    "BackendKind",
    "BackendRegistry",
    "EOS",
    "GenRequest",
    "GenerationBackend",
    "PAD",
    "RemoteBackend",
    "SEP",
    "ScriptExhaustedError",
    "ScriptedBackend",
    "Segment",
    "SegmentTag",
    "ToyBackend",
    "ToySequenceModel",
    "TrainReport",
    "TrainingError",
    "TransportError",
    "UnknownBackendError",
    "Vocab",
    "VocabularyError",
    "condition_tokens",
    "conditional_nll",
    "fit",
    "load_registry",
    "request",
]
