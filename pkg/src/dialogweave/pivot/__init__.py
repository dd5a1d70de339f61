"""Unified mode-switching dialog task: the state codec, training-example
construction and serialization, joint training, and the inference turn."""

from .chat import (
    ChatSession,
    KnowledgeRouter,
    ScriptedSequenceModel,
    SequenceModel,
    TurnTrace,
    chat_turn,
    predict_turns,
)
from .examples import (
    HISTORY_BUDGET,
    INPUT_LENGTH,
    KNOWLEDGE_MARKER,
    STATE_MARKER,
    SYSTEM_MARKER,
    USER_MARKER,
    HistoryWindow,
    PivotError,
    SerializedPair,
    TaskTag,
    TrainingExample,
    build_history,
    history_tokens,
    make_training_examples,
    render_knowledge,
    serialize,
    strip_padding,
    window_from_utterances,
)
from .state import (
    State,
    StateParseError,
    belief_of,
    encode_belief,
    encode_state,
    parse_belief,
    parse_state,
    state_from_belief,
)
from .training import (
    ExamplePairs,
    build_toy_model,
    example_loss,
    load_examples,
    save_examples,
    serialize_example,
    state_exact_match,
    train_pivot,
)

__all__ = [
    "ChatSession",
    "ExamplePairs",
    "HISTORY_BUDGET",
    "HistoryWindow",
    "INPUT_LENGTH",
    "KNOWLEDGE_MARKER",
    "KnowledgeRouter",
    "PivotError",
    "STATE_MARKER",
    "SYSTEM_MARKER",
    "ScriptedSequenceModel",
    "SequenceModel",
    "SerializedPair",
    "State",
    "StateParseError",
    "TaskTag",
    "TrainingExample",
    "TurnTrace",
    "USER_MARKER",
    "belief_of",
    "build_history",
    "build_toy_model",
    "chat_turn",
    "encode_belief",
    "encode_state",
    "example_loss",
    "history_tokens",
    "load_examples",
    "make_training_examples",
    "parse_belief",
    "parse_state",
    "predict_turns",
    "render_knowledge",
    "save_examples",
    "serialize",
    "serialize_example",
    "state_exact_match",
    "state_from_belief",
    "strip_padding",
    "train_pivot",
    "window_from_utterances",
]
