"""The end-to-end inference turn: predict state, route knowledge, generate.

Knowledge routing always observes the parsed state, never raw model text;
an unparseable state prediction falls back to the intent detector's mode
with an empty query, flagged in the session trace.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence

from ..corpus import Dialog, Mode, Speaker
from ..intent import IntentDetector, detect
from ..knowledge import Database, KnowledgeKind, KnowledgeResult, SearchProvider, db_lookup, web_search
from ..text import detokenize, tokenize
from .examples import (
    KNOWLEDGE_MARKER,
    STATE_MARKER,
    HistoryWindow,
    build_history,
    history_tokens,
    render_knowledge,
    window_from_utterances,
)
from .state import State, StateParseError, belief_of, encode_state, parse_state


class SequenceModel(Protocol):
    """Anything that can greedily continue a token sequence."""

    def generate_tokens(self, condition: Sequence[str], max_tokens: int = 32) -> list[str]: ...


class ScriptedSequenceModel:
    """Replays queued output strings; used to drive chat sessions in tests
    and demos. Records every conditioning sequence it was given."""

    def __init__(self, outputs: Sequence[str], cycle: bool = False) -> None:
        self.outputs = list(outputs)
        self.cycle = cycle
        self.calls: list[list[str]] = []
        self._index = 0

    def generate_tokens(self, condition: Sequence[str], max_tokens: int = 32) -> list[str]:
        if self._index >= len(self.outputs):
            if not self.cycle:
                raise IndexError("scripted model exhausted")
            self._index %= len(self.outputs)
        text = self.outputs[self._index]
        self._index += 1
        self.calls.append(list(condition))
        return tokenize(text)[:max_tokens]


class KnowledgeRouter:
    """Routes a parsed state to its knowledge source: database lookup for
    task mode, web search for chitchat with a query, nothing otherwise."""

    def __init__(
        self,
        db: Database | None = None,
        search: SearchProvider | None = None,
        snippet_limit: int = 3,
    ) -> None:
        self.db = db
        self.search = search
        self.snippet_limit = snippet_limit

    def route(self, state: State) -> KnowledgeResult:
        if state.mode is Mode.TOD:
            belief = belief_of(state)
            if self.db is None or belief.is_empty():
                return KnowledgeResult.empty()
            domain = belief.domains()[-1]
            if domain not in self.db.domains():
                return KnowledgeResult.empty()
            return db_lookup(belief, self.db, domain=domain)
        if not state.query or self.search is None:
            return KnowledgeResult.empty()
        return web_search(state.query, self.search, self.snippet_limit)


@dataclass
class TurnTrace:
    state: State
    knowledge_kind: KnowledgeKind
    fallback: bool = False

    def to_json(self) -> dict:
        return {
            "state": encode_state(self.state),
            "knowledge_kind": self.knowledge_kind.value,
            "fallback": self.fallback,
        }


@dataclass
class ChatSession:
    id: str
    history: list[tuple[Speaker, str]] = field(default_factory=list)
    window_k: int = 2
    detector: IntentDetector | None = None
    traces: list[TurnTrace] = field(default_factory=list)


def _state_condition(window: HistoryWindow) -> list[str]:
    return history_tokens(window)


def _response_condition(window: HistoryWindow, state: State, knowledge: KnowledgeResult) -> list[str]:
    tokens = history_tokens(window)
    tokens = tokens + [STATE_MARKER] + tokenize(encode_state(state))
    tokens = tokens + [KNOWLEDGE_MARKER] + tokenize(render_knowledge(knowledge))
    return tokens


def chat_turn(
    session: ChatSession,
    user_utterance: str,
    model: SequenceModel,
    knowledge_router: KnowledgeRouter,
    max_state_tokens: int = 48,
    max_response_tokens: int = 48,
) -> tuple[State, KnowledgeResult, str]:
    """Run one predict-state / route-knowledge / generate-response cycle,
    appending both utterances to the session history."""
    session.history.append((Speaker.USER, user_utterance))
    window = window_from_utterances(session.history, session.window_k)

    state_text = detokenize(model.generate_tokens(_state_condition(window), max_state_tokens))
    fallback = False
    try:
        state = parse_state(state_text)
    except StateParseError:
        fallback = True
        if session.detector is not None:
            mode, _ = detect(session.detector, user_utterance)
        else:
            mode = Mode.ODD
        state = State(mode=mode, query="")

    knowledge = knowledge_router.route(state)
    response = detokenize(
        model.generate_tokens(_response_condition(window, state, knowledge), max_response_tokens)
    )
    session.history.append((Speaker.SYSTEM, response))
    session.traces.append(TurnTrace(state=state, knowledge_kind=knowledge.kind, fallback=fallback))
    return state, knowledge, response


def predict_turns(
    model: SequenceModel,
    dialog: Dialog,
    knowledge_router: KnowledgeRouter,
    window_k: int = 2,
    max_state_tokens: int = 48,
    max_response_tokens: int = 48,
) -> list[tuple[State, str]]:
    """Teacher-forced predictions for every system turn of a gold dialog:
    histories come from the gold turns, states and responses from the
    model. Used by the corpus-level evaluation harness."""
    predictions: list[tuple[State, str]] = []
    for i, turn in enumerate(dialog.turns):
        if turn.speaker is not Speaker.SYSTEM:
            continue
        window = build_history(dialog, i - 1, window_k)
        state_text = detokenize(model.generate_tokens(_state_condition(window), max_state_tokens))
        try:
            state = parse_state(state_text)
        except StateParseError:
            state = State(mode=Mode.ODD, query="")
        knowledge = knowledge_router.route(state)
        response = detokenize(
            model.generate_tokens(
                _response_condition(window, state, knowledge), max_response_tokens
            )
        )
        predictions.append((state, response))
    return predictions
