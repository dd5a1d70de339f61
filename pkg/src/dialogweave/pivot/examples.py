"""History windows, four-part training examples, and token serialization.

A training example is (history, state, knowledge, response), one per
system turn. Serialized inputs are padded/truncated to exactly 512 tokens
with the history portion capped at 256 (oldest tokens dropped first).
State-prediction inputs contain the history only; response inputs append
the state and knowledge sections.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from ..backends.toy import PAD
from ..corpus import BeliefState, Dialog, Mode, Speaker
from ..knowledge import (
    Database,
    KnowledgeKind,
    KnowledgeResult,
    SearchProvider,
    db_lookup,
    web_search,
)
from ..corpus import delexicalize
from ..text import tokenize
from .state import State, encode_belief, encode_state

INPUT_LENGTH = 512
HISTORY_BUDGET = 256

USER_MARKER = "<user>"
SYSTEM_MARKER = "<system>"
STATE_MARKER = "<state>"
KNOWLEDGE_MARKER = "<knowledge>"


class PivotError(Exception):
    pass


class TaskTag(str, Enum):
    STATE = "state"
    RESPONSE = "response"


@dataclass
class HistoryWindow:
    """The last 2k+1 utterances ending at the current user utterance
    (fewer near the dialog start)."""

    utterances: list[tuple[Speaker, str]]
    window_k: int = 2


def build_history(dialog: Dialog, turn_index: int, window_k: int = 2) -> HistoryWindow:
    if turn_index >= len(dialog.turns) or dialog.turns[turn_index].speaker is not Speaker.USER:
        raise PivotError(f"turn {turn_index} is not a user turn")
    start = max(0, turn_index - 2 * window_k)
    window = [(t.speaker, t.text) for t in dialog.turns[start : turn_index + 1]]
    return HistoryWindow(utterances=window, window_k=window_k)


def window_from_utterances(
    utterances: list[tuple[Speaker, str]], window_k: int = 2
) -> HistoryWindow:
    """Window over a raw (speaker, text) log, e.g. a live chat session."""
    if not utterances or utterances[-1][0] is not Speaker.USER:
        raise PivotError("history must end with a user utterance")
    return HistoryWindow(utterances=utterances[-(2 * window_k + 1) :], window_k=window_k)


@dataclass
class TrainingExample:
    history: HistoryWindow
    state: State
    knowledge: KnowledgeResult
    response: str

    def to_json(self) -> dict:
        return {
            "history": [[s.value, t] for s, t in self.history.utterances],
            "window_k": self.history.window_k,
            "state": encode_state(self.state),
            "knowledge": self.knowledge.to_json(),
            "response": self.response,
        }

    @classmethod
    def from_json(cls, data: dict) -> "TrainingExample":
        from .state import parse_state

        return cls(
            history=HistoryWindow(
                utterances=[(Speaker(s), t) for s, t in data["history"]],
                window_k=data.get("window_k", 2),
            ),
            state=parse_state(data["state"]),
            knowledge=KnowledgeResult.from_json(data["knowledge"]),
            response=data["response"],
        )


def render_knowledge(knowledge: KnowledgeResult) -> str:
    if knowledge.kind is KnowledgeKind.EMPTY:
        return ""
    if knowledge.kind is KnowledgeKind.DB_STATE:
        parts = [f"db {knowledge.db_match_count}"]
        if knowledge.top_record is not None:
            for slot, value in knowledge.top_record.attributes.items():
                parts.append(f"{slot} {value}")
        return " ".join(parts)
    return " ".join(knowledge.snippets or [])


def history_tokens(history: HistoryWindow, budget: int = HISTORY_BUDGET) -> list[str]:
    tokens: list[str] = []
    for speaker, text in history.utterances:
        tokens.append(USER_MARKER if speaker is Speaker.USER else SYSTEM_MARKER)
        tokens.extend(tokenize(text))
    return tokens[-budget:] if len(tokens) > budget else tokens


@dataclass
class SerializedPair:
    input_tokens: list[str]
    target_tokens: list[str]
    task_tag: TaskTag
    knowledge_truncated: bool = False


def serialize(example: TrainingExample, task_tag: TaskTag) -> SerializedPair:
    """Token-level (input, target) pair under the fixed budgets."""
    tokens = history_tokens(example.history)
    truncated = False
    if task_tag is TaskTag.STATE:
        target = tokenize(encode_state(example.state))
    else:
        tokens = tokens + [STATE_MARKER] + tokenize(encode_state(example.state))
        tokens = tokens + [KNOWLEDGE_MARKER] + tokenize(render_knowledge(example.knowledge))
        target = tokenize(example.response)
        if len(tokens) > INPUT_LENGTH:
            tokens = tokens[:INPUT_LENGTH]
            truncated = True
    if len(tokens) > INPUT_LENGTH:
        tokens = tokens[:INPUT_LENGTH]
        truncated = True
    if len(tokens) < INPUT_LENGTH:
        tokens = tokens + [PAD] * (INPUT_LENGTH - len(tokens))
    if not target:
        raise PivotError("serialized target is empty")
    return SerializedPair(
        input_tokens=tokens,
        target_tokens=target,
        task_tag=task_tag,
        knowledge_truncated=truncated,
    )


def strip_padding(tokens: list[str]) -> list[str]:
    end = len(tokens)
    while end > 0 and tokens[end - 1] == PAD:
        end -= 1
    return tokens[:end]


def make_training_examples(
    dialog: Dialog,
    db: Database | None,
    search: SearchProvider | None = None,
    window_k: int = 2,
    snippet_limit: int = 3,
) -> list[TrainingExample]:
    """One example per system turn of a mode-tagged fused dialog.

    Task turns get the cumulative belief serialized as the state query and
    a database state as knowledge; chitchat turns get their annotated
    search query (snippets fetched through ``search``) or an empty result.
    Task responses are delexicalized against the top database record when
    no delexicalized text is stored.
    """
    examples: list[TrainingExample] = []
    cumulative = BeliefState()
    for i, turn in enumerate(dialog.turns):
        if turn.speaker is not Speaker.SYSTEM:
            continue
        if turn.mode is None:
            raise PivotError(f"dialog {dialog.id}: untagged turn {i}")
        history = build_history(dialog, i - 1, window_k)
        if turn.mode is Mode.TOD:
            if turn.belief is None:
                raise PivotError(f"dialog {dialog.id}: task turn {i} missing belief annotation")
            for domain, slot, value in turn.belief.items():
                cumulative.set(domain, slot, value)
            state = State(mode=Mode.TOD, query=encode_belief(cumulative))
            domains = cumulative.domains()
            query_domain = turn.domain or (domains[-1] if domains else None)
            if db is not None and query_domain is not None and query_domain in db.domains():
                knowledge = db_lookup(cumulative, db, domain=query_domain)
            else:
                # Domains without a database table (e.g. taxi) ground on nothing.
                knowledge = KnowledgeResult.empty()
            response = turn.delex_text
            if response is None:
                if knowledge.kind is KnowledgeKind.DB_STATE and knowledge.top_record is not None:
                    response = delexicalize(turn.text, knowledge.top_record)
                else:
                    response = turn.text
        else:
            query = (turn.search_query or "").strip()
            state = State(mode=Mode.ODD, query=query)
            if not query:
                knowledge = KnowledgeResult.empty()
            else:
                if search is None:
                    raise PivotError(
                        f"dialog {dialog.id}: turn {i} has a search query but no provider was given"
                    )
                knowledge = web_search(query, search, snippet_limit)
            response = turn.text
        examples.append(
            TrainingExample(history=history, state=state, knowledge=knowledge, response=response)
        )
    return examples
