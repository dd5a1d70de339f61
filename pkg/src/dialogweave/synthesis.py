"""Enrichment of task-oriented dialogs with simulated chitchat interludes.

Three stages per insertion: seed an opening user utterance (persona-driven
for dialog-initial chitchat, chatbot-proposed and intent-gated otherwise),
alternate simulated system/user turns until the user mentions a goal value
drawn from the upcoming task utterance, then bridge back with a generated
transition turn. Three settings control where insertions happen: INITIAL
(prepend once), TRANSITION (first domain boundary only), and MULTIPLE
(attempt after every system utterance).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .backends import GenerationBackend, Segment, SegmentTag, request
from .corpus import (
    CorpusStats,
    Dialog,
    DialogSet,
    Mode,
    Ontology,
    Source,
    Speaker,
    Turn,
    compute_stats,
    domain_sort_key,
)
from .intent import IntentDetector, detect
from .knowledge import DEFAULT_SNIPPET_LIMIT, SearchProvider
from .text import contains_word, content_words, find_word


class SynthesisError(Exception):
    pass


class NoGoalError(SynthesisError):
    """No target-slot value found in the boundary utterance."""


class InitRejectedError(SynthesisError):
    """The chatbot-proposed opener was classified as task-oriented."""


class SettingInapplicableError(SynthesisError):
    """The dialog does not meet the setting's structural requirements."""


class Setting(str, Enum):
    INITIAL = "initial"
    TRANSITION = "transition"
    MULTIPLE = "multiple"


# Slots whose values may serve as chitchat goals.
TARGET_SLOTS = (
    "name",
    "area",
    "pricerange",
    "type",
    "departure",
    "destination",
    "department",
    "day",
)

# Tie-break order when the same value sits at the same position under
# several slots. Destination outranks departure: boundary utterances
# usually name where the user is headed.
_GOAL_SLOT_PRIORITY = (
    "name",
    "area",
    "pricerange",
    "type",
    "destination",
    "departure",
    "department",
    "day",
)


def _goal_slot_rank(slot: str) -> int:
    return _GOAL_SLOT_PRIORITY.index(slot)

# Interludes during task completion are kept shorter than dialog-initial
# chitchat so the task is not derailed.
DEFAULT_MAX_ODD_TURNS = {Setting.INITIAL: 5, Setting.TRANSITION: 3, Setting.MULTIPLE: 3}

PERSONAS = (
    "I love trying new cuisines from around the world.",
    "I spend my weekends hiking in the countryside.",
    "I collect vinyl records from the seventies.",
    "I am learning to play the violin.",
    "I volunteer at an animal shelter on Sundays.",
    "I am a huge fan of detective novels.",
    "I grew up by the seaside and miss it every day.",
    "I bake sourdough bread every Saturday morning.",
    "I am training for my first marathon.",
    "I enjoy photographing old buildings.",
    "I just moved here from a small village.",
    "I teach history at a local school.",
    "I am obsessed with board games.",
    "I keep a little herb garden on my balcony.",
    "I watch classic films every Friday night.",
    "I play in an amateur football league.",
    "I am saving up to travel across Asia.",
    "I paint watercolors of the river near my house.",
    "I recently adopted two kittens.",
    "I love stargazing away from the city lights.",
    "I brew my own ginger beer at home.",
    "I sing in a community choir.",
    "I am fascinated by steam trains.",
    "I knit scarves for my whole family every winter.",
)


@dataclass
class SynthesisConfig:
    setting: Setting
    max_odd_turns: int | None = None
    persona_set: tuple[str, ...] = PERSONAS
    seed: int = 0
    context_window: int = 4
    snippet_limit: int = DEFAULT_SNIPPET_LIMIT

    def __post_init__(self) -> None:
        if isinstance(self.setting, str):
            self.setting = Setting(self.setting)
        if self.max_odd_turns is not None and self.max_odd_turns < 1:
            raise SynthesisError("max_odd_turns must be at least 1")
        if self.setting is Setting.INITIAL and not self.persona_set:
            raise SynthesisError("INITIAL setting needs a nonempty persona set")

    @property
    def effective_max_odd_turns(self) -> int:
        if self.max_odd_turns is not None:
            return self.max_odd_turns
        return DEFAULT_MAX_ODD_TURNS[self.setting]


@dataclass
class SynthesisBackends:
    """The simulator cast: an opener chatbot, a target-guided user, a
    knowledge-grounded system, and a transition generator. A search
    provider, when present, grounds simulated system turns."""

    chat: GenerationBackend
    user: GenerationBackend
    system: GenerationBackend
    transition: GenerationBackend
    search: SearchProvider | None = None


@dataclass(frozen=True)
class Goal:
    value: str
    slot: str
    source_turn_index: int

    def __post_init__(self) -> None:
        if self.slot not in TARGET_SLOTS:
            raise SynthesisError(f"slot {self.slot!r} is not a goal candidate slot")


@dataclass
class OddSnippet:
    turns: list[Turn]
    goal: Goal
    terminated_by_goal: bool
    transition_turn: Turn | None = None

    def user_turn_count(self) -> int:
        return sum(1 for t in self.turns if t.speaker is Speaker.USER)


@dataclass
class InsertionAttempt:
    boundary_index: int
    accepted: bool
    cause: str
    goal_value: str | None = None
    goal_slot: str | None = None
    snippet_user_turns: int = 0
    terminated_by_goal: bool | None = None

    def to_json(self) -> dict:
        return {
            "boundary_index": self.boundary_index,
            "accepted": self.accepted,
            "cause": self.cause,
            "goal_value": self.goal_value,
            "goal_slot": self.goal_slot,
            "snippet_user_turns": self.snippet_user_turns,
            "terminated_by_goal": self.terminated_by_goal,
        }


@dataclass
class SynthesisTrace:
    dialog_id: str
    setting: Setting
    attempts: list[InsertionAttempt] = field(default_factory=list)
    skipped: bool = False
    skip_reason: str | None = None

    def to_json(self) -> dict:
        return {
            "dialog_id": self.dialog_id,
            "setting": self.setting.value,
            "attempts": [a.to_json() for a in self.attempts],
            "skipped": self.skipped,
            "skip_reason": self.skip_reason,
        }


def derive_seed(seed: int, dialog_id: str) -> int:
    digest = hashlib.sha256(f"{seed}:{dialog_id}".encode()).hexdigest()
    return int(digest[:8], 16)


def extract_goal(tod: Dialog, boundary_index: int, ontology: Ontology) -> Goal:
    """Scan the boundary user utterance for ontology values of the goal
    candidate slots. Earliest match wins; ties prefer the longer value,
    then canonical slot and domain order."""
    if boundary_index >= len(tod.turns) or tod.turns[boundary_index].speaker is not Speaker.USER:
        raise SynthesisError(f"boundary index {boundary_index} is not a user turn")
    utterance = tod.turns[boundary_index].text
    best: tuple | None = None
    for domain, slot, value in ontology.entries():
        if slot not in TARGET_SLOTS or value == "dontcare":
            continue
        pos = find_word(utterance, value)
        if pos < 0:
            continue
        key = (pos, -len(value), _goal_slot_rank(slot), domain_sort_key(domain))
        if best is None or key < best[0]:
            best = (key, value, slot)
    if best is None:
        raise NoGoalError(f"dialog {tod.id}: no goal value in turn {boundary_index}")
    return Goal(value=best[1], slot=best[2], source_turn_index=boundary_index)


def _context_segments(turns: list[Turn], window: int) -> list[Segment]:
    return [Segment(SegmentTag.CONTEXT, t.text) for t in turns[-window:]]


def initialize_odd(
    config: SynthesisConfig,
    tod: Dialog,
    boundary_index: int,
    chat_backend: GenerationBackend,
    detector: IntentDetector | None,
    rng: np.random.Generator | None = None,
) -> list[Turn]:
    """Produce the chitchat-opening user turn.

    At boundary 0 the opener is persona-conditioned. Mid-dialog openers
    are chatbot proposals conditioned on the preceding turns and accepted
    only if the detector classifies them as chitchat.
    """
    if config.setting is Setting.INITIAL:
        if boundary_index != 0:
            raise SynthesisError("INITIAL setting inserts only at the dialog start")
        rng = rng or np.random.default_rng(config.seed)
        persona = config.persona_set[int(rng.integers(len(config.persona_set)))]
        text = chat_backend.generate(request((SegmentTag.PERSONA, persona)))
        return [Turn(speaker=Speaker.USER, text=text, mode=Mode.ODD)]

    if boundary_index <= 0 or tod.turns[boundary_index - 1].speaker is not Speaker.SYSTEM:
        raise SynthesisError("mid-dialog insertion boundary must follow a system turn")
    context = _context_segments(tod.turns[:boundary_index], config.context_window)
    candidate = chat_backend.generate(request(*context))
    if detector is None:
        raise SynthesisError("mid-dialog insertion requires an intent detector")
    label, _ = detect(detector, candidate)
    if label is not Mode.ODD:
        raise InitRejectedError(
            f"dialog {tod.id}: candidate at turn {boundary_index} classified as task-oriented"
        )
    return [Turn(speaker=Speaker.USER, text=candidate, mode=Mode.ODD)]


def simulate_odd(
    seed_turns: list[Turn],
    goal: Goal,
    user_backend: GenerationBackend,
    system_backend: GenerationBackend,
    config: SynthesisConfig,
    search: SearchProvider | None = None,
) -> OddSnippet:
    """Alternate simulated system and user turns until a user utterance
    mentions the goal value (word-anchored, case-insensitive) or the user
    turn cap is reached. The snippet always ends with a user turn."""
    if not seed_turns or seed_turns[-1].speaker is not Speaker.USER:
        raise SynthesisError("simulation must start from a user turn")
    turns = list(seed_turns)
    max_turns = config.effective_max_odd_turns
    while True:
        last = turns[-1]
        if last.speaker is Speaker.USER and contains_word(last.text, goal.value):
            return OddSnippet(turns=turns, goal=goal, terminated_by_goal=True)
        user_count = sum(1 for t in turns if t.speaker is Speaker.USER)
        if user_count >= max_turns:
            return OddSnippet(turns=turns, goal=goal, terminated_by_goal=False)

        query = " ".join(content_words(last.text))
        segments = _context_segments(turns, config.context_window)
        search_query: str | None = None
        if search is not None and query:
            snippets = search.search(query, config.snippet_limit)
            segments.append(Segment(SegmentTag.KNOWLEDGE, " ".join(snippets)))
            search_query = query
        try:
            system_text = system_backend.generate(request(*segments))
        except Exception as exc:
            raise SynthesisError(f"system backend failed at snippet turn {len(turns)}: {exc}") from exc
        turns.append(
            Turn(speaker=Speaker.SYSTEM, text=system_text, mode=Mode.ODD, search_query=search_query)
        )

        user_segments = [Segment(SegmentTag.GOAL, goal.value)]
        user_segments += _context_segments(turns, config.context_window)
        try:
            user_text = user_backend.generate(request(*user_segments))
        except Exception as exc:
            raise SynthesisError(f"user backend failed at snippet turn {len(turns)}: {exc}") from exc
        turns.append(Turn(speaker=Speaker.USER, text=user_text, mode=Mode.ODD))


def generate_transition(
    last_odd_user: Turn, next_tod_user: Turn, backend: GenerationBackend
) -> Turn:
    """Generate the system turn bridging the chitchat back into the task.
    Conditioning is exactly the two flanking user utterances."""
    for name, turn in (("last chitchat turn", last_odd_user), ("next task turn", next_tod_user)):
        if turn.speaker is not Speaker.USER:
            raise SynthesisError(f"{name} must be a user turn")
        if not turn.text.strip():
            raise SynthesisError(f"{name} has empty text")
    text = backend.generate(
        request(
            (SegmentTag.CONTEXT, last_odd_user.text),
            (SegmentTag.CONTEXT, next_tod_user.text),
        )
    )
    return Turn(speaker=Speaker.SYSTEM, text=text, mode=Mode.ODD, is_transition=True)


def _copy_turn(turn: Turn) -> Turn:
    return Turn.from_json(turn.to_json())


def _first_domain_boundary(tod: Dialog) -> int:
    """Index of the first user turn opening the second domain."""
    labeled = [t.domain for t in tod.turns if t.domain]
    seen: list[str] = []
    for domain in labeled:
        if domain not in seen:
            seen.append(domain)
    if len(seen) < 2:
        raise SettingInapplicableError(f"dialog {tod.id}: needs at least 2 domains")
    second = seen[1]
    for i, turn in enumerate(tod.turns):
        if turn.speaker is Speaker.USER and turn.domain == second:
            return i
    raise SettingInapplicableError(f"dialog {tod.id}: no user turn opens domain {second!r}")


def _build_snippet(
    tod: Dialog,
    boundary_index: int,
    config: SynthesisConfig,
    backends: SynthesisBackends,
    detector: IntentDetector | None,
    ontology: Ontology,
    rng: np.random.Generator,
) -> OddSnippet:
    goal = extract_goal(tod, boundary_index, ontology)
    seed_turns = initialize_odd(config, tod, boundary_index, backends.chat, detector, rng)
    snippet = simulate_odd(
        seed_turns, goal, backends.user, backends.system, config, backends.search
    )
    snippet.transition_turn = generate_transition(
        snippet.turns[-1], tod.turns[boundary_index], backends.transition
    )
    return snippet


def enrich(
    tod: Dialog,
    config: SynthesisConfig,
    backends: SynthesisBackends,
    detector: IntentDetector | None,
    ontology: Ontology,
) -> tuple[Dialog, SynthesisTrace]:
    """Weave chitchat into one task dialog per the configured setting.

    The original task turns are preserved verbatim and in order. Raises
    NoGoalError / InitRejectedError / SettingInapplicableError when the
    dialog cannot be enriched; MULTIPLE records per-boundary failures in
    the trace instead and keeps going.
    """
    rng = np.random.default_rng(derive_seed(config.seed, tod.id))
    trace = SynthesisTrace(dialog_id=tod.id, setting=config.setting)
    original = [_copy_turn(t) for t in tod.turns]

    if config.setting in (Setting.INITIAL, Setting.TRANSITION):
        boundary = 0 if config.setting is Setting.INITIAL else _first_domain_boundary(tod)
        snippet = _build_snippet(tod, boundary, config, backends, detector, ontology, rng)
        trace.attempts.append(
            InsertionAttempt(
                boundary_index=boundary,
                accepted=True,
                cause="accepted",
                goal_value=snippet.goal.value,
                goal_slot=snippet.goal.slot,
                snippet_user_turns=snippet.user_turn_count(),
                terminated_by_goal=snippet.terminated_by_goal,
            )
        )
        assert snippet.transition_turn is not None
        inserted = snippet.turns + [snippet.transition_turn]
        turns = inserted + original if boundary == 0 else (
            original[:boundary] + inserted + original[boundary:]
        )
    else:
        turns = []
        for i, turn in enumerate(original):
            turns.append(turn)
            if turn.speaker is not Speaker.SYSTEM:
                continue
            boundary = i + 1
            if boundary >= len(original):
                trace.attempts.append(
                    InsertionAttempt(boundary, accepted=False, cause="no_following_user_turn")
                )
                continue
            try:
                snippet = _build_snippet(tod, boundary, config, backends, detector, ontology, rng)
            except NoGoalError:
                trace.attempts.append(InsertionAttempt(boundary, accepted=False, cause="no_goal"))
                continue
            except InitRejectedError:
                trace.attempts.append(
                    InsertionAttempt(boundary, accepted=False, cause="init_rejected")
                )
                continue
            trace.attempts.append(
                InsertionAttempt(
                    boundary_index=boundary,
                    accepted=True,
                    cause="accepted",
                    goal_value=snippet.goal.value,
                    goal_slot=snippet.goal.slot,
                    snippet_user_turns=snippet.user_turn_count(),
                    terminated_by_goal=snippet.terminated_by_goal,
                )
            )
            assert snippet.transition_turn is not None
            turns.extend(snippet.turns)
            turns.append(snippet.transition_turn)

    fused = Dialog(id=tod.id, turns=turns, goal_card=tod.goal_card, source=Source.SYNTHESIZED)
    return fused, trace


@dataclass
class SkipRecord:
    dialog_id: str
    reason: str

    def to_json(self) -> dict:
        return {"dialog_id": self.dialog_id, "reason": self.reason}


@dataclass
class SynthesisResult:
    dialogs: DialogSet
    stats: CorpusStats
    skipped: list[SkipRecord]
    traces: list[SynthesisTrace]


def synthesize_corpus(
    dialogs: DialogSet,
    config: SynthesisConfig,
    backends: SynthesisBackends,
    detector: IntentDetector | None,
    ontology: Ontology,
) -> SynthesisResult:
    """Enrich every applicable dialog; inapplicable or failed dialogs land
    in the skip report. Fully deterministic given the seed and scripted
    backends (dialogs are processed in corpus order)."""
    fused: list[Dialog] = []
    skipped: list[SkipRecord] = []
    traces: list[SynthesisTrace] = []
    for dialog in dialogs:
        try:
            out, trace = enrich(dialog, config, backends, detector, ontology)
        except (NoGoalError, InitRejectedError, SettingInapplicableError) as exc:
            skipped.append(SkipRecord(dialog.id, f"{type(exc).__name__}: {exc}"))
            traces.append(
                SynthesisTrace(
                    dialog_id=dialog.id,
                    setting=config.setting,
                    skipped=True,
                    skip_reason=type(exc).__name__,
                )
            )
            continue
        fused.append(out)
        traces.append(trace)
    fused_set = DialogSet(fused)
    return SynthesisResult(
        dialogs=fused_set,
        stats=compute_stats(fused_set),
        skipped=skipped,
        traces=traces,
    )
