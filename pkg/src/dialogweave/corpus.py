"""Dialog data model, corpus ingestion, delexicalization, persistence, statistics.

The on-disk fused-corpus format is JSONL: one JSON object per dialog, each
turn carrying an explicit ``mode`` tag. See ``save_corpus`` for the schema.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Mapping


class CorpusError(Exception):
    """Base class for corpus-layer failures."""


class CorpusParseError(CorpusError):
    """Raised when an input file cannot be parsed."""


class CorpusValidationError(CorpusError):
    """Raised when parsed data violates the data-model invariants."""


class Speaker(str, Enum):
    USER = "user"
    SYSTEM = "system"


class Mode(str, Enum):
    TOD = "tod"
    ODD = "odd"


class Source(str, Enum):
    ORIGINAL_TOD = "original_tod"
    SYNTHESIZED = "synthesized"
    COLLECTED = "collected"


# Canonical orderings used wherever (domain, slot) pairs must serialize
# deterministically (belief strings, stats tables, goal extraction ties).
DOMAIN_ORDER = (
    "restaurant",
    "hotel",
    "attraction",
    "train",
    "taxi",
    "hospital",
    "police",
    "bus",
)

SLOT_ORDER = (
    "name",
    "area",
    "food",
    "pricerange",
    "type",
    "stars",
    "parking",
    "internet",
    "departure",
    "destination",
    "day",
    "arriveby",
    "leaveat",
    "department",
    "people",
    "stay",
    "time",
)

# Domains whose goals are satisfied by offering a concrete database entity.
ENTITY_DOMAINS = frozenset({"restaurant", "hotel", "attraction", "train"})


def _order_key(value: str, order: tuple[str, ...]) -> tuple[int, str]:
    try:
        return (order.index(value), value)
    except ValueError:
        return (len(order), value)


def domain_sort_key(domain: str) -> tuple[int, str]:
    return _order_key(domain, DOMAIN_ORDER)


def slot_sort_key(slot: str) -> tuple[int, str]:
    return _order_key(slot, SLOT_ORDER)


@dataclass
class BeliefState:
    """Accumulated (domain, slot) -> value constraints. Values are lowercase."""

    constraints: dict[str, dict[str, str]] = field(default_factory=dict)

    def set(self, domain: str, slot: str, value: str) -> None:
        domain, slot, value = domain.lower(), slot.lower(), value.lower()
        if not value:
            raise CorpusValidationError(f"empty value for {domain}-{slot}")
        self.constraints.setdefault(domain, {})[slot] = value

    def get(self, domain: str, slot: str) -> str | None:
        return self.constraints.get(domain.lower(), {}).get(slot.lower())

    def domains(self) -> list[str]:
        return list(self.constraints)

    def items(self) -> Iterator[tuple[str, str, str]]:
        for domain, slots in self.constraints.items():
            for slot, value in slots.items():
                yield domain, slot, value

    def canonical_items(self) -> list[tuple[str, str, str]]:
        """(domain, slot, value) triples in canonical domain/slot order."""
        out = []
        for domain in sorted(self.constraints, key=domain_sort_key):
            slots = self.constraints[domain]
            for slot in sorted(slots, key=slot_sort_key):
                out.append((domain, slot, slots[slot]))
        return out

    def copy(self) -> "BeliefState":
        return BeliefState({d: dict(s) for d, s in self.constraints.items()})

    def is_empty(self) -> bool:
        return not any(slots for slots in self.constraints.values())

    def to_json(self) -> dict:
        return {d: dict(s) for d, s in self.constraints.items()}

    @classmethod
    def from_json(cls, data: Mapping) -> "BeliefState":
        bs = cls()
        for domain, slots in data.items():
            for slot, value in slots.items():
                bs.set(domain, slot, str(value))
        return bs

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BeliefState):
            return NotImplemented
        return self.to_json() == other.to_json()


@dataclass
class DomainGoal:
    """Per-domain slice of an information-seeking goal card."""

    constraints: dict[str, str] = field(default_factory=dict)
    requests: list[str] = field(default_factory=list)
    requires_entity: bool = True

    def to_json(self) -> dict:
        return {
            "constraints": dict(self.constraints),
            "requests": list(self.requests),
            "requires_entity": self.requires_entity,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "DomainGoal":
        return cls(
            constraints={k.lower(): str(v).lower() for k, v in data.get("constraints", {}).items()},
            requests=[r.lower() for r in data.get("requests", [])],
            requires_entity=bool(data.get("requires_entity", True)),
        )


@dataclass
class GoalCard:
    domains: dict[str, DomainGoal] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {d: g.to_json() for d, g in self.domains.items()}

    @classmethod
    def from_json(cls, data: Mapping) -> "GoalCard":
        return cls({d: DomainGoal.from_json(g) for d, g in data.items()})


@dataclass
class Turn:
    """One utterance. ``search_query`` records the web query an ODD system
    turn was grounded on, so training examples can be reconstructed later."""

    speaker: Speaker
    text: str
    mode: Mode | None = None
    delex_text: str | None = None
    domain: str | None = None
    belief: BeliefState | None = None
    is_transition: bool = False
    search_query: str | None = None

    def __post_init__(self) -> None:
        if self.is_transition and self.speaker is not Speaker.SYSTEM:
            raise CorpusValidationError("transition turns must be system turns")

    def to_json(self) -> dict:
        return {
            "speaker": self.speaker.value,
            "text": self.text,
            "mode": self.mode.value if self.mode else None,
            "delex_text": self.delex_text,
            "domain": self.domain,
            "belief": self.belief.to_json() if self.belief is not None else None,
            "is_transition": self.is_transition,
            "search_query": self.search_query,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "Turn":
        return cls(
            speaker=Speaker(data["speaker"]),
            text=data["text"],
            mode=Mode(data["mode"]) if data.get("mode") else None,
            delex_text=data.get("delex_text"),
            domain=data.get("domain"),
            belief=BeliefState.from_json(data["belief"]) if data.get("belief") is not None else None,
            is_transition=bool(data.get("is_transition", False)),
            search_query=data.get("search_query"),
        )


@dataclass
class Dialog:
    id: str
    turns: list[Turn]
    goal_card: GoalCard | None = None
    source: Source = Source.ORIGINAL_TOD

    def __post_init__(self) -> None:
        if not self.turns:
            raise CorpusValidationError(f"dialog {self.id}: no turns")
        for i, turn in enumerate(self.turns):
            expected = Speaker.USER if i % 2 == 0 else Speaker.SYSTEM
            if turn.speaker is not expected:
                raise CorpusValidationError(
                    f"dialog {self.id}: turn {i} should be {expected.value}, got {turn.speaker.value}"
                )

    def user_turns(self) -> list[Turn]:
        return [t for t in self.turns if t.speaker is Speaker.USER]

    def system_turns(self) -> list[Turn]:
        return [t for t in self.turns if t.speaker is Speaker.SYSTEM]

    def to_json(self) -> dict:
        return {
            "schema": 1,
            "id": self.id,
            "source": self.source.value,
            "goal": self.goal_card.to_json() if self.goal_card is not None else None,
            "turns": [t.to_json() for t in self.turns],
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "Dialog":
        return cls(
            id=data["id"],
            turns=[Turn.from_json(t) for t in data["turns"]],
            goal_card=GoalCard.from_json(data["goal"]) if data.get("goal") is not None else None,
            source=Source(data.get("source", "original_tod")),
        )


@dataclass
class DialogSet:
    dialogs: list[Dialog] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.dialogs)

    def __iter__(self) -> Iterator[Dialog]:
        return iter(self.dialogs)

    def __getitem__(self, index: int) -> Dialog:
        return self.dialogs[index]

    def get(self, dialog_id: str) -> Dialog | None:
        for dialog in self.dialogs:
            if dialog.id == dialog_id:
                return dialog
        return None


def count_mode_switches(dialog: Dialog) -> int:
    """Adjacent turn pairs whose mode tags differ."""
    switches = 0
    for prev, cur in zip(dialog.turns, dialog.turns[1:]):
        if prev.mode is None or cur.mode is None:
            raise CorpusValidationError(f"dialog {dialog.id}: untagged turn")
        if prev.mode is not cur.mode:
            switches += 1
    return switches


def whitespace_tokens(text: str) -> list[str]:
    return text.split()


@dataclass
class CorpusStats:
    """The Table-style statistics bundle. Averages are exact (unrounded);
    turn averages divide by dialog count, length averages by turn count."""

    n_dialogs: int
    avg_mode_switch: float
    total_odd_turns: int
    total_tod_turns: int
    avg_odd_turns: float
    avg_tod_turns: float
    avg_odd_length: float
    avg_tod_length: float

    def to_json(self) -> dict:
        return {
            "n_dialogs": self.n_dialogs,
            "avg_mode_switch": self.avg_mode_switch,
            "total_odd_turns": self.total_odd_turns,
            "total_tod_turns": self.total_tod_turns,
            "avg_odd_turns": self.avg_odd_turns,
            "avg_tod_turns": self.avg_tod_turns,
            "avg_odd_length": self.avg_odd_length,
            "avg_tod_length": self.avg_tod_length,
        }


def compute_stats(dialogs: DialogSet | Iterable[Dialog]) -> CorpusStats:
    """Count per-mode turns, token lengths, and mode switches.

    A "turn" here is a single utterance; transition system turns count with
    the mode they are tagged (ODD by convention in this package).
    """
    dialog_list = list(dialogs)
    n_dialogs = len(dialog_list)
    total_odd = total_tod = 0
    odd_tokens = tod_tokens = 0
    switches = 0
    for dialog in dialog_list:
        switches += count_mode_switches(dialog)
        for turn in dialog.turns:
            if turn.mode is None:
                raise CorpusValidationError(f"dialog {dialog.id}: untagged turn")
            n_tok = len(whitespace_tokens(turn.text))
            if turn.mode is Mode.ODD:
                total_odd += 1
                odd_tokens += n_tok
            else:
                total_tod += 1
                tod_tokens += n_tok
    return CorpusStats(
        n_dialogs=n_dialogs,
        avg_mode_switch=switches / n_dialogs if n_dialogs else 0.0,
        total_odd_turns=total_odd,
        total_tod_turns=total_tod,
        avg_odd_turns=total_odd / n_dialogs if n_dialogs else 0.0,
        avg_tod_turns=total_tod / n_dialogs if n_dialogs else 0.0,
        avg_odd_length=odd_tokens / total_odd if total_odd else 0.0,
        avg_tod_length=tod_tokens / total_tod if total_tod else 0.0,
    )


# --------------------------------------------------------------------------
# Delexicalization
# --------------------------------------------------------------------------

# Placeholder vocabulary, MultiWOZ convention. Slot names are normalized to
# lowercase alphanumerics before lookup; unlisted slots fall back to
# [value_<slot>].
PLACEHOLDERS: dict[str, str] = {
    "trainid": "[train_id]",
    "arriveby": "[value_time]",
    "leaveat": "[value_time]",
    "time": "[value_time]",
    "name": "[value_name]",
    "area": "[value_area]",
    "food": "[value_food]",
    "pricerange": "[value_pricerange]",
    "price": "[value_price]",
    "entrancefee": "[value_price]",
    "day": "[value_day]",
    "departure": "[value_place]",
    "destination": "[value_place]",
    "address": "[value_address]",
    "phone": "[value_phone]",
    "postcode": "[value_postcode]",
    "type": "[value_type]",
    "stars": "[value_stars]",
    "department": "[value_department]",
    "duration": "[value_duration]",
    "ref": "[value_reference]",
    "reference": "[value_reference]",
    "people": "[value_count]",
    "stay": "[value_count]",
    "id": "[value_id]",
}


def _normalize_slot(slot: str) -> str:
    return re.sub(r"[^a-z0-9]", "", slot.lower())


def placeholder_for(slot: str) -> str:
    norm = _normalize_slot(slot)
    return PLACEHOLDERS.get(norm, f"[value_{norm}]")


def delexicalize(text: str, entity, ontology: "Ontology | None" = None) -> str:
    """Replace every occurrence of an entity slot value with its placeholder.

    Matching is case-insensitive, longest-value-first, and anchored so a
    value never matches inside a larger word (or inside a placeholder,
    whence idempotence). ``entity`` is a slot->value mapping or any object
    with an ``attributes`` mapping. No-match inputs are returned unchanged.
    """
    attributes = getattr(entity, "attributes", entity)
    pairs = [
        (str(value), placeholder_for(slot))
        for slot, value in attributes.items()
        if str(value).strip()
    ]
    pairs.sort(key=lambda p: len(p[0]), reverse=True)
    for value, placeholder in pairs:
        pattern = r"(?<!\w)" + re.escape(value) + r"(?!\w)"
        text = re.sub(pattern, lambda _: placeholder, text, flags=re.IGNORECASE)
    return text


# --------------------------------------------------------------------------
# Ontology
# --------------------------------------------------------------------------


@dataclass
class Ontology:
    """Valid (domain, slot, value) triples; values kept lowercase."""

    values: dict[tuple[str, str], list[str]]

    def domains(self) -> list[str]:
        return sorted({d for d, _ in self.values}, key=domain_sort_key)

    def slots(self, domain: str) -> list[str]:
        return sorted(
            {s for d, s in self.values if d == domain.lower()}, key=slot_sort_key
        )

    def has_slot(self, domain: str, slot: str) -> bool:
        return (domain.lower(), slot.lower()) in self.values

    def slot_values(self, domain: str, slot: str) -> list[str]:
        return self.values.get((domain.lower(), slot.lower()), [])

    def entries(self) -> Iterator[tuple[str, str, str]]:
        for domain in self.domains():
            for slot in self.slots(domain):
                for value in self.values[(domain, slot)]:
                    yield domain, slot, value


def load_ontology(path: str | Path) -> Ontology:
    """Read a ``{"domain-slot": [values]}`` JSON ontology."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CorpusParseError(f"ontology {path}: {exc}") from exc
    values: dict[tuple[str, str], list[str]] = {}
    for key, vals in raw.items():
        if "-" not in key:
            raise CorpusParseError(f"ontology {path}: bad key {key!r}, expected domain-slot")
        domain, slot = key.lower().split("-", 1)
        values[(domain, _normalize_slot(slot))] = [str(v).lower() for v in vals]
    return Ontology(values)


# --------------------------------------------------------------------------
# Task-oriented corpus reader (MultiWOZ 2.1-style JSON)
# --------------------------------------------------------------------------


def _belief_from_metadata(metadata: Mapping, ontology: Ontology, dialog_id: str) -> BeliefState:
    belief = BeliefState()
    for domain, sections in metadata.items():
        domain = domain.lower()
        for section in ("semi", "book"):
            for slot, value in sections.get(section, {}).items():
                if slot == "booked":
                    continue
                if isinstance(value, list):
                    value = value[0] if value else ""
                value = str(value).strip().lower()
                if value in ("", "not mentioned", "none"):
                    continue
                if not ontology.has_slot(domain, slot):
                    raise CorpusValidationError(
                        f"dialog {dialog_id}: unknown slot {domain}-{slot}"
                    )
                belief.set(domain, _normalize_slot(slot), value)
    return belief


def _goal_card_from_goal(goal: Mapping) -> GoalCard | None:
    card = GoalCard()
    for domain, parts in goal.items():
        if domain in ("message", "topic") or not isinstance(parts, Mapping) or not parts:
            continue
        info = {
            _normalize_slot(k): str(v).lower()
            for k, v in parts.get("info", {}).items()
            if str(v).strip()
        }
        reqt = [_normalize_slot(r) for r in parts.get("reqt", [])]
        card.domains[domain.lower()] = DomainGoal(
            constraints=info,
            requests=reqt,
            requires_entity=domain.lower() in ENTITY_DOMAINS,
        )
    return card if card.domains else None


def load_tod_corpus(path: str | Path, ontology: Ontology | str | Path) -> DialogSet:
    """Load a task-oriented corpus: dict of dialog id -> {goal, log}.

    Every turn comes back tagged TOD, with exchange-level domain labels and
    cumulative belief annotations on system turns.
    """
    if not isinstance(ontology, Ontology):
        ontology = load_ontology(ontology)
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CorpusParseError(f"corpus {path}: {exc}") from exc
    if isinstance(raw, list):
        if raw:
            raise CorpusParseError(f"corpus {path}: expected a dialog-id mapping")
        raw = {}

    dialogs = []
    for dialog_id, body in raw.items():
        log = body.get("log", [])
        if not log:
            raise CorpusParseError(f"corpus {path}: dialog {dialog_id} has empty log")
        turns: list[Turn] = []
        prev_belief = BeliefState()
        active_domain: str | None = None
        for i, entry in enumerate(log):
            if "text" not in entry:
                raise CorpusParseError(f"corpus {path}: dialog {dialog_id} turn {i} missing text")
            speaker = Speaker.USER if i % 2 == 0 else Speaker.SYSTEM
            if speaker is Speaker.SYSTEM:
                belief = _belief_from_metadata(entry.get("metadata", {}), ontology, dialog_id)
                changed = [
                    d for d in belief.domains()
                    if belief.constraints.get(d) != prev_belief.constraints.get(d)
                ]
                if changed:
                    active_domain = sorted(changed, key=domain_sort_key)[0]
                turn = Turn(
                    speaker=speaker,
                    text=entry["text"],
                    mode=Mode.TOD,
                    domain=active_domain,
                    belief=belief,
                )
                if turns:
                    turns[-1].domain = active_domain
                prev_belief = belief
            else:
                turn = Turn(speaker=speaker, text=entry["text"], mode=Mode.TOD, domain=active_domain)
            turns.append(turn)
        try:
            dialog = Dialog(
                id=dialog_id,
                turns=turns,
                goal_card=_goal_card_from_goal(body.get("goal", {})),
                source=Source.ORIGINAL_TOD,
            )
        except CorpusValidationError as exc:
            raise CorpusParseError(f"corpus {path}: dialog {dialog_id}: {exc}") from exc
        dialogs.append(dialog)
    return DialogSet(dialogs)


# --------------------------------------------------------------------------
# Fused-corpus persistence (JSONL, one dialog per line)
# --------------------------------------------------------------------------


def dialog_to_line(dialog: Dialog) -> str:
    return json.dumps(dialog.to_json(), sort_keys=True, separators=(",", ":"))


def save_corpus(dialogs: DialogSet | Iterable[Dialog], path: str | Path) -> None:
    path = Path(path)
    try:
        with path.open("w") as fh:
            for dialog in dialogs:
                fh.write(dialog_to_line(dialog) + "\n")
    except OSError as exc:
        raise CorpusError(f"cannot write corpus {path}: {exc}") from exc


def load_fused_corpus(path: str | Path) -> DialogSet:
    path = Path(path)
    dialogs = []
    try:
        with path.open() as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    data = json.loads(line)
                    dialogs.append(Dialog.from_json(data))
                except (json.JSONDecodeError, KeyError, ValueError, CorpusValidationError) as exc:
                    raise CorpusParseError(f"corpus {path}, line {line_no}: {exc}") from exc
    except OSError as exc:
        raise CorpusParseError(f"cannot read corpus {path}: {exc}") from exc
    return DialogSet(dialogs)
