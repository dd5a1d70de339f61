"""The dialog state codec: mode + knowledge query, serialized as ``m: q``.

Task-mode queries are belief states rendered as ``domain slot=value``
triples in canonical domain/slot order, so exact-match comparison of
encoded states is well-defined. Chitchat-mode queries are free-text search
strings; an empty query means no external knowledge is needed.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..corpus import DOMAIN_ORDER, BeliefState, Mode


class StateParseError(Exception):
    pass


_KNOWN_DOMAINS = frozenset(DOMAIN_ORDER)


@dataclass(frozen=True)
class State:
    mode: Mode
    query: str = ""


def encode_belief(belief: BeliefState) -> str:
    """``domain slot=value ...`` in canonical order; empty belief -> ""."""
    parts: list[str] = []
    current_domain = None
    for domain, slot, value in belief.canonical_items():
        if domain != current_domain:
            parts.append(domain)
            current_domain = domain
        parts.append(f"{slot}={value}")
    return " ".join(parts)


def parse_belief(text: str) -> BeliefState:
    """Inverse of ``encode_belief``, tolerant of spacing around ``=``.

    Values may span several tokens; a bare token is treated as a domain
    switch only when no value is being collected or when it names a known
    domain (values that literally contain a domain word are a documented
    limitation of this surface syntax).
    """
    belief = BeliefState()
    tokens = text.split()
    domain: str | None = None
    slot: str | None = None
    value_parts: list[str] = []

    def flush() -> None:
        nonlocal slot, value_parts
        if slot is None:
            return
        value = " ".join(value_parts).strip()
        if not value:
            raise StateParseError(f"slot {slot!r} has an empty value")
        assert domain is not None
        belief.set(domain, slot, value)
        slot = None
        value_parts = []

    i = 0
    while i < len(tokens):
        token = tokens[i]
        if token == "=":
            # Glue form "slot = value": fold into the previous bare token.
            raise StateParseError("dangling '=' token")
        if "=" in token:
            flush()
            if domain is None:
                raise StateParseError(f"slot assignment {token!r} before any domain")
            slot_name, _, value_start = token.partition("=")
            if not slot_name:
                raise StateParseError(f"missing slot name in {token!r}")
            slot = slot_name
            value_parts = [value_start] if value_start else []
        elif slot is not None and i + 1 < len(tokens) and tokens[i + 1] == "=":
            # "slot = value" with spaces: current token is the next slot name.
            flush()
            if i + 2 >= len(tokens):
                raise StateParseError(f"slot {token!r} has no value")
            slot = token
            value_parts = []
            i += 1  # skip the '='
        elif slot is None:
            if i + 1 < len(tokens) and tokens[i + 1] == "=":
                if domain is None:
                    raise StateParseError(f"slot assignment {token!r} before any domain")
                slot = token
                value_parts = []
                i += 1
            else:
                domain = token
                slot = None
        else:
            if token in _KNOWN_DOMAINS:
                flush()
                domain = token
            else:
                value_parts.append(token)
        i += 1
    flush()
    return belief


def encode_state(state: State) -> str:
    """Lowercase mode token, colon, then the query payload (if any)."""
    prefix = f"{state.mode.value}:"
    return f"{prefix} {state.query}" if state.query else prefix


def parse_state(text: str) -> State:
    """Total parser: returns a State or raises StateParseError, never
    anything else. Task-mode queries are validated against the belief
    grammar and re-encoded canonically."""
    if not isinstance(text, str):
        raise StateParseError("state must be a string")
    head, sep, tail = text.partition(":")
    if not sep:
        raise StateParseError(f"no mode separator in {text!r}")
    mode_token = head.strip().lower()
    try:
        mode = Mode(mode_token)
    except ValueError:
        raise StateParseError(f"unknown mode token {mode_token!r}") from None
    query = " ".join(tail.split())
    if mode is Mode.TOD and query:
        try:
            belief = parse_belief(query)
        except StateParseError:
            raise
        except Exception as exc:
            raise StateParseError(f"belief grammar failure: {exc}") from exc
        query = encode_belief(belief)
    return State(mode=mode, query=query)


def state_from_belief(belief: BeliefState) -> State:
    return State(mode=Mode.TOD, query=encode_belief(belief))


def belief_of(state: State) -> BeliefState:
    if state.mode is not Mode.TOD:
        raise StateParseError("only task-mode states carry a belief")
    return parse_belief(state.query) if state.query else BeliefState()
