"""Generation backend contracts, the deterministic scripted stub, the
remote JSON-over-HTTP adapter, and the backend registry."""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Protocol


class BackendError(Exception):
    """Base class for backend failures."""


class ScriptExhaustedError(BackendError):
    pass


class TransportError(BackendError):
    """Retriable: the remote backend was unreachable or timed out."""


class UnknownBackendError(BackendError):
    pass


class SegmentTag(str, Enum):
    CONTEXT = "context"
    GOAL = "goal"
    STATE = "state"
    KNOWLEDGE = "knowledge"
    PERSONA = "persona"


@dataclass(frozen=True)
class Segment:
    tag: SegmentTag
    text: str


@dataclass(frozen=True)
class GenRequest:
    """Conditioning bundle for one generation call."""

    segments: tuple[Segment, ...]
    max_tokens: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.segments:
            raise BackendError("a GenRequest needs at least one segment")

    def texts(self, tag: SegmentTag) -> list[str]:
        return [s.text for s in self.segments if s.tag is tag]

    def first(self, tag: SegmentTag) -> str:
        texts = self.texts(tag)
        return texts[0] if texts else ""


def request(*segments: tuple[SegmentTag, str] | Segment, max_tokens: int = 64, seed: int = 0) -> GenRequest:
    """Convenience constructor: ``request((SegmentTag.GOAL, "norwich"), ...)``."""
    built = tuple(
        s if isinstance(s, Segment) else Segment(tag=s[0], text=s[1]) for s in segments
    )
    return GenRequest(segments=built, max_tokens=max_tokens, seed=seed)


class BackendKind(str, Enum):
    SCRIPTED_STUB = "scripted_stub"
    REMOTE = "remote"
    LOCAL_TOY = "local_toy"


@dataclass
class BackendDescriptor:
    name: str
    kind: BackendKind
    config: dict = field(default_factory=dict)


class GenerationBackend(Protocol):
    def generate(self, request: GenRequest) -> str: ...


def _render_template(template: str, req: GenRequest, call_index: int) -> str:
    """Fill {goal}/{persona}/{state}/{knowledge}/{context_last}/{call_index}
    from the request; missing segments render as empty strings, keeping the
    output a pure function of (script entry, call index, request)."""
    context_texts = req.texts(SegmentTag.CONTEXT)
    values = {
        "goal": req.first(SegmentTag.GOAL),
        "persona": req.first(SegmentTag.PERSONA),
        "state": req.first(SegmentTag.STATE),
        "knowledge": req.first(SegmentTag.KNOWLEDGE),
        "context_last": context_texts[-1] if context_texts else "",
        "call_index": str(call_index),
    }
    out = template
    for key, value in values.items():
        out = out.replace("{" + key + "}", value)
    return out


class ScriptedBackend:
    """Replays a fixed script, one entry per call, with template
    substitution from the request. Call order is advanced atomically, so
    concurrent callers each get a distinct entry. Requests are recorded
    for capture-style assertions in tests."""

    def __init__(self, script: Iterable[str], cycle: bool = False, name: str = "scripted") -> None:
        self.script = list(script)
        if not self.script:
            raise BackendError("scripted backend needs a nonempty script")
        self.cycle = cycle
        self.name = name
        self.calls: list[GenRequest] = []
        self._index = 0
        self._lock = threading.Lock()

    def generate(self, req: GenRequest) -> str:
        with self._lock:
            index = self._index
            if index >= len(self.script):
                if not self.cycle:
                    raise ScriptExhaustedError(
                        f"backend {self.name!r}: script exhausted after {len(self.script)} calls"
                    )
                index %= len(self.script)
            self._index += 1
            self.calls.append(req)
        text = _render_template(self.script[index], req, index)
        if not text:
            raise BackendError(f"backend {self.name!r}: script entry {index} rendered empty")
        return text

    def reset(self) -> None:
        with self._lock:
            self._index = 0
            self.calls.clear()


class RemoteBackend:
    """Adapter for a generation server speaking the documented protocol:
    POST endpoint with {segments: [{tag, text}], max_tokens, seed},
    response {text: "..."}."""

    def __init__(self, endpoint: str, timeout: float = 10.0, name: str = "remote") -> None:
        self.endpoint = endpoint
        self.timeout = timeout
        self.name = name

    def generate(self, req: GenRequest) -> str:
        import httpx

        payload = {
            "segments": [{"tag": s.tag.value, "text": s.text} for s in req.segments],
            "max_tokens": req.max_tokens,
            "seed": req.seed,
        }
        try:
            response = httpx.post(self.endpoint, json=payload, timeout=self.timeout)
        except httpx.TransportError as exc:
            raise TransportError(f"backend {self.name!r} unreachable: {exc}") from exc
        if response.status_code >= 500:
            raise TransportError(f"backend {self.name!r}: HTTP {response.status_code}")
        if response.status_code != 200:
            raise BackendError(f"backend {self.name!r}: HTTP {response.status_code}")
        text = response.json().get("text", "")
        if not text:
            raise BackendError(f"backend {self.name!r} returned an empty utterance")
        return text


class BackendRegistry:
    def __init__(self) -> None:
        self._backends: dict[str, GenerationBackend] = {}

    def register(self, name: str, backend: GenerationBackend) -> None:
        if name in self._backends:
            raise BackendError(f"backend name {name!r} already registered")
        self._backends[name] = backend

    def get(self, name: str) -> GenerationBackend:
        try:
            return self._backends[name]
        except KeyError:
            raise UnknownBackendError(f"no backend named {name!r}") from None

    def names(self) -> list[str]:
        return sorted(self._backends)


def load_registry(path: str | Path) -> BackendRegistry:
    """Build a registry from a JSON config: a list of descriptors
    ``{name, kind, ...}`` where scripted entries carry ``script`` or
    ``script_path``, remote entries an ``endpoint``, and local toy entries
    a ``model_path``."""
    path = Path(path)
    entries = json.loads(path.read_text())
    registry = BackendRegistry()
    for entry in entries:
        name = entry["name"]
        kind = BackendKind(entry["kind"])
        if kind is BackendKind.SCRIPTED_STUB:
            if "script_path" in entry:
                script = json.loads((path.parent / entry["script_path"]).read_text())
            else:
                script = entry["script"]
            backend: GenerationBackend = ScriptedBackend(
                script, cycle=entry.get("cycle", False), name=name
            )
        elif kind is BackendKind.REMOTE:
            backend = RemoteBackend(
                entry["endpoint"], timeout=entry.get("timeout", 10.0), name=name
            )
        elif kind is BackendKind.LOCAL_TOY:
            from .toy import ToyBackend, ToySequenceModel

            model = ToySequenceModel.load(path.parent / entry["model_path"])
            backend = ToyBackend(model, name=name)
        else:  # pragma: no cover - enum is closed
            raise BackendError(f"unsupported backend kind {kind}")
        registry.register(name, backend)
    return registry
