"""Knowledge acquisition: belief-constrained database lookup and web search.

Two routing branches ground responses: a database state computed from the
belief constraints, or search snippets fetched through a provider client.
Time-valued slots are compared as exact strings; interval semantics are a
documented limitation at this scale.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Protocol

from .corpus import BeliefState, CorpusParseError


class KnowledgeError(Exception):
    """Base class for knowledge-layer failures."""


class UnknownDomainError(KnowledgeError):
    pass


class ProviderTransportError(KnowledgeError):
    """Retriable: the provider was unreachable or timed out."""


class ProviderQuotaError(KnowledgeError):
    """Terminal: the provider refused the request (quota/auth)."""


class KnowledgeKind(str, Enum):
    DB_STATE = "db_state"
    SEARCH = "search"
    EMPTY = "empty"


@dataclass
class DBRecord:
    domain: str
    attributes: dict[str, str]

    def __post_init__(self) -> None:
        if not self.attributes:
            raise KnowledgeError(f"record in domain {self.domain!r} has no attributes")
        self.domain = self.domain.lower()
        self.attributes = {k.lower(): str(v) for k, v in self.attributes.items()}

    def to_json(self) -> dict:
        return {"domain": self.domain, "attributes": dict(self.attributes)}

    @classmethod
    def from_json(cls, data: Mapping) -> "DBRecord":
        return cls(domain=data["domain"], attributes=dict(data["attributes"]))


@dataclass
class KnowledgeResult:
    kind: KnowledgeKind
    db_match_count: int | None = None
    top_record: DBRecord | None = None
    snippets: list[str] | None = None

    def __post_init__(self) -> None:
        if self.kind is KnowledgeKind.DB_STATE and self.db_match_count is None:
            raise KnowledgeError("DB_STATE result requires a match count")
        if self.kind is KnowledgeKind.EMPTY and (
            self.db_match_count is not None or self.top_record or self.snippets
        ):
            raise KnowledgeError("EMPTY result carries no payload")

    @classmethod
    def empty(cls) -> "KnowledgeResult":
        return cls(kind=KnowledgeKind.EMPTY)

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "db_match_count": self.db_match_count,
            "top_record": self.top_record.to_json() if self.top_record else None,
            "snippets": list(self.snippets) if self.snippets is not None else None,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "KnowledgeResult":
        return cls(
            kind=KnowledgeKind(data["kind"]),
            db_match_count=data.get("db_match_count"),
            top_record=DBRecord.from_json(data["top_record"]) if data.get("top_record") else None,
            snippets=list(data["snippets"]) if data.get("snippets") is not None else None,
        )


@dataclass
class Database:
    """Records in canonical order, grouped by domain."""

    records: list[DBRecord] = field(default_factory=list)

    def domains(self) -> set[str]:
        return {r.domain for r in self.records}

    def by_domain(self, domain: str) -> list[DBRecord]:
        domain = domain.lower()
        return [r for r in self.records if r.domain == domain]

    def __len__(self) -> int:
        return len(self.records)


def load_database(path: str | Path) -> Database:
    """Read a ``{"domain": [ {slot: value}, ... ]}`` JSON database."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CorpusParseError(f"database {path}: {exc}") from exc
    records = []
    for domain, rows in raw.items():
        for row in rows:
            records.append(DBRecord(domain=domain, attributes=row))
    return Database(records)


def record_matches(record: DBRecord, constraints: Mapping[str, str]) -> bool:
    """Case-insensitive exact match; ``dontcare`` matches anything."""
    for slot, value in constraints.items():
        if value.lower() == "dontcare":
            continue
        actual = record.attributes.get(slot.lower())
        if actual is None or actual.lower() != value.lower():
            return False
    return True


def db_lookup(belief: BeliefState, db: Database, domain: str | None = None) -> KnowledgeResult:
    """Count and first record of entries satisfying the belief constraints.

    The query runs against a single domain: the one given, otherwise the
    belief's last-listed domain. Records are scanned in canonical database
    order; an unsatisfiable belief still yields a DB_STATE result with
    count 0.
    """
    if domain is None:
        belief_domains = belief.domains()
        if not belief_domains:
            raise UnknownDomainError("belief constrains no domain and none was given")
        domain = belief_domains[-1]
    domain = domain.lower()
    if domain not in db.domains():
        raise UnknownDomainError(f"domain {domain!r} not in database")
    constraints = belief.constraints.get(domain, {})
    matches = [r for r in db.by_domain(domain) if record_matches(r, constraints)]
    return KnowledgeResult(
        kind=KnowledgeKind.DB_STATE,
        db_match_count=len(matches),
        top_record=matches[0] if matches else None,
    )


# --------------------------------------------------------------------------
# Web search
# --------------------------------------------------------------------------


class SearchProvider(Protocol):
    def search(self, query: str, limit: int) -> list[str]: ...


class MockSearchProvider:
    """Deterministic provider for tests and offline runs: a fixed mapping
    from queries to snippet lists, with substring fallback."""

    def __init__(self, responses: Mapping[str, list[str]] | None = None) -> None:
        self.responses = {k.lower(): list(v) for k, v in (responses or {}).items()}

    def search(self, query: str, limit: int) -> list[str]:
        key = query.lower().strip()
        if key in self.responses:
            return self.responses[key][:limit]
        for known, snippets in self.responses.items():
            if known in key:
                return snippets[:limit]
        return [f"No results found for '{query}'."][:limit]


class HttpSearchProvider:
    """JSON-over-HTTP provider: POST {query, limit} -> {snippets: [...]}.

    The API key is read from the environment variable named in the config,
    never stored in files.
    """

    def __init__(self, endpoint: str, api_key_env: str | None = None, timeout: float = 10.0) -> None:
        self.endpoint = endpoint
        self.api_key_env = api_key_env
        self.timeout = timeout

    def search(self, query: str, limit: int) -> list[str]:
        import os

        import httpx

        headers = {}
        if self.api_key_env:
            key = os.environ.get(self.api_key_env)
            if not key:
                raise ProviderQuotaError(f"missing API key in ${self.api_key_env}")
            headers["Authorization"] = f"Bearer {key}"
        try:
            response = httpx.post(
                self.endpoint,
                json={"query": query, "limit": limit},
                headers=headers,
                timeout=self.timeout,
            )
        except httpx.TransportError as exc:
            raise ProviderTransportError(f"search provider unreachable: {exc}") from exc
        if response.status_code in (402, 403, 429):
            raise ProviderQuotaError(f"search provider refused: HTTP {response.status_code}")
        if response.status_code >= 500:
            raise ProviderTransportError(f"search provider error: HTTP {response.status_code}")
        return [str(s) for s in response.json().get("snippets", [])][:limit]


class CachedSearchClient:
    """Serves queries from an on-disk JSON cache, falling back to the
    wrapped provider. Keeps synthesis and evaluation runs reproducible
    offline; cache writes are serialized."""

    def __init__(self, provider: SearchProvider, cache_dir: str | Path | None = None) -> None:
        self.provider = provider
        self.cache_dir = Path(cache_dir) if cache_dir else None
        if self.cache_dir:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _cache_path(self, query: str) -> Path:
        digest = hashlib.sha256(query.lower().strip().encode()).hexdigest()[:24]
        assert self.cache_dir is not None
        return self.cache_dir / f"{digest}.json"

    def search(self, query: str, limit: int) -> list[str]:
        if self.cache_dir:
            path = self._cache_path(query)
            with self._lock:
                if path.exists():
                    return json.loads(path.read_text())["snippets"][:limit]
        snippets = self.provider.search(query, limit)
        if self.cache_dir:
            with self._lock:
                self._cache_path(query).write_text(
                    json.dumps({"query": query, "snippets": snippets})
                )
        return snippets


DEFAULT_SNIPPET_LIMIT = 3


def web_search(query: str, provider: SearchProvider, limit: int = DEFAULT_SNIPPET_LIMIT) -> KnowledgeResult:
    """Fetch up to ``limit`` snippets for a nonempty query.

    An empty query is a caller error: the empty-query case means "no
    external knowledge needed" and is short-circuited upstream.
    """
    if not query.strip():
        raise KnowledgeError("web_search requires a nonempty query")
    if limit <= 0:
        return KnowledgeResult.empty()
    snippets = provider.search(query, limit)[:limit]
    return KnowledgeResult(kind=KnowledgeKind.SEARCH, snippets=snippets)
