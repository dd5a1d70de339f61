"""HTTP service for interactive model evaluation: live chat sessions with
goal cards, post-chat ratings, pairwise comparisons, and aggregation.

Persistence is an append-only JSONL event log; nothing is ever mutated or
deleted, and aggregates are always recomputed from the raw records. Every
persisted system turn carries the state it was generated from.
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .corpus import GoalCard
from .evalkit import paired_bootstrap_pvalue
from .pivot.chat import ChatSession, KnowledgeRouter, SequenceModel, chat_turn
from .pivot.state import encode_state


class ServiceError(Exception):
    def __init__(self, message: str, code: str = "error", status: int = 400) -> None:
        super().__init__(message)
        self.code = code
        self.status = status


class NotFoundError(ServiceError):
    def __init__(self, message: str) -> None:
        super().__init__(message, code="not_found", status=404)


class ConflictError(ServiceError):
    def __init__(self, message: str) -> None:
        super().__init__(message, code="conflict", status=409)


class ValidationError(ServiceError):
    def __init__(self, message: str) -> None:
        super().__init__(message, code="validation_error", status=400)


SESSION_OPEN = "open"
SESSION_RATED = "rated"
SESSION_ABANDONED = "abandoned"


def _check_scale(name: str, value: int) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or not 1 <= value <= 5:
        raise ValidationError(f"{name} must be an integer in 1..5, got {value!r}")
    return value


@dataclass
class Rating:
    session_id: str
    success: bool
    appropriateness: int
    engagingness: int
    rater_id: str

    def __post_init__(self) -> None:
        _check_scale("appropriateness", self.appropriateness)
        _check_scale("engagingness", self.engagingness)

    def to_json(self) -> dict:
        return {
            "session_id": self.session_id,
            "success": self.success,
            "appropriateness": self.appropriateness,
            "engagingness": self.engagingness,
            "rater_id": self.rater_id,
        }


OVERALL_CHOICES = ("a", "b", "tie")


@dataclass
class PairwiseJudgment:
    dialog_a_id: str
    dialog_b_id: str
    overall: str
    a_appropriateness: int
    a_engagingness: int
    b_appropriateness: int
    b_engagingness: int
    rater_id: str

    def __post_init__(self) -> None:
        if self.dialog_a_id == self.dialog_b_id:
            raise ValidationError("pairwise judgment needs two distinct dialogs")
        if self.overall not in OVERALL_CHOICES:
            raise ValidationError(f"overall must be one of {OVERALL_CHOICES}")
        for name in ("a_appropriateness", "a_engagingness", "b_appropriateness", "b_engagingness"):
            _check_scale(name, getattr(self, name))

    def to_json(self) -> dict:
        return {
            "dialog_a_id": self.dialog_a_id,
            "dialog_b_id": self.dialog_b_id,
            "overall": self.overall,
            "a_appropriateness": self.a_appropriateness,
            "a_engagingness": self.a_engagingness,
            "b_appropriateness": self.b_appropriateness,
            "b_engagingness": self.b_engagingness,
            "rater_id": self.rater_id,
        }


class EventStore:
    """Append-only JSONL log; writes are atomic per record."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def append(self, record: dict) -> None:
        line = json.dumps(record, sort_keys=True, separators=(",", ":"))
        with self._lock:
            with self.path.open("a") as fh:
                fh.write(line + "\n")
                fh.flush()

    def read_all(self) -> list[dict]:
        if not self.path.exists():
            return []
        with self._lock:
            lines = self.path.read_text().splitlines()
        return [json.loads(line) for line in lines if line.strip()]


class GoalSampler:
    """Samples goal cards for new sessions; restricted to single-domain
    goals by default to keep live tasks manageable."""

    def __init__(self, cards: Sequence[GoalCard], single_domain: bool = True, seed: int = 0) -> None:
        pool = [c for c in cards if not single_domain or len(c.domains) == 1]
        if not pool:
            raise ServiceError("no goal cards available to sample")
        self.pool = pool
        self.rng = np.random.default_rng(seed)

    def sample(self) -> GoalCard:
        return self.pool[int(self.rng.integers(len(self.pool)))]


ModelFactory = Callable[[], tuple[SequenceModel, KnowledgeRouter]]


@dataclass
class LiveSession:
    id: str
    model_name: str
    goal_card: GoalCard
    chat: ChatSession
    model: SequenceModel
    router: KnowledgeRouter
    status: str = SESSION_OPEN
    created_at: float = 0.0
    last_active: float = 0.0
    turns: list[dict] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)

    def view(self) -> dict:
        return {
            "id": self.id,
            "model_name": self.model_name,
            "goal_card": self.goal_card.to_json(),
            "turns": list(self.turns),
            "status": self.status,
            "created_at": self.created_at,
        }


class EvalService:
    """Session, rating, and comparison workflows over registered models."""

    def __init__(
        self,
        models: Mapping[str, ModelFactory],
        goal_sampler: GoalSampler,
        store: EventStore,
        session_timeout_s: float = 3600.0,
        clock: Callable[[], float] = time.time,
    ) -> None:
        self.models = dict(models)
        self.goal_sampler = goal_sampler
        self.store = store
        self.session_timeout_s = session_timeout_s
        self.clock = clock
        self.sessions: dict[str, LiveSession] = {}
        self._lock = threading.Lock()
        self._restore()

    # -- persistence --------------------------------------------------------

    def _restore(self) -> None:
        """Rebuild session records from the event log. Restored sessions
        get a fresh model instance; transcript state is authoritative."""
        for event in self.store.read_all():
            kind = event["kind"]
            if kind == "session_created":
                if event["model_name"] not in self.models:
                    continue
                session = self._new_session_object(
                    event["session_id"],
                    event["model_name"],
                    GoalCard.from_json(event["goal_card"]),
                    event["created_at"],
                )
                self.sessions[session.id] = session
            elif kind == "exchange":
                session = self.sessions.get(event["session_id"])
                if session is None:
                    continue
                session.turns.extend(event["turns"])
                session.last_active = event["at"]
            elif kind == "rating":
                session = self.sessions.get(event["rating"]["session_id"])
                if session is not None:
                    session.status = SESSION_RATED

    def _new_session_object(
        self, session_id: str, model_name: str, goal: GoalCard, created_at: float
    ) -> LiveSession:
        model, router = self.models[model_name]()
        return LiveSession(
            id=session_id,
            model_name=model_name,
            goal_card=goal,
            chat=ChatSession(id=session_id),
            model=model,
            router=router,
            created_at=created_at,
            last_active=created_at,
        )

    # -- session lifecycle ---------------------------------------------------

    def create_session(self, model_name: str) -> LiveSession:
        if model_name not in self.models:
            raise NotFoundError(f"unknown model {model_name!r}")
        now = self.clock()
        session = self._new_session_object(uuid.uuid4().hex[:12], model_name, self.goal_sampler.sample(), now)
        with self._lock:
            self.sessions[session.id] = session
        self.store.append(
            {
                "kind": "session_created",
                "session_id": session.id,
                "model_name": model_name,
                "goal_card": session.goal_card.to_json(),
                "created_at": now,
            }
        )
        return session

    def get_session(self, session_id: str) -> LiveSession:
        session = self.sessions.get(session_id)
        if session is None:
            raise NotFoundError(f"no session {session_id!r}")
        self._expire_if_idle(session)
        return session

    def list_sessions(self) -> list[LiveSession]:
        return [self.get_session(sid) for sid in sorted(self.sessions)]

    def _expire_if_idle(self, session: LiveSession) -> None:
        if session.status == SESSION_OPEN and self.clock() - session.last_active > self.session_timeout_s:
            session.status = SESSION_ABANDONED

    # -- chatting -------------------------------------------------------------

    def post_message(self, session_id: str, text: str) -> dict:
        session = self.get_session(session_id)
        if not text.strip():
            raise ValidationError("message text is empty")
        if session.status != SESSION_OPEN:
            raise ConflictError(f"session {session_id} is {session.status}")
        with session.lock:
            state, knowledge, reply = chat_turn(session.chat, text, session.model, session.router)
            now = self.clock()
            session.last_active = now
            turn_pair = [
                {"speaker": "user", "text": text, "state": None, "knowledge_kind": None},
                {
                    "speaker": "system",
                    "text": reply,
                    "state": encode_state(state),
                    "knowledge_kind": knowledge.kind.value,
                },
            ]
            session.turns.extend(turn_pair)
            self.store.append(
                {"kind": "exchange", "session_id": session_id, "turns": turn_pair, "at": now}
            )
        return {
            "reply": reply,
            "state": encode_state(state),
            "knowledge_kind": knowledge.kind.value,
        }

    # -- ratings ---------------------------------------------------------------

    def submit_rating(self, session_id: str, rating: Rating) -> None:
        session = self.get_session(session_id)
        if rating.session_id != session_id:
            raise ValidationError("rating session_id mismatch")
        for event in self.store.read_all():
            if (
                event["kind"] == "rating"
                and event["rating"]["session_id"] == session_id
                and event["rating"]["rater_id"] == rating.rater_id
            ):
                raise ConflictError(f"rater {rating.rater_id!r} already rated session {session_id}")
        self.store.append({"kind": "rating", "rating": rating.to_json(), "at": self.clock()})
        session.status = SESSION_RATED

    def submit_pairwise(self, judgment: PairwiseJudgment) -> None:
        for dialog_id in (judgment.dialog_a_id, judgment.dialog_b_id):
            if dialog_id not in self.sessions:
                raise NotFoundError(f"no session {dialog_id!r}")
        for event in self.store.read_all():
            if event["kind"] != "pairwise":
                continue
            j = event["judgment"]
            if (
                {j["dialog_a_id"], j["dialog_b_id"]}
                == {judgment.dialog_a_id, judgment.dialog_b_id}
                and j["rater_id"] == judgment.rater_id
            ):
                raise ConflictError(
                    f"rater {judgment.rater_id!r} already judged this dialog pair"
                )
        self.store.append({"kind": "pairwise", "judgment": judgment.to_json(), "at": self.clock()})

    # -- aggregation -------------------------------------------------------------

    def aggregate(self, bootstrap_resamples: int = 10_000) -> dict:
        """Recompute summary tables from the raw event log."""
        events = self.store.read_all()
        session_models: dict[str, str] = {}
        for event in events:
            if event["kind"] == "session_created":
                session_models[event["session_id"]] = event["model_name"]

        per_model: dict[str, dict[str, list[float]]] = {}
        for event in events:
            if event["kind"] != "rating":
                continue
            rating = event["rating"]
            model = session_models.get(rating["session_id"])
            if model is None:
                continue
            bucket = per_model.setdefault(
                model, {"success": [], "appropriateness": [], "engagingness": []}
            )
            bucket["success"].append(1.0 if rating["success"] else 0.0)
            bucket["appropriateness"].append(float(rating["appropriateness"]))
            bucket["engagingness"].append(float(rating["engagingness"]))

        ratings_table = {}
        for model, bucket in sorted(per_model.items()):
            ratings_table[model] = {
                metric: {
                    "mean": float(np.mean(values)),
                    "std": float(np.std(values, ddof=1)) if len(values) > 1 else 0.0,
                    "n": len(values),
                }
                for metric, values in bucket.items()
            }

        pair_buckets: dict[tuple[str, str], list[dict]] = {}
        for event in events:
            if event["kind"] != "pairwise":
                continue
            judgment = event["judgment"]
            model_a = session_models.get(judgment["dialog_a_id"], "?")
            model_b = session_models.get(judgment["dialog_b_id"], "?")
            key = (model_a, model_b)
            if model_b < model_a:
                key = (model_b, model_a)
                judgment = dict(judgment)
                judgment["overall"] = {"a": "b", "b": "a", "tie": "tie"}[judgment["overall"]]
                for metric in ("appropriateness", "engagingness"):
                    judgment[f"a_{metric}"], judgment[f"b_{metric}"] = (
                        judgment[f"b_{metric}"],
                        judgment[f"a_{metric}"],
                    )
            pair_buckets.setdefault(key, []).append(judgment)

        pairwise_table = {}
        for (model_a, model_b), judgments in sorted(pair_buckets.items()):
            n = len(judgments)
            wins = sum(1 for j in judgments if j["overall"] == "a")
            ties = sum(1 for j in judgments if j["overall"] == "tie")
            losses = n - wins - ties
            a_scores = [1.0 if j["overall"] == "a" else 0.0 for j in judgments]
            b_scores = [1.0 if j["overall"] == "b" else 0.0 for j in judgments]
            p_value = (
                paired_bootstrap_pvalue(a_scores, b_scores, n_resamples=bootstrap_resamples)
                if n > 0
                else 1.0
            )
            pairwise_table[f"{model_a} vs {model_b}"] = {
                "n": n,
                "win_pct": 100.0 * wins / n,
                "tie_pct": 100.0 * ties / n,
                "loss_pct": 100.0 * losses / n,
                "overall_p_value": p_value,
                "a_appropriateness_mean": float(np.mean([j["a_appropriateness"] for j in judgments])),
                "b_appropriateness_mean": float(np.mean([j["b_appropriateness"] for j in judgments])),
                "a_engagingness_mean": float(np.mean([j["a_engagingness"] for j in judgments])),
                "b_engagingness_mean": float(np.mean([j["b_engagingness"] for j in judgments])),
            }

        return {"ratings": ratings_table, "pairwise": pairwise_table}


# --------------------------------------------------------------------------
# HTTP layer
# --------------------------------------------------------------------------


from pydantic import BaseModel


class CreateSessionBody(BaseModel):
    model_name: str

    model_config = {"protected_namespaces": ()}


class MessageBody(BaseModel):
    text: str


class RatingBody(BaseModel):
    success: bool
    appropriateness: int
    engagingness: int


class PairwiseBody(BaseModel):
    dialog_a_id: str
    dialog_b_id: str
    overall: str
    a_appropriateness: int
    a_engagingness: int
    b_appropriateness: int
    b_engagingness: int


def create_app(service: EvalService):
    from fastapi import FastAPI, Header, Request
    from fastapi.exceptions import RequestValidationError
    from fastapi.middleware.cors import CORSMiddleware
    from fastapi.responses import JSONResponse

    app = FastAPI(title="dialogweave evaluation service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    app.state.service = service

    @app.exception_handler(ServiceError)
    async def service_error_handler(_request: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.status, content={"code": exc.code, "message": str(exc)})

    @app.exception_handler(RequestValidationError)
    async def validation_handler(_request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=400, content={"code": "validation_error", "message": str(exc.errors())}
        )

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        return service.create_session(body.model_name).view()

    @app.get("/sessions")
    def list_sessions():
        return {"sessions": [s.view() for s in service.list_sessions()]}

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return service.get_session(session_id).view()

    @app.post("/sessions/{session_id}/messages")
    def post_message(session_id: str, body: MessageBody):
        return service.post_message(session_id, body.text)

    @app.post("/sessions/{session_id}/rating")
    def submit_rating(
        session_id: str, body: RatingBody, x_rater_id: str = Header(default="anonymous")
    ):
        rating = Rating(
            session_id=session_id,
            success=body.success,
            appropriateness=body.appropriateness,
            engagingness=body.engagingness,
            rater_id=x_rater_id,
        )
        service.submit_rating(session_id, rating)
        return {"status": "ok"}

    @app.post("/pairwise")
    def submit_pairwise(body: PairwiseBody, x_rater_id: str = Header(default="anonymous")):
        judgment = PairwiseJudgment(
            dialog_a_id=body.dialog_a_id,
            dialog_b_id=body.dialog_b_id,
            overall=body.overall,
            a_appropriateness=body.a_appropriateness,
            a_engagingness=body.a_engagingness,
            b_appropriateness=body.b_appropriateness,
            b_engagingness=body.b_engagingness,
            rater_id=x_rater_id,
        )
        service.submit_pairwise(judgment)
        return {"status": "ok"}

    @app.get("/aggregates")
    def aggregates():
        return service.aggregate()

    return app
