import threading

import pytest
from fastapi.testclient import TestClient

from dialogweave.knowledge import Database
from dialogweave.pivot.chat import KnowledgeRouter, ScriptedSequenceModel
from dialogweave.service import (
    EvalService,
    EventStore,
    GoalSampler,
    Rating,
    ValidationError,
    create_app,
)
from dialogweave.testing import fixture_database, fixture_goal_cards

SCRIPT = [
    "odd:",
    "hello there , lovely to meet you !",
    "tod: restaurant area=centre",
    "[value_name] is a nice place in the centre .",
    "odd:",
    "always happy to help !",
]


def make_service(tmp_path, clock=None, timeout=3600.0):
    db = fixture_database()

    def scripted_factory():
        return ScriptedSequenceModel(SCRIPT, cycle=True), KnowledgeRouter(db=db)

    def second_factory():
        return ScriptedSequenceModel(["odd:", "a rival reply !"], cycle=True), KnowledgeRouter(db=db)

    models = {"pivot-toy": scripted_factory, "task-only": second_factory}
    sampler = GoalSampler(fixture_goal_cards(30, seed=2), single_domain=True, seed=5)
    store = EventStore(tmp_path / "events.jsonl")
    kwargs = {"session_timeout_s": timeout}
    if clock is not None:
        kwargs["clock"] = clock
    return EvalService(models, sampler, store, **kwargs)


@pytest.fixture()
def client(tmp_path):
    return TestClient(create_app(make_service(tmp_path)))


def start_session(client, model="pivot-toy"):
    response = client.post("/sessions", json={"model_name": model})
    assert response.status_code == 201
    return response.json()


def rate(client, session_id, rater="r1", success=True, appropriateness=4, engagingness=5):
    return client.post(
        f"/sessions/{session_id}/rating",
        json={"success": success, "appropriateness": appropriateness, "engagingness": engagingness},
        headers={"X-Rater-Id": rater},
    )


class TestSessionLifecycle:
    def test_create_returns_goal_card(self, client):
        session = start_session(client)
        assert session["status"] == "open"
        assert len(session["goal_card"]) == 1  # single-domain goal
        assert session["turns"] == []

    def test_unknown_model_is_404(self, client):
        response = client.post("/sessions", json={"model_name": "ghost"})
        assert response.status_code == 404
        assert response.json()["code"] == "not_found"

    def test_exchange_persists_state_and_knowledge_kind(self, client):
        session = start_session(client)
        response = client.post(
            f"/sessions/{session['id']}/messages", json={"text": "hello there"}
        )
        assert response.status_code == 200
        body = response.json()
        assert body["reply"]
        assert body["state"] == "odd:"
        assert body["knowledge_kind"] == "empty"
        stored = client.get(f"/sessions/{session['id']}").json()
        assert len(stored["turns"]) == 2
        assert stored["turns"][1]["state"] == "odd:"
        assert stored["turns"][1]["knowledge_kind"] == "empty"

    def test_tod_turn_records_db_state(self, client):
        session = start_session(client)
        client.post(f"/sessions/{session['id']}/messages", json={"text": "hi"})
        response = client.post(
            f"/sessions/{session['id']}/messages", json={"text": "restaurant please"}
        )
        assert response.json()["knowledge_kind"] == "db_state"

    def test_message_to_missing_session_is_404(self, client):
        assert client.post("/sessions/zzz/messages", json={"text": "hi"}).status_code == 404

    def test_empty_message_rejected(self, client):
        session = start_session(client)
        response = client.post(f"/sessions/{session['id']}/messages", json={"text": "  "})
        assert response.status_code == 400

    def test_sampler_only_emits_single_domain_goals(self, tmp_path):
        sampler = GoalSampler(fixture_goal_cards(40, seed=2), single_domain=True, seed=0)
        for _ in range(100):
            assert len(sampler.sample().domains) == 1


class TestRatings:
    def test_rating_closes_session(self, client):
        session = start_session(client)
        client.post(f"/sessions/{session['id']}/messages", json={"text": "hello"})
        assert rate(client, session["id"]).status_code == 200
        assert client.get(f"/sessions/{session['id']}").json()["status"] == "rated"
        follow_up = client.post(f"/sessions/{session['id']}/messages", json={"text": "more"})
        assert follow_up.status_code == 409

    def test_out_of_scale_score_rejected(self, client):
        session = start_session(client)
        response = rate(client, session["id"], appropriateness=6)
        assert response.status_code == 400
        assert response.json()["code"] == "validation_error"

    def test_duplicate_rating_same_rater_conflicts(self, client):
        session = start_session(client)
        assert rate(client, session["id"], rater="r9").status_code == 200
        response = rate(client, session["id"], rater="r9")
        assert response.status_code == 409

    def test_second_rater_allowed(self, client):
        session = start_session(client)
        assert rate(client, session["id"], rater="a").status_code == 200
        assert rate(client, session["id"], rater="b", appropriateness=3).status_code == 200

    def test_scale_validation_in_model(self):
        with pytest.raises(ValidationError):
            Rating(session_id="s", success=True, appropriateness=0, engagingness=3, rater_id="x")


class TestPairwise:
    def judgment(self, a, b, overall="a"):
        return {
            "dialog_a_id": a,
            "dialog_b_id": b,
            "overall": overall,
            "a_appropriateness": 4,
            "a_engagingness": 4,
            "b_appropriateness": 3,
            "b_engagingness": 3,
        }

    def test_judgment_persisted(self, client):
        a = start_session(client, "pivot-toy")["id"]
        b = start_session(client, "task-only")["id"]
        response = client.post("/pairwise", json=self.judgment(a, b, "tie"), headers={"X-Rater-Id": "j"})
        assert response.status_code == 200

    def test_same_dialog_twice_rejected(self, client):
        a = start_session(client)["id"]
        response = client.post("/pairwise", json=self.judgment(a, a))
        assert response.status_code == 400

    def test_unknown_dialog_rejected(self, client):
        a = start_session(client)["id"]
        assert client.post("/pairwise", json=self.judgment(a, "nope")).status_code == 404

    def test_duplicate_pair_judgment_conflicts(self, client):
        a = start_session(client, "pivot-toy")["id"]
        b = start_session(client, "task-only")["id"]
        assert client.post("/pairwise", json=self.judgment(a, b), headers={"X-Rater-Id": "j"}).status_code == 200
        response = client.post("/pairwise", json=self.judgment(b, a), headers={"X-Rater-Id": "j"})
        assert response.status_code == 409

    def test_missing_field_rejected(self, client):
        a = start_session(client, "pivot-toy")["id"]
        b = start_session(client, "task-only")["id"]
        payload = self.judgment(a, b)
        del payload["b_engagingness"]
        assert client.post("/pairwise", json=payload).status_code == 400


class TestAggregates:
    def test_rating_means_and_std(self, client):
        for scores in ((4, 4), (5, 5)):
            session = start_session(client, "pivot-toy")
            rate(
                client,
                session["id"],
                rater=f"r{scores[0]}",
                appropriateness=scores[0],
                engagingness=scores[1],
            )
        table = client.get("/aggregates").json()["ratings"]["pivot-toy"]
        assert table["appropriateness"]["mean"] == 4.5
        assert abs(table["appropriateness"]["std"] - 0.7071067811865476) < 1e-12
        assert table["success"]["mean"] == 1.0
        assert table["appropriateness"]["n"] == 2

    def test_pairwise_percentages(self, client):
        a_sessions = [start_session(client, "pivot-toy")["id"] for _ in range(4)]
        b_sessions = [start_session(client, "task-only")["id"] for _ in range(4)]
        outcomes = ["a", "a", "tie", "b"]
        for i, overall in enumerate(outcomes):
            payload = TestPairwise().judgment(a_sessions[i], b_sessions[i], overall)
            response = client.post("/pairwise", json=payload, headers={"X-Rater-Id": f"w{i}"})
            assert response.status_code == 200
        table = client.get("/aggregates").json()["pairwise"]
        row = table["pivot-toy vs task-only"]
        assert (row["win_pct"], row["tie_pct"], row["loss_pct"]) == (50.0, 25.0, 25.0)
        assert 0.0 <= row["overall_p_value"] <= 1.0

    def test_empty_store_gives_empty_tables(self, client):
        body = client.get("/aggregates").json()
        assert body == {"ratings": {}, "pairwise": {}}

    def test_aggregates_recomputed_from_raw_match_service_restart(self, tmp_path):
        service = make_service(tmp_path)
        client = TestClient(create_app(service))
        session = start_session(client)
        client.post(f"/sessions/{session['id']}/messages", json={"text": "hello"})
        rate(client, session["id"])
        before = client.get("/aggregates").json()

        reloaded = EvalService(
            service.models, service.goal_sampler, EventStore(tmp_path / "events.jsonl")
        )
        after_client = TestClient(create_app(reloaded))
        after = after_client.get("/aggregates").json()
        assert before == after
        restored = after_client.get(f"/sessions/{session['id']}").json()
        assert restored["status"] == "rated"
        assert len(restored["turns"]) == 2


class TestConcurrencyAndTimeout:
    def test_rapid_posts_to_one_session_are_serialized(self, tmp_path):
        client = TestClient(create_app(make_service(tmp_path)))
        session = start_session(client)
        errors = []

        def post(text):
            try:
                response = client.post(f"/sessions/{session['id']}/messages", json={"text": text})
                assert response.status_code == 200
            except Exception as exc:  # pragma: no cover
                errors.append(exc)

        threads = [threading.Thread(target=post, args=(f"message {i}",)) for i in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors
        turns = client.get(f"/sessions/{session['id']}").json()["turns"]
        assert len(turns) == 8
        speakers = [t["speaker"] for t in turns]
        assert speakers == ["user", "system"] * 4

    def test_idle_sessions_become_abandoned(self, tmp_path):
        now = [1000.0]
        service = make_service(tmp_path, clock=lambda: now[0], timeout=60.0)
        client = TestClient(create_app(service))
        session = start_session(client)
        now[0] += 30
        assert client.get(f"/sessions/{session['id']}").json()["status"] == "open"
        now[0] += 3600
        assert client.get(f"/sessions/{session['id']}").json()["status"] == "abandoned"
        response = client.post(f"/sessions/{session['id']}/messages", json={"text": "hi"})
        assert response.status_code == 409
