import pytest

from dialogweave.backends.toy import PAD
from dialogweave.corpus import BeliefState, Dialog, Mode, Speaker, Turn
from dialogweave.knowledge import KnowledgeKind, KnowledgeResult
from dialogweave.pivot import (
    HISTORY_BUDGET,
    INPUT_LENGTH,
    KNOWLEDGE_MARKER,
    STATE_MARKER,
    PivotError,
    TaskTag,
    TrainingExample,
    HistoryWindow,
    build_history,
    load_examples,
    make_training_examples,
    save_examples,
    serialize,
)
from dialogweave.pivot.state import State


def make_dialog(n_turns=12):
    turns = []
    for i in range(n_turns):
        speaker = Speaker.USER if i % 2 == 0 else Speaker.SYSTEM
        turns.append(Turn(speaker, f"utterance number {i}", Mode.TOD, belief=BeliefState()))
    return Dialog("h", turns)


class TestBuildHistory:
    def test_window_of_two_gives_five_utterances(self):
        dialog = make_dialog(12)
        window = build_history(dialog, 4, window_k=2)
        assert len(window.utterances) == 5
        assert window.utterances[-1][1] == "utterance number 4"
        assert window.utterances[0][1] == "utterance number 0"

    def test_start_of_dialog_returns_available(self):
        window = build_history(make_dialog(12), 0, window_k=2)
        assert len(window.utterances) == 1

    def test_zero_window_is_just_the_user_turn(self):
        window = build_history(make_dialog(12), 6, window_k=0)
        assert len(window.utterances) == 1
        assert window.utterances[0][0] is Speaker.USER

    def test_non_user_index_rejected(self):
        with pytest.raises(PivotError):
            build_history(make_dialog(12), 5, window_k=2)


def fused_dialog():
    belief = BeliefState()
    belief.set("train", "destination", "norwich")
    belief.set("train", "day", "thursday")
    turns = [
        Turn(Speaker.USER, "hello , lovely day", Mode.ODD),
        Turn(Speaker.SYSTEM, "it truly is !", Mode.ODD, search_query="norwich"),
        Turn(Speaker.USER, "i daydream sometimes", Mode.ODD),
        Turn(Speaker.SYSTEM, "me too .", Mode.ODD),
        Turn(Speaker.USER, "i need a train to norwich on thursday", Mode.TOD, domain="train"),
        Turn(
            Speaker.SYSTEM,
            "tr1001 leaves at 09:00",
            Mode.TOD,
            domain="train",
            belief=belief,
            delex_text="[train_id] leaves at [value_time]",
        ),
    ]
    return Dialog("fx", turns)


class TestMakeTrainingExamples:
    def test_four_components_per_system_turn(self, db, search):
        examples = make_training_examples(fused_dialog(), db, search)
        assert len(examples) == 3

        odd_with_query, odd_plain, tod = examples
        assert odd_with_query.state == State(Mode.ODD, "norwich")
        assert odd_with_query.knowledge.kind is KnowledgeKind.SEARCH
        assert odd_with_query.knowledge.snippets == [
            "norwich is a cathedral city in norfolk , england ."
        ]

        assert odd_plain.state == State(Mode.ODD, "")
        assert odd_plain.knowledge.kind is KnowledgeKind.EMPTY

        assert tod.state.mode is Mode.TOD
        assert tod.state.query == "train destination=norwich day=thursday"
        assert tod.knowledge.kind is KnowledgeKind.DB_STATE
        assert tod.response == "[train_id] leaves at [value_time]"

    def test_db_state_matches_brute_force(self, db, search):
        examples = make_training_examples(fused_dialog(), db, search)
        tod = examples[-1]
        expected = [
            r
            for r in db.by_domain("train")
            if r.attributes["destination"] == "norwich" and r.attributes["day"] == "thursday"
        ]
        assert tod.knowledge.db_match_count == len(expected)
        assert tod.knowledge.top_record == (expected[0] if expected else None)

    def test_missing_belief_rejected(self, db):
        turns = [
            Turn(Speaker.USER, "hi", Mode.TOD),
            Turn(Speaker.SYSTEM, "hello", Mode.TOD),
        ]
        with pytest.raises(PivotError, match="belief"):
            make_training_examples(Dialog("bad", turns), db)

    def test_query_without_provider_rejected(self, db):
        with pytest.raises(PivotError, match="provider"):
            make_training_examples(fused_dialog(), db, search=None)

    def test_untagged_turn_rejected(self, db):
        turns = [Turn(Speaker.USER, "hi"), Turn(Speaker.SYSTEM, "hello")]
        with pytest.raises(PivotError, match="untagged"):
            make_training_examples(Dialog("bad", turns), db)

    def test_belief_accumulates_across_turns(self, db, search):
        first = BeliefState()
        first.set("train", "destination", "ely")
        second = BeliefState()
        second.set("train", "day", "monday")
        turns = [
            Turn(Speaker.USER, "a train to ely", Mode.TOD, domain="train"),
            Turn(Speaker.SYSTEM, "when ?", Mode.TOD, domain="train", belief=first),
            Turn(Speaker.USER, "monday", Mode.TOD, domain="train"),
            Turn(Speaker.SYSTEM, "ok", Mode.TOD, domain="train", belief=second),
        ]
        examples = make_training_examples(Dialog("acc", turns), db, search)
        assert examples[0].state.query == "train destination=ely"
        assert examples[1].state.query == "train destination=ely day=monday"


def example_with(history_words: int, knowledge_words: int = 0) -> TrainingExample:
    text = " ".join(f"w{i}" for i in range(history_words))
    window = HistoryWindow(utterances=[(Speaker.USER, text)], window_k=2)
    knowledge = (
        KnowledgeResult(kind=KnowledgeKind.SEARCH, snippets=[" ".join(f"k{i}" for i in range(knowledge_words))])
        if knowledge_words
        else KnowledgeResult.empty()
    )
    return TrainingExample(
        history=window,
        state=State(Mode.ODD, "norwich"),
        knowledge=knowledge,
        response="a fine reply indeed",
    )


class TestSerialize:
    def test_long_history_clipped_to_most_recent_tokens(self):
        pair = serialize(example_with(600), TaskTag.STATE)
        content = [t for t in pair.input_tokens if t != PAD]
        assert len(content) == HISTORY_BUDGET
        # left truncation keeps the newest tokens
        assert content[-1] == "w599"
        assert "w0" not in content

    def test_tiny_example_padded_to_full_length(self):
        pair = serialize(example_with(5), TaskTag.STATE)
        assert len(pair.input_tokens) == INPUT_LENGTH
        content = [t for t in pair.input_tokens if t != PAD]
        assert content == ["<user>", "w0", "w1", "w2", "w3", "w4"]

    def test_state_pairs_have_no_knowledge_segment(self):
        pair = serialize(example_with(40, knowledge_words=30), TaskTag.STATE)
        assert KNOWLEDGE_MARKER not in pair.input_tokens
        assert STATE_MARKER not in pair.input_tokens
        assert pair.target_tokens == ["odd", ":", "norwich"]

    def test_response_pairs_contain_state_and_knowledge(self):
        pair = serialize(example_with(40, knowledge_words=30), TaskTag.RESPONSE)
        assert STATE_MARKER in pair.input_tokens
        assert KNOWLEDGE_MARKER in pair.input_tokens
        assert len(pair.input_tokens) == INPUT_LENGTH
        assert pair.target_tokens == ["a", "fine", "reply", "indeed"]

    def test_overlong_knowledge_truncated_and_flagged(self):
        pair = serialize(example_with(250, knowledge_words=600), TaskTag.RESPONSE)
        assert len(pair.input_tokens) == INPUT_LENGTH
        assert pair.knowledge_truncated
        assert PAD not in pair.input_tokens

    def test_within_budget_not_flagged(self):
        pair = serialize(example_with(40, knowledge_words=10), TaskTag.RESPONSE)
        assert not pair.knowledge_truncated


class TestExamplePersistence:
    def test_jsonl_round_trip(self, db, search, tmp_path):
        examples = make_training_examples(fused_dialog(), db, search)
        path = tmp_path / "examples.jsonl"
        save_examples(examples, path)
        loaded = load_examples(path)
        assert loaded == examples
