import numpy as np
import pytest

from dialogweave.corpus import Mode
from dialogweave.intent import (
    IntentDetector,
    IntentError,
    IntentExample,
    KeywordIntentClassifier,
    LabeledSource,
    build_balanced_mix,
    detect,
    load_detector,
    mix_manifest,
    save_detector,
    train_detector,
    training_loss,
)

TOD_TEMPLATES = (
    "i need to book a table for {n} people",
    "find me a train to ely on monday number {n}",
    "what is the phone number of the hotel {n}",
    "reserve a taxi for {n} pm please",
    "i am looking for a cheap restaurant number {n}",
)
ODD_TEMPLATES = (
    "i love rainy afternoons with a good book {n}",
    "my favorite season is autumn {n}",
    "that meadow was so beautiful last weekend {n}",
    "i have been painting landscapes lately {n}",
    "stargazing is such a peaceful hobby {n}",
)


def synthetic_examples(n_per_class=30):
    examples = []
    for i in range(n_per_class):
        examples.append(IntentExample(TOD_TEMPLATES[i % 5].format(n=i), Mode.TOD, "synthetic"))
        examples.append(IntentExample(ODD_TEMPLATES[i % 5].format(n=i), Mode.ODD, "synthetic"))
    return examples


class TestBalancedMix:
    def source(self, n_tod, n_odd):
        turns = [(f"book a coach seat {i}", Mode.TOD) for i in range(n_tod)]
        turns += [(f"i adore quiet mornings {i}", Mode.ODD) for i in range(n_odd)]
        return LabeledSource("demo", turns)

    def test_downsamples_majority_class(self):
        mixed = build_balanced_mix([self.source(300, 100)], seed=0)
        labels = [e.label for e in mixed]
        assert labels.count(Mode.TOD) == labels.count(Mode.ODD) == 100

    def test_already_balanced_is_unchanged(self):
        source = self.source(50, 50)
        mixed = build_balanced_mix([source], seed=0)
        assert sorted(e.utterance for e in mixed) == sorted(t for t, _ in source.turns)

    def test_same_seed_same_sample(self):
        a = build_balanced_mix([self.source(300, 100)], seed=4)
        b = build_balanced_mix([self.source(300, 100)], seed=4)
        assert a == b

    def test_absent_class_rejected(self):
        with pytest.raises(IntentError):
            build_balanced_mix([self.source(10, 0)], seed=0)

    def test_manifest_records_counts_and_seed(self):
        manifest = mix_manifest([self.source(3, 2)], seed=9)
        assert manifest == {"seed": 9, "sources": [{"name": "demo", "tod": 3, "odd": 2}]}


class TestTraining:
    def test_separable_data_reaches_perfect_held_out_accuracy(self):
        detector = train_detector(synthetic_examples(40), seed=0)
        assert detector.held_out_accuracy == 1.0

    def test_same_seed_same_accuracy(self):
        a = train_detector(synthetic_examples(30), seed=3)
        b = train_detector(synthetic_examples(30), seed=3)
        assert a.held_out_accuracy == b.held_out_accuracy
        assert np.array_equal(a.classifier.weights, b.classifier.weights)

    def test_too_few_examples_rejected(self):
        with pytest.raises(IntentError):
            train_detector(synthetic_examples(5), seed=0)

    def test_loss_matches_hand_rolled_bce(self):
        detector = train_detector(synthetic_examples(20), seed=0)
        batch = synthetic_examples(20)[:5]
        probs = [detector.classifier.predict_proba(e.utterance) for e in batch]
        labels = [1.0 if e.label is Mode.ODD else 0.0 for e in batch]
        eps = 1e-12
        expected = -np.mean(
            [
                y * np.log(max(p, eps)) + (1 - y) * np.log(max(1 - p, eps))
                for p, y in zip(probs, labels)
            ]
        )
        assert abs(training_loss(detector, batch) - expected) < 1e-8


class TestDetect:
    @pytest.fixture()
    def trained(self):
        return train_detector(synthetic_examples(40), seed=0)

    def test_paper_style_utterances(self, trained):
        tod_label, _ = detect(trained, "I need to book a train leaving Cambridge on Thursday can you help me?")
        odd_label, _ = detect(trained, "I have been to Norwich a few times. It is beautiful. I hope to go again.")
        assert tod_label is Mode.TOD
        assert odd_label is Mode.ODD

    def test_zero_threshold_always_odd(self, trained):
        detector = IntentDetector(classifier=trained.classifier, threshold=0.0)
        label, _ = detect(detector, "i need to book a train right now")
        assert label is Mode.ODD

    def test_probability_in_unit_interval(self, trained):
        _, p = detect(trained, "an utterance about nothing in particular")
        assert 0.0 <= p <= 1.0

    def test_empty_utterance_rejected(self, trained):
        with pytest.raises(IntentError):
            detect(trained, "   ")

    def test_detect_is_pure(self, trained):
        text = "i love wandering around old towns"
        assert detect(trained, text) == detect(trained, text)


class TestPersistence:
    def test_linear_round_trip(self, tmp_path):
        detector = train_detector(synthetic_examples(25), seed=1)
        path = tmp_path / "detector.json"
        save_detector(detector, path)
        loaded = load_detector(path)
        for text in ("book me a room", "i adore sunsets"):
            assert detect(loaded, text) == detect(detector, text)
        assert loaded.held_out_accuracy == detector.held_out_accuracy

    def test_keyword_round_trip(self, tmp_path):
        detector = IntentDetector(classifier=KeywordIntentClassifier(("joy",), ("book",)))
        path = tmp_path / "kw.json"
        save_detector(detector, path)
        loaded = load_detector(path)
        assert detect(loaded, "such joy today")[0] is Mode.ODD
        assert detect(loaded, "book a room")[0] is Mode.TOD

    def test_version_check(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"format_version": 99, "classifier": {"kind": "linear"}}')
        with pytest.raises(IntentError):
            load_detector(path)
