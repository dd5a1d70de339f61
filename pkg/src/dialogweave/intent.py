"""Binary chitchat-intent detection over user utterances.

The reference classifier is a linear model over token-frequency features
trained with binary cross-entropy; encoder-based classifiers can plug in
through the same predict-probability interface. Training data is balanced
by down-sampling the majority class with a fixed seed.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .corpus import Mode
from .text import tokenize


class IntentError(Exception):
    pass


@dataclass(frozen=True)
class IntentExample:
    utterance: str
    label: Mode
    source_corpus: str = ""

    def __post_init__(self) -> None:
        if not self.utterance.strip():
            raise IntentError("intent example utterance is empty")


@dataclass
class LabeledSource:
    """A corpus that yields (utterance, label) turns for mixing."""

    name: str
    turns: list[tuple[str, Mode]]


def build_balanced_mix(sources: Sequence[LabeledSource], seed: int = 0) -> list[IntentExample]:
    """Pool all sources and equalize class counts by down-sampling the
    majority class. Retained examples keep their original order."""
    pool: list[IntentExample] = []
    for source in sources:
        for utterance, label in source.turns:
            pool.append(IntentExample(utterance, label, source.name))
    by_label = {Mode.TOD: [], Mode.ODD: []}
    for i, example in enumerate(pool):
        by_label[example.label].append(i)
    for label, indices in by_label.items():
        if not indices:
            raise IntentError(f"no {label.value} examples in any source")
    n = min(len(v) for v in by_label.values())
    rng = random.Random(seed)
    keep: set[int] = set()
    for indices in by_label.values():
        keep.update(indices if len(indices) == n else rng.sample(indices, n))
    return [pool[i] for i in sorted(keep)]


def mix_manifest(sources: Sequence[LabeledSource], seed: int) -> dict:
    """Provenance record for a balanced mix: per-source label counts and
    the sampling seed."""
    return {
        "seed": seed,
        "sources": [
            {
                "name": s.name,
                "tod": sum(1 for _, l in s.turns if l is Mode.TOD),
                "odd": sum(1 for _, l in s.turns if l is Mode.ODD),
            }
            for s in sources
        ],
    }


class IntentClassifier(Protocol):
    def predict_proba(self, utterance: str) -> float:
        """Probability that the utterance is chitchat (ODD)."""
        ...


class LinearIntentClassifier:
    """Logistic regression over bag-of-token counts."""

    def __init__(self, vocab: dict[str, int], weights: np.ndarray, bias: float) -> None:
        self.vocab = vocab
        self.weights = weights
        self.bias = bias

    def _features(self, utterance: str) -> np.ndarray:
        x = np.zeros(len(self.vocab))
        for token in tokenize(utterance):
            idx = self.vocab.get(token)
            if idx is not None:
                x[idx] += 1.0
        return x

    def predict_proba(self, utterance: str) -> float:
        score = float(self._features(utterance) @ self.weights + self.bias)
        return float(1.0 / (1.0 + np.exp(-score)))

    def to_json(self) -> dict:
        return {
            "kind": "linear",
            "vocab": sorted(self.vocab, key=self.vocab.get),
            "weights": self.weights.tolist(),
            "bias": self.bias,
        }

    @classmethod
    def from_json(cls, data: dict) -> "LinearIntentClassifier":
        vocab = {t: i for i, t in enumerate(data["vocab"])}
        return cls(vocab, np.asarray(data["weights"], dtype=float), float(data["bias"]))


class KeywordIntentClassifier:
    """Deterministic rule-based fallback: marker-token voting. Useful for
    scripted runs and as a default when no trained detector is supplied."""

    DEFAULT_ODD = ("love", "favorite", "beautiful", "fun", "hobby", "weather", "movie", "music", "visited")
    DEFAULT_TOD = ("book", "reserve", "train", "hotel", "restaurant", "ticket", "address", "phone", "need")

    def __init__(self, odd_markers: Sequence[str] | None = None, tod_markers: Sequence[str] | None = None) -> None:
        self.odd_markers = tuple(odd_markers if odd_markers is not None else self.DEFAULT_ODD)
        self.tod_markers = tuple(tod_markers if tod_markers is not None else self.DEFAULT_TOD)

    def predict_proba(self, utterance: str) -> float:
        tokens = set(tokenize(utterance))
        odd = sum(1 for m in self.odd_markers if m in tokens)
        tod = sum(1 for m in self.tod_markers if m in tokens)
        if odd == tod:
            return 0.5
        return odd / (odd + tod)

    def to_json(self) -> dict:
        return {"kind": "keyword", "odd_markers": list(self.odd_markers), "tod_markers": list(self.tod_markers)}

    @classmethod
    def from_json(cls, data: dict) -> "KeywordIntentClassifier":
        return cls(data["odd_markers"], data["tod_markers"])


@dataclass
class IntentDetector:
    classifier: IntentClassifier
    threshold: float = 0.5
    held_out_accuracy: float | None = None


def detect(detector: IntentDetector, utterance: str) -> tuple[Mode, float]:
    """Classify one utterance. Returns (label, p_odd); the label is ODD
    exactly when p_odd reaches the detector threshold."""
    if not utterance.strip():
        raise IntentError("cannot classify an empty utterance")
    p_odd = detector.classifier.predict_proba(utterance)
    label = Mode.ODD if p_odd >= detector.threshold else Mode.TOD
    return label, p_odd


def binary_cross_entropy(probs: np.ndarray, labels: np.ndarray, eps: float = 1e-12) -> float:
    """Mean BCE; labels are 1 for ODD."""
    probs = np.clip(probs, eps, 1.0 - eps)
    return float(-np.mean(labels * np.log(probs) + (1.0 - labels) * np.log(1.0 - probs)))


def _vectorize(examples: Sequence[IntentExample]) -> tuple[dict[str, int], np.ndarray, np.ndarray]:
    vocab: dict[str, int] = {}
    for example in examples:
        for token in tokenize(example.utterance):
            vocab.setdefault(token, len(vocab))
    X = np.zeros((len(examples), len(vocab)))
    y = np.zeros(len(examples))
    for i, example in enumerate(examples):
        for token in tokenize(example.utterance):
            X[i, vocab[token]] += 1.0
        y[i] = 1.0 if example.label is Mode.ODD else 0.0
    return vocab, X, y


def train_detector(
    examples: Sequence[IntentExample],
    backend_config: dict | None = None,
    seed: int = 0,
    threshold: float = 0.5,
) -> IntentDetector:
    """Fit the linear classifier on a balanced example set and record
    held-out accuracy on a stratified 20% split."""
    config = backend_config or {}
    per_class = {Mode.TOD: [], Mode.ODD: []}
    for i, example in enumerate(examples):
        per_class[example.label].append(i)
    for label, indices in per_class.items():
        if len(indices) < 10:
            raise IntentError(
                f"degenerate training set: only {len(indices)} {label.value} examples (need 10)"
            )

    rng = random.Random(seed)
    train_idx: list[int] = []
    held_idx: list[int] = []
    for indices in per_class.values():
        shuffled = indices[:]
        rng.shuffle(shuffled)
        cut = max(1, len(shuffled) // 5)
        held_idx.extend(shuffled[:cut])
        train_idx.extend(shuffled[cut:])
    train = [examples[i] for i in sorted(train_idx)]
    held = [examples[i] for i in sorted(held_idx)]

    vocab, X, y = _vectorize(train)
    weights = np.zeros(len(vocab))
    bias = 0.0
    lr = float(config.get("lr", 0.5))
    iterations = int(config.get("iterations", 400))
    n = len(train)
    initial_loss = binary_cross_entropy(_predict(X, weights, bias), y)
    for _ in range(iterations):
        probs = _predict(X, weights, bias)
        grad_logits = (probs - y) / n
        weights -= lr * (X.T @ grad_logits)
        bias -= lr * float(grad_logits.sum())
    final_loss = binary_cross_entropy(_predict(X, weights, bias), y)
    if final_loss > initial_loss:
        raise IntentError("training failed to reduce cross-entropy")

    classifier = LinearIntentClassifier(vocab, weights, bias)
    detector = IntentDetector(classifier=classifier, threshold=threshold)
    correct = sum(1 for ex in held if detect(detector, ex.utterance)[0] is ex.label)
    detector.held_out_accuracy = correct / len(held)
    return detector


def _predict(X: np.ndarray, weights: np.ndarray, bias: float) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-(X @ weights + bias)))


def training_loss(detector: IntentDetector, examples: Sequence[IntentExample]) -> float:
    """BCE of the detector on a batch, using the same loss the trainer
    minimizes (oracle-comparable)."""
    probs = np.array([detector.classifier.predict_proba(e.utterance) for e in examples])
    labels = np.array([1.0 if e.label is Mode.ODD else 0.0 for e in examples])
    return binary_cross_entropy(probs, labels)


DETECTOR_FORMAT_VERSION = 1


def save_detector(detector: IntentDetector, path: str | Path) -> None:
    classifier = detector.classifier
    if not hasattr(classifier, "to_json"):
        raise IntentError("classifier does not support persistence")
    payload = {
        "format_version": DETECTOR_FORMAT_VERSION,
        "threshold": detector.threshold,
        "held_out_accuracy": detector.held_out_accuracy,
        "classifier": classifier.to_json(),
    }
    Path(path).write_text(json.dumps(payload))


def load_detector(path: str | Path) -> IntentDetector:
    data = json.loads(Path(path).read_text())
    if data.get("format_version") != DETECTOR_FORMAT_VERSION:
        raise IntentError(f"unsupported detector format: {data.get('format_version')}")
    spec = data["classifier"]
    if spec["kind"] == "linear":
        classifier: IntentClassifier = LinearIntentClassifier.from_json(spec)
    elif spec["kind"] == "keyword":
        classifier = KeywordIntentClassifier.from_json(spec)
    else:
        raise IntentError(f"unknown classifier kind {spec['kind']!r}")
    return IntentDetector(
        classifier=classifier,
        threshold=float(data["threshold"]),
        held_out_accuracy=data.get("held_out_accuracy"),
    )
