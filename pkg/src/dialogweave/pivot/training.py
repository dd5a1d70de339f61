"""Joint training of state prediction and grounded generation.

The per-example loss is the sum of the two conditional NLLs (state given
history; response given history, state, and knowledge), summed over the
training set and minimized with AdamW.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..backends.toy import AdamW, ToySequenceModel, TrainingError, TrainReport, Vocab
from .examples import SerializedPair, TaskTag, TrainingExample, serialize, strip_padding


@dataclass
class ExamplePairs:
    state: SerializedPair
    response: SerializedPair


def serialize_example(example: TrainingExample) -> ExamplePairs:
    return ExamplePairs(
        state=serialize(example, TaskTag.STATE),
        response=serialize(example, TaskTag.RESPONSE),
    )


def _compact(pair: SerializedPair) -> tuple[list[str], list[str]]:
    return strip_padding(pair.input_tokens), pair.target_tokens


def build_toy_model(
    examples: Sequence[TrainingExample],
    embed_dim: int = 48,
    hidden_dim: int = 96,
    seed: int = 0,
) -> ToySequenceModel:
    """Construct a model whose vocabulary covers the serialized examples."""
    streams = []
    for example in examples:
        pairs = serialize_example(example)
        for pair in (pairs.state, pairs.response):
            streams.append(strip_padding(pair.input_tokens))
            streams.append(pair.target_tokens)
    vocab = Vocab.build(streams)
    return ToySequenceModel(vocab, embed_dim=embed_dim, hidden_dim=hidden_dim, seed=seed)


def example_loss(model: ToySequenceModel, pairs: ExamplePairs) -> float:
    """State NLL plus response NLL for one example."""
    s_cond, s_tgt = _compact(pairs.state)
    r_cond, r_tgt = _compact(pairs.response)
    return model.conditional_nll(s_cond, s_tgt) + model.conditional_nll(r_cond, r_tgt)


def state_exact_match(model: ToySequenceModel, pairs_list: Sequence[ExamplePairs]) -> float:
    """Fraction of examples whose greedy state decode reproduces the
    target token sequence exactly."""
    hits = 0
    for pairs in pairs_list:
        cond, target = _compact(pairs.state)
        decoded = model.generate_tokens(cond, max_tokens=len(target) + 8)
        if decoded == target:
            hits += 1
    return hits / len(pairs_list)


def train_pivot(
    examples: Sequence[TrainingExample],
    model: ToySequenceModel,
    epochs: int,
    seed: int,
    lr: float = 1e-3,
    batch_size: int = 8,
    weight_decay: float = 0.0,
    early_stop: Callable[[int, TrainReport], bool] | None = None,
) -> TrainReport:
    """Minimize the summed (state + response) NLL over the example set.

    The reported per-epoch loss is the mean per-example sum. Deterministic
    given the seed; NaN loss aborts with the failing epoch index.
    """
    if not examples:
        raise TrainingError("train_pivot needs at least one example")
    pairs_list = [serialize_example(e) for e in examples]
    initial = float(np.mean([example_loss(model, p) for p in pairs_list]))
    report = TrainReport(initial_loss=initial, seed=seed, n_examples=len(pairs_list))
    optimizer = AdamW(model.params, lr=lr, weight_decay=weight_decay)
    rng = np.random.default_rng(seed)
    for epoch in range(epochs):
        order = rng.permutation(len(pairs_list))
        losses = []
        for start in range(0, len(order), batch_size):
            batch = order[start : start + batch_size]
            grads_sum: dict[str, np.ndarray] | None = None
            for idx in batch:
                pairs = pairs_list[idx]
                total = 0.0
                for pair in (pairs.state, pairs.response):
                    cond, tgt = _compact(pair)
                    loss, grads = model.conditional_nll_with_grads(cond, tgt)
                    total += loss
                    if grads_sum is None:
                        grads_sum = grads
                    else:
                        for key in grads_sum:
                            grads_sum[key] += grads[key]
                losses.append(total)
            assert grads_sum is not None
            for key in grads_sum:
                grads_sum[key] /= len(batch)
            optimizer.step(grads_sum)
        mean_loss = float(np.mean(losses))
        if not np.isfinite(mean_loss):
            raise TrainingError(f"training diverged at epoch {epoch}")
        report.epoch_losses.append(mean_loss)
        report.epochs = epoch + 1
        if early_stop is not None and early_stop(epoch, report):
            break
    return report


def save_examples(examples: Sequence[TrainingExample], path: str | Path) -> None:
    with Path(path).open("w") as fh:
        for example in examples:
            fh.write(json.dumps(example.to_json(), sort_keys=True, separators=(",", ":")) + "\n")


def load_examples(path: str | Path) -> list[TrainingExample]:
    examples = []
    with Path(path).open() as fh:
        for line in fh:
            line = line.strip()
            if line:
                examples.append(TrainingExample.from_json(json.loads(line)))
    return examples
