"""Metric suite: corpus BLEU, task completion (Inform/Success/Combined),
mode prediction (Accuracy/Success Rate), full-task scoring with the
mode-filter, cross-setting matrices, and seed aggregation.

Mode metrics are anchored at system turns: the state predicted for a
system turn carries the mode judgment for that exchange, and Accuracy is
computed over gold-chitchat turns only (an always-task predictor scores
exactly zero).
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .corpus import Dialog, DialogSet, Mode, Speaker, placeholder_for
from .knowledge import Database, DBRecord
from .pivot.state import State, belief_of

BLEU_VERSION = "corpus-bleu4 lowercase-whitespace eps=1e-4 vacuous-orders-skipped v1"
REPORT_VERSION = 1

# Placeholder that counts as "an entity was offered" per domain.
ENTITY_PLACEHOLDER = {"train": "[train_id]"}
DEFAULT_ENTITY_PLACEHOLDER = "[value_name]"


class MetricError(Exception):
    pass


class UndefinedMetricError(MetricError):
    """The metric's denominator is empty on this input."""


# One prediction per gold system turn: the predicted state and response.
Prediction = tuple[State, str]
PredictionsMap = Mapping[str, Sequence[Prediction]]


def entity_placeholder(domain: str) -> str:
    return ENTITY_PLACEHOLDER.get(domain, DEFAULT_ENTITY_PLACEHOLDER)


# --------------------------------------------------------------------------
# BLEU
# --------------------------------------------------------------------------

_BLEU_EPS = 1e-4


def bleu(references: Sequence[str], hypotheses: Sequence[str]) -> float:
    """Corpus-level 4-gram BLEU in [0, 100].

    Tokenization is lowercase whitespace splitting. Orders with zero
    hypothesis n-grams anywhere in the corpus are skipped (so identical
    short corpora still score 100); orders with no clipped matches are
    smoothed with a small epsilon.
    """
    if len(references) != len(hypotheses):
        raise MetricError(
            f"length mismatch: {len(references)} references vs {len(hypotheses)} hypotheses"
        )
    if not references:
        raise MetricError("bleu needs at least one sentence pair")
    clipped = [0] * 4
    totals = [0] * 4
    hyp_len = 0
    ref_len = 0
    for reference, hypothesis in zip(references, hypotheses):
        ref_tokens = reference.lower().split()
        hyp_tokens = hypothesis.lower().split()
        hyp_len += len(hyp_tokens)
        ref_len += len(ref_tokens)
        for n in range(1, 5):
            hyp_ngrams = Counter(
                tuple(hyp_tokens[i : i + n]) for i in range(len(hyp_tokens) - n + 1)
            )
            ref_ngrams = Counter(
                tuple(ref_tokens[i : i + n]) for i in range(len(ref_tokens) - n + 1)
            )
            totals[n - 1] += sum(hyp_ngrams.values())
            clipped[n - 1] += sum(min(count, ref_ngrams[g]) for g, count in hyp_ngrams.items())
    if hyp_len == 0:
        return 0.0
    log_precisions = []
    for n in range(4):
        if totals[n] == 0:
            continue
        precision = clipped[n] / totals[n]
        log_precisions.append(math.log(precision if precision > 0 else _BLEU_EPS))
    if not log_precisions:
        return 0.0
    brevity = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * brevity * math.exp(sum(log_precisions) / len(log_precisions))


# --------------------------------------------------------------------------
# Inform / Success
# --------------------------------------------------------------------------


def _record_satisfies(record: DBRecord, constraints: Mapping[str, str]) -> bool:
    for slot, value in constraints.items():
        if value.lower() == "dontcare":
            continue
        actual = record.attributes.get(slot.lower())
        if actual is None or actual.lower() != value.lower():
            return False
    return True


def _aligned_predictions(gold: Dialog, predictions: PredictionsMap) -> list[Prediction]:
    preds = predictions.get(gold.id)
    if preds is None:
        raise MetricError(f"no predictions for dialog {gold.id}")
    n_system = len(gold.system_turns())
    if len(preds) != n_system:
        raise MetricError(
            f"dialog {gold.id}: {len(preds)} predictions for {n_system} system turns"
        )
    return list(preds)


def _cumulative_pred_belief(preds: Sequence[Prediction], upto: int) -> dict[str, dict[str, str]]:
    merged: dict[str, dict[str, str]] = {}
    for state, _ in preds[: upto + 1]:
        if state.mode is not Mode.TOD:
            continue
        for domain, slot, value in belief_of(state).items():
            merged.setdefault(domain, {})[slot] = value
    return merged


def dialog_inform_success(
    gold: Dialog, preds: Sequence[Prediction], db: Database
) -> tuple[bool, bool]:
    """Inform: for every goal domain needing an entity, the entity set
    resolved from the predicted belief at the last offering turn overlaps
    the set satisfying the goal constraints. Success: inform plus every
    requested slot's placeholder appears in some predicted response."""
    if gold.goal_card is None:
        raise MetricError(f"goal card missing for dialog {gold.id}")
    responses = [response for _, response in preds]
    inform = True
    for domain, goal in gold.goal_card.domains.items():
        if not goal.requires_entity:
            continue
        marker = entity_placeholder(domain)
        offer_turn = None
        for t in range(len(responses) - 1, -1, -1):
            if marker in responses[t]:
                offer_turn = t
                break
        if offer_turn is None:
            inform = False
            break
        constraints = _cumulative_pred_belief(preds, offer_turn).get(domain, {})
        offered = [r for r in db.by_domain(domain) if _record_satisfies(r, constraints)]
        if not any(_record_satisfies(r, goal.constraints) for r in offered):
            inform = False
            break
    success = inform
    if success:
        for domain, goal in gold.goal_card.domains.items():
            for slot in goal.requests:
                marker = placeholder_for(slot)
                if not any(marker in response for response in responses):
                    success = False
                    break
            if not success:
                break
    return inform, success


def inform_success(
    golds: DialogSet | Sequence[Dialog], predictions: PredictionsMap, db: Database
) -> tuple[float, float]:
    dialogs = list(golds)
    if not dialogs:
        raise MetricError("inform_success needs at least one dialog")
    informs = succeeds = 0
    for gold in dialogs:
        preds = _aligned_predictions(gold, predictions)
        inform, success = dialog_inform_success(gold, preds, db)
        informs += inform
        succeeds += success
    return 100.0 * informs / len(dialogs), 100.0 * succeeds / len(dialogs)


def combined(inform: float, success: float, bleu_score: float) -> float:
    """(Inform + Success) * 0.5 + BLEU."""
    for name, value in (("inform", inform), ("success", success), ("bleu", bleu_score)):
        if not 0.0 <= value <= 100.0:
            raise MetricError(f"{name} out of range: {value}")
    return (inform + success) * 0.5 + bleu_score


# --------------------------------------------------------------------------
# Mode metrics
# --------------------------------------------------------------------------


def _mode_of(prediction) -> Mode:
    return prediction.mode if isinstance(prediction, State) else prediction


def mode_accuracy(pred_states: Sequence, gold_modes: Sequence[Mode]) -> float:
    """Percentage of gold-chitchat positions predicted as chitchat."""
    if len(pred_states) != len(gold_modes):
        raise MetricError(
            f"misaligned sequences: {len(pred_states)} predictions vs {len(gold_modes)} golds"
        )
    odd_positions = [i for i, mode in enumerate(gold_modes) if mode is Mode.ODD]
    if not odd_positions:
        raise UndefinedMetricError("no gold chitchat turns")
    correct = sum(1 for i in odd_positions if _mode_of(pred_states[i]) is Mode.ODD)
    return 100.0 * correct / len(odd_positions)


def _dialog_mode_rows(gold: Dialog, predictions: PredictionsMap) -> tuple[list[Mode], list[Mode]]:
    preds = _aligned_predictions(gold, predictions)
    gold_modes = []
    for turn in gold.system_turns():
        if turn.mode is None:
            raise MetricError(f"dialog {gold.id}: untagged system turn")
        gold_modes.append(turn.mode)
    return [state.mode for state, _ in preds], gold_modes


def odd_success_rate(golds: DialogSet | Sequence[Dialog], predictions: PredictionsMap) -> float:
    """Dialog-level mode success: of the dialogs containing chitchat
    turns, the percentage where every chitchat turn was predicted as
    chitchat."""
    with_odd = 0
    fully_correct = 0
    for gold in golds:
        pred_modes, gold_modes = _dialog_mode_rows(gold, predictions)
        odd_positions = [i for i, mode in enumerate(gold_modes) if mode is Mode.ODD]
        if not odd_positions:
            continue
        with_odd += 1
        if all(pred_modes[i] is Mode.ODD for i in odd_positions):
            fully_correct += 1
    if with_odd == 0:
        raise UndefinedMetricError("no dialogs contain chitchat turns")
    return 100.0 * fully_correct / with_odd


def dialog_odd_success(gold: Dialog, predictions: PredictionsMap) -> bool | None:
    """True/False if the dialog has chitchat turns, None otherwise."""
    pred_modes, gold_modes = _dialog_mode_rows(gold, predictions)
    odd_positions = [i for i, mode in enumerate(gold_modes) if mode is Mode.ODD]
    if not odd_positions:
        return None
    return all(pred_modes[i] is Mode.ODD for i in odd_positions)


# --------------------------------------------------------------------------
# Reference selection and block evaluation
# --------------------------------------------------------------------------


def reference_text(turn) -> str:
    return turn.delex_text if turn.delex_text is not None else turn.text


@dataclass
class TodBlock:
    bleu: float
    success: float
    inform: float
    combined: float

    def to_json(self) -> dict:
        return {"bleu": self.bleu, "success": self.success, "inform": self.inform, "combined": self.combined}


@dataclass
class OddBlock:
    accuracy: float
    success_rate: float
    bleu: float

    def to_json(self) -> dict:
        return {"accuracy": self.accuracy, "success_rate": self.success_rate, "bleu": self.bleu}


@dataclass
class FullBlock:
    bleu: float
    inform: float
    success: float
    combined: float

    def to_json(self) -> dict:
        return {"bleu": self.bleu, "inform": self.inform, "success": self.success, "combined": self.combined}


@dataclass
class EvalReport:
    setting: str
    tod: TodBlock
    odd: OddBlock
    full: FullBlock
    n_dialogs: int
    seed: int

    def to_json(self) -> dict:
        return {
            "report_version": REPORT_VERSION,
            "bleu_version": BLEU_VERSION,
            "setting": self.setting,
            "tod": self.tod.to_json(),
            "odd": self.odd.to_json(),
            "full": self.full.to_json(),
            "n_dialogs": self.n_dialogs,
            "seed": self.seed,
        }


def full_task_eval(
    predictions: PredictionsMap,
    golds: DialogSet | Sequence[Dialog],
    db: Database,
) -> FullBlock:
    """BLEU over every system response; Inform/Success only for dialogs
    whose chitchat turns were all predicted correctly (other dialogs count
    as failures in the full-set percentages)."""
    dialogs = list(golds)
    if not dialogs:
        raise MetricError("full_task_eval needs at least one dialog")
    references: list[str] = []
    hypotheses: list[str] = []
    informs = succeeds = 0
    for gold in dialogs:
        preds = _aligned_predictions(gold, predictions)
        for turn, (_, response) in zip(gold.system_turns(), preds):
            references.append(reference_text(turn))
            hypotheses.append(response)
        eligible = dialog_odd_success(gold, predictions)
        if eligible is False:
            continue
        inform, success = dialog_inform_success(gold, preds, db)
        informs += inform
        succeeds += success
    bleu_score = bleu(references, hypotheses)
    inform_pct = 100.0 * informs / len(dialogs)
    success_pct = 100.0 * succeeds / len(dialogs)
    return FullBlock(
        bleu=bleu_score,
        inform=inform_pct,
        success=success_pct,
        combined=combined(inform_pct, success_pct, bleu_score),
    )


def evaluate_setting(
    golds: DialogSet | Sequence[Dialog],
    predictions: PredictionsMap,
    db: Database,
    setting: str = "",
    seed: int = 0,
    include_transitions_in_odd_bleu: bool = True,
) -> EvalReport:
    """Full report: task-turn metrics, chitchat metrics, and the filtered
    full-task block."""
    dialogs = list(golds)
    tod_refs: list[str] = []
    tod_hyps: list[str] = []
    odd_refs: list[str] = []
    odd_hyps: list[str] = []
    pred_modes_flat: list[Mode] = []
    gold_modes_flat: list[Mode] = []
    for gold in dialogs:
        preds = _aligned_predictions(gold, predictions)
        for turn, (state, response) in zip(gold.system_turns(), preds):
            if turn.mode is Mode.TOD:
                tod_refs.append(reference_text(turn))
                tod_hyps.append(response)
            else:
                if include_transitions_in_odd_bleu or not turn.is_transition:
                    odd_refs.append(reference_text(turn))
                    odd_hyps.append(response)
            pred_modes_flat.append(state.mode)
            gold_modes_flat.append(turn.mode)

    tod_bleu = bleu(tod_refs, tod_hyps) if tod_refs else 0.0
    inform, success = inform_success(dialogs, predictions, db)
    tod = TodBlock(
        bleu=tod_bleu,
        success=success,
        inform=inform,
        combined=combined(inform, success, tod_bleu),
    )
    odd = OddBlock(
        accuracy=mode_accuracy(pred_modes_flat, gold_modes_flat),
        success_rate=odd_success_rate(dialogs, predictions),
        bleu=bleu(odd_refs, odd_hyps) if odd_refs else 0.0,
    )
    full = full_task_eval(predictions, dialogs, db)
    return EvalReport(
        setting=setting, tod=tod, odd=odd, full=full, n_dialogs=len(dialogs), seed=seed
    )


# --------------------------------------------------------------------------
# Aggregation over seeds
# --------------------------------------------------------------------------

_METRIC_PATHS = (
    "full.combined",
    "full.bleu",
    "full.inform",
    "full.success",
    "tod.bleu",
    "tod.success",
    "tod.inform",
    "tod.combined",
    "odd.accuracy",
    "odd.success_rate",
    "odd.bleu",
)


def _metric_value(report: EvalReport, path: str) -> float:
    block, name = path.split(".")
    return getattr(getattr(report, block), name)


@dataclass
class RunAggregate:
    """Per-metric mean and sample standard deviation over seeded runs."""

    setting: str
    n_runs: int
    metrics: dict[str, tuple[float, float]] = field(default_factory=dict)

    def mean(self, path: str) -> float:
        return self.metrics[path][0]

    def std(self, path: str) -> float:
        return self.metrics[path][1]

    def to_json(self) -> dict:
        return {
            "setting": self.setting,
            "n_runs": self.n_runs,
            "metrics": {k: {"mean": m, "std": s} for k, (m, s) in self.metrics.items()},
        }


def aggregate_runs(reports: Sequence[EvalReport]) -> RunAggregate:
    if len(reports) < 2:
        raise MetricError("aggregation needs at least 2 runs")
    settings = {r.setting for r in reports}
    if len(settings) != 1:
        raise MetricError(f"mixed settings in aggregation: {sorted(settings)}")
    aggregate = RunAggregate(setting=reports[0].setting, n_runs=len(reports))
    for path in _METRIC_PATHS:
        values = np.array([_metric_value(r, path) for r in reports])
        aggregate.metrics[path] = (float(values.mean()), float(values.std(ddof=1)))
    return aggregate


# --------------------------------------------------------------------------
# Cross-setting matrix
# --------------------------------------------------------------------------


@dataclass
class CrossCell:
    mean: float
    std: float | None
    values: list[float]

    def to_json(self) -> dict:
        return {"mean": self.mean, "std": self.std, "values": list(self.values)}


@dataclass
class CrossSettingMatrix:
    settings: list[str]
    cells: dict[tuple[str, str], CrossCell | None]

    def to_json(self) -> dict:
        return {
            "settings": list(self.settings),
            "cells": {
                f"{train}->{eval_}": (cell.to_json() if cell else None)
                for (train, eval_), cell in self.cells.items()
            },
        }


def cross_setting_eval(
    model_runs: Mapping[str, Mapping[str, Sequence[PredictionsMap]]],
    eval_corpora: Mapping[str, DialogSet],
    db: Database,
) -> CrossSettingMatrix:
    """Full-task combined scores for each (training setting, evaluation
    setting) pair. ``model_runs[train][eval]`` holds one predictions map
    per seed; missing pairs are reported as absent cells."""
    settings = list(eval_corpora)
    cells: dict[tuple[str, str], CrossCell | None] = {}
    for train in settings:
        for eval_setting in settings:
            runs = model_runs.get(train, {}).get(eval_setting)
            if not runs:
                cells[(train, eval_setting)] = None
                continue
            values = [
                full_task_eval(run, eval_corpora[eval_setting], db).combined for run in runs
            ]
            arr = np.array(values)
            cells[(train, eval_setting)] = CrossCell(
                mean=float(arr.mean()),
                std=float(arr.std(ddof=1)) if len(values) > 1 else None,
                values=values,
            )
    return CrossSettingMatrix(settings=settings, cells=cells)


# --------------------------------------------------------------------------
# Significance and table rendering
# --------------------------------------------------------------------------


def paired_bootstrap_pvalue(
    scores_a: Sequence[float],
    scores_b: Sequence[float],
    n_resamples: int = 10_000,
    seed: int = 0,
) -> float:
    """Two-sided paired bootstrap: resample paired score differences and
    measure how often the mean difference crosses zero."""
    if len(scores_a) != len(scores_b):
        raise MetricError("paired bootstrap needs equal-length score lists")
    if not scores_a:
        raise MetricError("paired bootstrap needs at least one pair")
    diffs = np.asarray(scores_a, dtype=float) - np.asarray(scores_b, dtype=float)
    if np.allclose(diffs, 0.0):
        return 1.0
    rng = np.random.default_rng(seed)
    n = len(diffs)
    samples = diffs[rng.integers(0, n, size=(n_resamples, n))].mean(axis=1)
    p_low = float(np.mean(samples <= 0.0))
    p_high = float(np.mean(samples >= 0.0))
    return min(1.0, 2.0 * min(p_low, p_high))


def _fmt(mean: float, std: float | None = None) -> str:
    return f"{mean:.2f}({std:.2f})" if std is not None else f"{mean:.2f}"


def format_eval_table(rows: Mapping[str, EvalReport | RunAggregate]) -> str:
    """Text table: one model per row, full-task / task / chitchat blocks."""
    header = (
        f"{'Model':<14} {'Full':>12} | {'BLEU':>12} {'Success':>12} {'Inform':>12} "
        f"{'Combined':>12} | {'Accuracy':>12} {'SuccRate':>12} {'BLEU':>12}"
    )
    lines = [header, "-" * len(header)]
    for name, row in rows.items():
        if isinstance(row, RunAggregate):
            def cell(path: str) -> str:
                return _fmt(*row.metrics[path])
        else:
            def cell(path: str, report: EvalReport = row) -> str:
                return _fmt(_metric_value(report, path))
        lines.append(
            f"{name:<14} {cell('full.combined'):>12} | {cell('tod.bleu'):>12} "
            f"{cell('tod.success'):>12} {cell('tod.inform'):>12} {cell('tod.combined'):>12} | "
            f"{cell('odd.accuracy'):>12} {cell('odd.success_rate'):>12} {cell('odd.bleu'):>12}"
        )
    return "\n".join(lines)


def format_cross_matrix(matrix: CrossSettingMatrix) -> str:
    width = 16
    corner = "train/eval"
    header = f"{corner:<{width}}" + "".join(f"{s:>{width}}" for s in matrix.settings)
    lines = [header, "-" * len(header)]
    for train in matrix.settings:
        cells = []
        for eval_setting in matrix.settings:
            cell = matrix.cells.get((train, eval_setting))
            if cell is None:
                cells.append(f"{'absent':>{width}}")
            else:
                cells.append(f"{_fmt(cell.mean, cell.std):>{width}}")
        lines.append(f"{train:<{width}}" + "".join(cells))
    return "\n".join(lines)


def format_stats_table(stats_by_name: Mapping[str, "CorpusStats"]) -> str:
    from .corpus import CorpusStats  # noqa: F401 (typing only)

    header = (
        f"{'Corpus':<12} {'Dialogs':>8} {'AvgSwitch':>10} {'OddTurns':>9} {'TodTurns':>9} "
        f"{'AvgOdd':>8} {'AvgTod':>8} {'OddLen':>8} {'TodLen':>8}"
    )
    lines = [header, "-" * len(header)]
    for name, s in stats_by_name.items():
        lines.append(
            f"{name:<12} {s.n_dialogs:>8} {s.avg_mode_switch:>10.2f} {s.total_odd_turns:>9} "
            f"{s.total_tod_turns:>9} {s.avg_odd_turns:>8.2f} {s.avg_tod_turns:>8.2f} "
            f"{s.avg_odd_length:>8.2f} {s.avg_tod_length:>8.2f}"
        )
    return "\n".join(lines)
