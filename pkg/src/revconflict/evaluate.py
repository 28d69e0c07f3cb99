"""Evaluation protocol: one-to-one evidence alignment, detection error rates,
intensity agreement statistics, and the composite score.

Alignment uses maximum-weight one-to-one assignment per review pair with a
minimum-similarity threshold; unmatched or below-threshold predictions count
as evidence-level false positives and their gold counterparts as false
negatives. Agreement statistics pool matched instances corpus-wide. A
statistic that is undefined on the data (constant vector, empty match set,
zero denominator) is reported as absent (None), never silently as 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .model import EvidencePair, PipelineResult, ReviewPair
from .sentences import segment_sentences
from .textmetrics import pair_similarity

DEFAULT_LAMBDA_MATCH = 0.3


class EvalError(Exception):
    pass


class KeyMismatch(EvalError):
    """Prediction and gold corpora do not describe the same review pairs."""


class LengthMismatch(EvalError):
    """Paired label vectors have different lengths."""


@dataclass(frozen=True)
class Alignment:
    """One-to-one evidence matching for a single review pair."""

    matches: tuple[tuple[int, int, float], ...]
    unmatched_pred: tuple[int, ...]
    unmatched_gold: tuple[int, ...]
    lambda_match: float

    def __post_init__(self) -> None:
        pred_seen = [m[0] for m in self.matches]
        gold_seen = [m[1] for m in self.matches]
        if len(set(pred_seen)) != len(pred_seen) or len(set(gold_seen)) != len(gold_seen):
            raise ValueError("alignment must be one-to-one")
        if any(similarity < self.lambda_match for _, _, similarity in self.matches):
            raise ValueError("match below the similarity threshold")


def match_instances(
    pred: Sequence[EvidencePair],
    gold: Sequence[EvidencePair],
    lambda_match: float = DEFAULT_LAMBDA_MATCH,
) -> Alignment:
    """Maximum-total-similarity one-to-one assignment, then threshold pruning.

    Assignment edges with similarity < lambda_match are discarded; those
    predictions and golds count as unmatched.
    """
    if not pred or not gold:
        return Alignment(
            matches=(),
            unmatched_pred=tuple(range(len(pred))),
            unmatched_gold=tuple(range(len(gold))),
            lambda_match=lambda_match,
        )
    similarity = np.zeros((len(pred), len(gold)))
    for i, p in enumerate(pred):
        for j, g in enumerate(gold):
            similarity[i, j] = pair_similarity(
                (p.quote_a, p.quote_b), (g.quote_a, g.quote_b)
            )
    rows, cols = linear_sum_assignment(similarity, maximize=True)
    matches = tuple(
        (int(i), int(j), float(similarity[i, j]))
        for i, j in zip(rows, cols)
        if similarity[i, j] >= lambda_match
    )
    matched_pred = {m[0] for m in matches}
    matched_gold = {m[1] for m in matches}
    return Alignment(
        matches=matches,
        unmatched_pred=tuple(i for i in range(len(pred)) if i not in matched_pred),
        unmatched_gold=tuple(j for j in range(len(gold)) if j not in matched_gold),
        lambda_match=lambda_match,
    )


@dataclass(frozen=True)
class PairConfusion:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def fnr(self) -> float | None:
        positives = self.tp + self.fn
        return self.fn / positives if positives else None

    @property
    def fpr(self) -> float | None:
        negatives = self.fp + self.tn
        return self.fp / negatives if negatives else None


def _keyed_results(results: Sequence[PipelineResult]) -> dict:
    keyed = {}
    for result in results:
        if result.key in keyed:
            raise KeyMismatch(f"duplicate prediction for pair {result.key}")
        keyed[result.key] = result
    return keyed


def _keyed_golds(golds: Sequence[ReviewPair]) -> dict:
    keyed = {}
    for pair in golds:
        if pair.key in keyed:
            raise KeyMismatch(f"duplicate gold entry for pair {pair.key}")
        keyed[pair.key] = pair
    return keyed


def _check_same_keys(results: Mapping, golds: Mapping) -> None:
    if set(results) != set(golds):
        missing = sorted(set(golds) - set(results))[:3]
        extra = sorted(set(results) - set(golds))[:3]
        raise KeyMismatch(
            f"prediction/gold corpora differ; missing from predictions: {missing}, "
            f"unknown to gold: {extra}"
        )


def pair_level_confusion(
    results: Sequence[PipelineResult], golds: Sequence[ReviewPair]
) -> PairConfusion:
    """Review-pair-level detection confusion. A pair is predicted positive
    iff it has at least one emitted instance; gold positive iff its gold
    list is non-empty."""
    keyed_results = _keyed_results(results)
    keyed_golds = _keyed_golds(golds)
    _check_same_keys(keyed_results, keyed_golds)
    tp = fp = fn = tn = 0
    for key, pair in keyed_golds.items():
        predicted = bool(keyed_results[key].instances)
        actual = bool(pair.gold)
        if actual and predicted:
            tp += 1
        elif actual and not predicted:
            fn += 1
        elif not actual and predicted:
            fp += 1
        else:
            tn += 1
    return PairConfusion(tp=tp, fp=fp, fn=fn, tn=tn)


def _check_lengths(x: Sequence, y: Sequence) -> None:
    if len(x) != len(y):
        raise LengthMismatch(f"label vectors differ in length: {len(x)} vs {len(y)}")


def cohen_kappa(pred_labels: Sequence[int], gold_labels: Sequence[int]) -> float | None:
    """Chance-corrected categorical agreement. Empty input is absent; two
    constant, equal raters (expected agreement 1) score 1.0."""
    _check_lengths(pred_labels, gold_labels)
    n = len(pred_labels)
    if n == 0:
        return None
    observed = sum(p == g for p, g in zip(pred_labels, gold_labels)) / n
    labels = set(pred_labels) | set(gold_labels)
    expected = sum(
        (sum(p == label for p in pred_labels) / n)
        * (sum(g == label for g in gold_labels) / n)
        for label in labels
    )
    if expected == 1.0:
        return 1.0
    return (observed - expected) / (1.0 - expected)


def _average_ranks(values: Sequence[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        # tied block shares the mean of the ranks it spans (1-based)
        mean_rank = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = mean_rank
        i = j + 1
    return ranks


def spearman_rho(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Pearson correlation of average-ranked vectors; absent when either
    side is constant."""
    _check_lengths(x, y)
    if len(x) == 0:
        return None
    rx = _average_ranks(x)
    ry = _average_ranks(y)
    mean_x = sum(rx) / len(rx)
    mean_y = sum(ry) / len(ry)
    cov = sum((a - mean_x) * (b - mean_y) for a, b in zip(rx, ry))
    var_x = sum((a - mean_x) ** 2 for a in rx)
    var_y = sum((b - mean_y) ** 2 for b in ry)
    if var_x == 0 or var_y == 0:
        return None
    return cov / math.sqrt(var_x * var_y)


def kendall_tau(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Tau-b by direct pair counting, with the standard tie corrections;
    absent when either side is constant."""
    _check_lengths(x, y)
    n = len(x)
    if n == 0:
        return None
    concordant_minus_discordant = 0
    ties_x = 0
    ties_y = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = (x[i] > x[j]) - (x[i] < x[j])
            dy = (y[i] > y[j]) - (y[i] < y[j])
            if dx == 0:
                ties_x += 1
            if dy == 0:
                ties_y += 1
            if dx != 0 and dy != 0:
                concordant_minus_discordant += dx * dy
    total = n * (n - 1) // 2
    denom = math.sqrt((total - ties_x) * (total - ties_y))
    if denom == 0:
        return None
    return concordant_minus_discordant / denom


def composite(
    kappa: float | None, rho: float | None, tau: float | None
) -> float | None:
    """Categorical plus ordinal agreement in one number: kappa + (rho + tau) / 2.
    Absent inputs make the composite absent."""
    if kappa is None or rho is None or tau is None:
        return None
    return kappa + (rho + tau) / 2.0


def _has_multiple_sentences(quote: str) -> bool:
    return len(segment_sentences(quote)) > 1


@dataclass(frozen=True)
class EvalReport:
    n_pairs: int
    lambda_match: float
    confusion: PairConfusion
    evidence_fp: int
    evidence_fn: int
    n_matched: int
    kappa: float | None
    spearman: float | None
    kendall: float | None
    composite_c: float | None
    multi_sentence_gold: int
    per_pair: tuple[dict, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "n_pairs": self.n_pairs,
            "lambda_match": self.lambda_match,
            "pair_level": {
                "tp": self.confusion.tp,
                "fp": self.confusion.fp,
                "fn": self.confusion.fn,
                "tn": self.confusion.tn,
                "fnr": self.confusion.fnr,
                "fpr": self.confusion.fpr,
            },
            "evidence_level": {
                "false_positives": self.evidence_fp,
                "false_negatives": self.evidence_fn,
                "matched": self.n_matched,
            },
            "intensity_agreement": {
                "kappa": self.kappa,
                "spearman_rho": self.spearman,
                "kendall_tau": self.kendall,
                "composite_c": self.composite_c,
                "n_matched": self.n_matched,
            },
            "multi_sentence_gold": self.multi_sentence_gold,
            "per_pair": list(self.per_pair),
        }


def evaluate_run(
    predictions: Sequence[PipelineResult],
    golds: Sequence[ReviewPair],
    lambda_match: float = DEFAULT_LAMBDA_MATCH,
) -> EvalReport:
    """Compose per-pair alignment with corpus-wide pooled agreement."""
    keyed_results = _keyed_results(predictions)
    keyed_golds = _keyed_golds(golds)
    _check_same_keys(keyed_results, keyed_golds)

    evidence_fp = 0
    evidence_fn = 0
    pooled_pred: list[int] = []
    pooled_gold: list[int] = []
    multi_sentence_gold = 0
    per_pair: list[dict] = []

    for key in sorted(keyed_golds):
        pair = keyed_golds[key]
        result = keyed_results[key]
        gold_instances = list(pair.gold or ())
        pred_evidence = [inst.evidence for inst in result.instances]
        gold_evidence = [g.evidence for g in gold_instances]
        alignment = match_instances(pred_evidence, gold_evidence, lambda_match)
        evidence_fp += len(alignment.unmatched_pred)
        evidence_fn += len(alignment.unmatched_gold)
        for pred_index, gold_index, _ in alignment.matches:
            pooled_pred.append(int(result.instances[pred_index].intensity))
            pooled_gold.append(int(gold_instances[gold_index].intensity))
        flagged = sum(
            _has_multiple_sentences(g.evidence.quote_a)
            or _has_multiple_sentences(g.evidence.quote_b)
            for g in gold_instances
        )
        multi_sentence_gold += flagged
        per_pair.append(
            {
                "paper_id": pair.paper_id,
                "review_a_id": pair.review_a.review_id,
                "review_b_id": pair.review_b.review_id,
                "n_pred": len(pred_evidence),
                "n_gold": len(gold_evidence),
                "n_matched": len(alignment.matches),
                "evidence_fp": len(alignment.unmatched_pred),
                "evidence_fn": len(alignment.unmatched_gold),
                "multi_sentence_gold": flagged,
            }
        )

    confusion = pair_level_confusion(predictions, golds)
    kappa = cohen_kappa(pooled_pred, pooled_gold)
    rho = spearman_rho(pooled_pred, pooled_gold)
    tau = kendall_tau(pooled_pred, pooled_gold)
    return EvalReport(
        n_pairs=len(golds),
        lambda_match=lambda_match,
        confusion=confusion,
        evidence_fp=evidence_fp,
        evidence_fn=evidence_fn,
        n_matched=len(pooled_pred),
        kappa=kappa,
        spearman=rho,
        kendall=tau,
        composite_c=composite(kappa, rho, tau),
        multi_sentence_gold=multi_sentence_gold,
        per_pair=tuple(per_pair),
    )
