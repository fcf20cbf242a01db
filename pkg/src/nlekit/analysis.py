"""Aggregation of human judgments into model reports and significance tests.

Annotators rate each explanation Yes / Weak Yes / Weak No / No; ratings
carry weights 1, 2/3, 1/3, 0 and the explanation score of a model is 100
times the mean weight over its rated explanations.  Only instances the
model classified correctly contribute ratings, and only the model-written
explanation slot counts toward the score (the gold slot exists to anchor
the annotator and to drive quality gates upstream).

Model comparisons use a paired Student's t-test over per-instance mean
weights, restricted to instances both models classified correctly.
"""

from __future__ import annotations

import dataclasses
import logging
from collections import Counter, defaultdict
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats as scipy_stats

log = logging.getLogger(__name__)

RATINGS = ("yes", "weak_yes", "weak_no", "no")
RATING_WEIGHTS = {"yes": 1.0, "weak_yes": 2.0 / 3.0, "weak_no": 1.0 / 3.0,
                  "no": 0.0}
SHORTCOMINGS = ("does_not_make_sense", "insufficient_justification",
                "irrelevant", "too_trivial", "none")
PROVENANCE_MODEL = "model"
PROVENANCE_GOLD = "gold"


class AnalysisError(Exception):
    pass


def normalize_rating(rating: str) -> str:
    """Accept either wire form ("weak_yes") or display form ("Weak Yes")."""
    key = rating.strip().lower().replace(" ", "_")
    if key not in RATINGS:
        raise AnalysisError(f"unknown rating {rating!r}")
    return key


@dataclasses.dataclass(frozen=True)
class AnnotationRecord:
    """One annotator's judgment of one instance.

    Exactly two explanation slots are rated; ``slot_provenance`` maps each
    slot to "model" or "gold" and is only ever populated post-hoc, after
    the blind collection phase.
    """

    instance_id: str
    annotator_id: str
    human_label: str
    ratings: dict[str, str]
    shortcomings: dict[str, tuple[str, ...]]
    slot_provenance: dict[str, str]

    def validate(self) -> None:
        if len(self.ratings) != 2:
            raise AnalysisError(
                f"record for {self.instance_id}: expected exactly 2 rated "
                f"slots, got {len(self.ratings)}")
        if (set(self.ratings) != set(self.shortcomings)
                or set(self.ratings) != set(self.slot_provenance)):
            raise AnalysisError(
                f"record for {self.instance_id}: slot keys disagree")
        if sorted(self.slot_provenance.values()) != [PROVENANCE_GOLD,
                                                     PROVENANCE_MODEL]:
            raise AnalysisError(
                f"record for {self.instance_id}: need one model and one "
                f"gold slot")
        for slot, rating in self.ratings.items():
            if rating not in RATINGS:
                raise AnalysisError(
                    f"record for {self.instance_id}: bad rating {rating!r}")
            chosen = self.shortcomings[slot]
            if not chosen:
                raise AnalysisError(
                    f"record for {self.instance_id}: empty shortcoming set "
                    f"for slot {slot}")
            if any(s not in SHORTCOMINGS for s in chosen):
                raise AnalysisError(
                    f"record for {self.instance_id}: unknown shortcoming in "
                    f"{chosen}")
            if "none" in chosen and len(chosen) > 1:
                raise AnalysisError(
                    f"record for {self.instance_id}: 'none' excludes other "
                    f"shortcomings")

    def model_slot(self) -> str:
        for slot, origin in self.slot_provenance.items():
            if origin == PROVENANCE_MODEL:
                return slot
        raise AnalysisError(f"record for {self.instance_id}: no model slot")

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "annotator_id": self.annotator_id,
            "human_label": self.human_label,
            "ratings": dict(self.ratings),
            "shortcomings": {k: list(v) for k, v in self.shortcomings.items()},
            "slot_provenance": dict(self.slot_provenance),
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "AnnotationRecord":
        record = cls(
            instance_id=obj["instance_id"],
            annotator_id=obj["annotator_id"],
            human_label=obj["human_label"],
            ratings=dict(obj["ratings"]),
            shortcomings={k: tuple(v)
                          for k, v in obj["shortcomings"].items()},
            slot_provenance=dict(obj["slot_provenance"]))
        record.validate()
        return record


@dataclasses.dataclass
class ModelReport:
    """Aggregated human evaluation of one trained model."""

    task_accuracy_pct: float
    nle_score: float
    rating_pct: dict[str, float]
    shortcoming_pct: dict[str, float]
    n_rated: int
    correct_instance_ids: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "task_accuracy_pct": self.task_accuracy_pct,
            "nle_score": self.nle_score,
            "rating_pct": dict(self.rating_pct),
            "shortcoming_pct": dict(self.shortcoming_pct),
            "n_rated": self.n_rated,
            "correct_instance_ids": list(self.correct_instance_ids),
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "ModelReport":
        return cls(
            task_accuracy_pct=obj["task_accuracy_pct"],
            nle_score=obj["nle_score"],
            rating_pct=dict(obj["rating_pct"]),
            shortcoming_pct=dict(obj["shortcoming_pct"]),
            n_rated=obj["n_rated"],
            correct_instance_ids=tuple(obj["correct_instance_ids"]))


def nle_score(counts: Mapping[str, float]) -> float:
    """Weighted rating average on the 0-100 scale.

    Works on raw counts or on percentages: the weights are applied to the
    normalized distribution either way.
    """
    normalized = {normalize_rating(k): v for k, v in counts.items()}
    total = sum(normalized.values())
    if total <= 0:
        raise AnalysisError("no ratings to score")
    weighted = sum(RATING_WEIGHTS[r] * normalized.get(r, 0.0)
                   for r in RATINGS)
    return 100.0 * weighted / total


def aggregate(records: Sequence[AnnotationRecord],
              model_correct: Mapping[str, bool]) -> ModelReport:
    """Build a ModelReport from annotation records and prediction outcomes.

    ``model_correct`` maps every evaluated instance id to whether the model
    predicted its label correctly; only correct instances contribute
    ratings.  Partial coverage (fewer than three annotators somewhere) is
    aggregated as-is with ``n_rated`` reporting the actual count.
    """
    if not records:
        raise AnalysisError("no annotation records to aggregate")
    if not model_correct:
        raise AnalysisError("no prediction outcomes supplied")
    unknown = sorted({r.instance_id for r in records} - set(model_correct))
    if unknown:
        raise AnalysisError(
            f"records reference unevaluated instances: {unknown[:5]}")

    rating_counts: Counter = Counter()
    shortcoming_counts: Counter = Counter()
    for record in records:
        record.validate()
        if not model_correct[record.instance_id]:
            continue
        slot = record.model_slot()
        rating_counts[record.ratings[slot]] += 1
        shortcoming_counts.update(record.shortcomings[slot])

    n_rated = sum(rating_counts.values())
    if n_rated == 0:
        raise AnalysisError(
            "no ratings on correctly classified instances; refusing to "
            "report a score over nothing")
    rating_pct = {r: 100.0 * rating_counts.get(r, 0) / n_rated
                  for r in RATINGS}
    n_selections = sum(shortcoming_counts.values())
    shortcoming_pct = {s: 100.0 * shortcoming_counts.get(s, 0) / n_selections
                       for s in SHORTCOMINGS}
    return ModelReport(
        task_accuracy_pct=100.0 * sum(
            1 for v in model_correct.values() if v) / len(model_correct),
        nle_score=nle_score(rating_counts),
        rating_pct=rating_pct,
        shortcoming_pct=shortcoming_pct,
        n_rated=n_rated,
        correct_instance_ids=tuple(sorted(
            i for i, ok in model_correct.items() if ok)))


# ── significance testing ─────────────────────────────────────────────────────

@dataclasses.dataclass
class TTestResult:
    t: float
    p_one_tailed: float
    degenerate: bool = False


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> TTestResult:
    """One-tailed paired t-test of mean(a) > mean(b).

    t = mean(d) / (sd(d)/sqrt(n)) over differences d = a - b with the
    sample standard deviation (n-1 denominator); p is the upper tail of
    Student's t with n-1 degrees of freedom.  Identical samples give
    (0, 0.5).  Zero-variance nonzero-mean differences have no finite t;
    they are reported as +/-inf with p 0 or 1 and flagged degenerate.
    """
    if len(a) != len(b):
        raise AnalysisError("paired samples must have equal length")
    n = len(a)
    if n < 2:
        raise AnalysisError("need at least 2 pairs")
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(t=0.0, p_one_tailed=0.5)
        return TTestResult(t=float("inf") if mean > 0 else float("-inf"),
                           p_one_tailed=0.0 if mean > 0 else 1.0,
                           degenerate=True)
    t = mean / (sd / np.sqrt(n))
    p = float(scipy_stats.t.sf(t, n - 1))
    return TTestResult(t=float(t), p_one_tailed=p)


def per_instance_scores(records: Iterable[AnnotationRecord]
                        ) -> dict[str, float]:
    """Mean annotator weight on the model slot, keyed by instance."""
    weights: dict[str, list[float]] = defaultdict(list)
    for record in records:
        slot = record.model_slot()
        weights[record.instance_id].append(
            RATING_WEIGHTS[record.ratings[slot]])
    return {instance: sum(values) / len(values)
            for instance, values in weights.items()}


@dataclasses.dataclass
class PairedScores:
    instance_ids: list[str]
    scores_a: list[float]
    scores_b: list[float]


def pair_score_maps(correct_a: Iterable[str], scores_a: Mapping[str, float],
                    correct_b: Iterable[str], scores_b: Mapping[str, float]
                    ) -> PairedScores:
    """Pair per-instance scores on the both-correct, both-scored instances."""
    paired = sorted(set(correct_a) & set(correct_b)
                    & set(scores_a) & set(scores_b))
    if not paired:
        raise AnalysisError(
            "no instance was correctly classified and rated for both models")
    return PairedScores(
        instance_ids=paired,
        scores_a=[scores_a[i] for i in paired],
        scores_b=[scores_b[i] for i in paired])


def pair_items_for_test(report_a: ModelReport, report_b: ModelReport,
                        records_a: Sequence[AnnotationRecord],
                        records_b: Sequence[AnnotationRecord]
                        ) -> PairedScores:
    """Build paired per-instance score vectors for two models."""
    both_correct = (set(report_a.correct_instance_ids)
                    & set(report_b.correct_instance_ids))
    scores_a = per_instance_scores(records_a)
    scores_b = per_instance_scores(records_b)
    unrated = both_correct - (set(scores_a) & set(scores_b))
    if unrated:
        log.warning("%d both-correct instance(s) lack ratings on one side "
                    "and are excluded from pairing", len(unrated))
    return pair_score_maps(report_a.correct_instance_ids, scores_a,
                           report_b.correct_instance_ids, scores_b)
