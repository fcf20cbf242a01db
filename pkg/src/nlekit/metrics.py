"""Automatic evaluation: task accuracy, BLEU-1..4, perplexity helper.

BLEU here is the classic corpus-style score: modified n-gram precision with
multi-reference clipping, a brevity penalty against the closest reference
length, and a geometric mean over orders.  No smoothing is applied: a zero
precision at any order zeroes the score for that order.  Tokenization is
frozen as lowercase, punctuation detachment, whitespace split.

Semantic scorers that need large external resources (METEOR, BERTScore)
are ports: the framework passes candidate/reference pairs to a configured
scorer process and reports its numbers unchanged, or omits the fields when
no scorer is configured.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import re
import subprocess
from collections import Counter
from typing import Callable, Iterable, Sequence

from .formatting import labels_match

log = logging.getLogger(__name__)

MAX_BLEU_ORDER = 4

_PUNCT = re.compile(r"([^\w\s])")


class MetricsError(Exception):
    pass


def tokenize_for_bleu(text: str) -> list[str]:
    """Lowercase, detach punctuation as single tokens, split on whitespace."""
    return _PUNCT.sub(r" \1 ", text.lower()).split()


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n])
                   for i in range(len(tokens) - n + 1))


def _closest_ref_len(cand_len: int, ref_lens: Iterable[int]) -> int:
    # closest absolute difference; ties prefer the shorter reference
    return min(ref_lens, key=lambda r: (abs(cand_len - r), r))


@dataclasses.dataclass
class _BleuStats:
    correct: list[int]
    total: list[int]
    sys_len: int = 0
    ref_len: int = 0

    @classmethod
    def empty(cls) -> "_BleuStats":
        return cls(correct=[0] * MAX_BLEU_ORDER, total=[0] * MAX_BLEU_ORDER)

    def add(self, candidate: str, references: Sequence[str]) -> None:
        cand = tokenize_for_bleu(candidate)
        refs = [tokenize_for_bleu(r) for r in references]
        self.sys_len += len(cand)
        self.ref_len += _closest_ref_len(len(cand), [len(r) for r in refs])
        for i in range(MAX_BLEU_ORDER):
            cand_counts = _ngram_counts(cand, i + 1)
            if not cand_counts:
                continue
            clip: Counter = Counter()
            for ref in refs:
                ref_counts = _ngram_counts(ref, i + 1)
                for gram, count in ref_counts.items():
                    clip[gram] = max(clip[gram], count)
            self.total[i] += sum(cand_counts.values())
            self.correct[i] += sum(min(count, clip[gram])
                                   for gram, count in cand_counts.items())

    def score(self, n: int) -> float:
        if self.sys_len == 0:
            log.warning("BLEU over an empty candidate; scoring 0")
            return 0.0
        if any(self.total[i] == 0 or self.correct[i] == 0 for i in range(n)):
            return 0.0
        bp = 1.0
        if self.sys_len < self.ref_len:
            bp = math.exp(1.0 - self.ref_len / self.sys_len)
        log_precisions = [math.log(self.correct[i] / self.total[i])
                          for i in range(n)]
        return 100.0 * bp * math.exp(sum(log_precisions) / n)


def bleu_n(candidate: str, references: Sequence[str], n: int) -> float:
    """Sentence-level BLEU-n on the 0-100 scale."""
    if not 1 <= n <= MAX_BLEU_ORDER:
        raise MetricsError(f"BLEU order must be in 1..{MAX_BLEU_ORDER}")
    if not references:
        raise MetricsError("at least one reference required")
    stats = _BleuStats.empty()
    stats.add(candidate, references)
    return stats.score(n)


def corpus_bleu_n(candidates: Sequence[str],
                  references: Sequence[Sequence[str]], n: int) -> float:
    """Corpus-level BLEU-n: n-gram statistics pooled over all pairs."""
    if not 1 <= n <= MAX_BLEU_ORDER:
        raise MetricsError(f"BLEU order must be in 1..{MAX_BLEU_ORDER}")
    if len(candidates) != len(references):
        raise MetricsError("candidate/reference count mismatch")
    if not candidates:
        raise MetricsError("empty corpus")
    stats = _BleuStats.empty()
    for cand, refs in zip(candidates, references):
        if not refs:
            raise MetricsError("at least one reference required per candidate")
        stats.add(cand, refs)
    return stats.score(n)


def accuracy(predictions: Sequence[str], golds: Sequence[str]) -> float:
    """Percent of predictions matching gold labels (case-insensitive, trimmed)."""
    if len(predictions) != len(golds):
        raise MetricsError(
            f"length mismatch: {len(predictions)} predictions vs "
            f"{len(golds)} golds")
    if not predictions:
        raise MetricsError("empty prediction list")
    matches = sum(1 for p, g in zip(predictions, golds) if labels_match(p, g))
    return 100.0 * matches / len(predictions)


def perplexity(token_nlls: Iterable[Sequence[float]]) -> float:
    """exp of the mean per-token negative log-likelihood over all targets."""
    total = 0.0
    count = 0
    for nlls in token_nlls:
        total += sum(nlls)
        count += len(nlls)
    if count == 0:
        raise MetricsError("no target tokens to score")
    return math.exp(total / count)


# ── report type and external scorer ports ────────────────────────────────────

@dataclasses.dataclass
class MetricReport:
    accuracy_pct: float
    bleu: dict[int, float]
    n_examples: int
    meteor: float | None = None
    bertscore: float | None = None

    def to_dict(self) -> dict:
        obj: dict = {
            "accuracy_pct": self.accuracy_pct,
            "bleu": {str(n): v for n, v in sorted(self.bleu.items())},
            "n_examples": self.n_examples,
        }
        # absent scorers are omitted, never zero-filled
        if self.meteor is not None:
            obj["meteor"] = self.meteor
        if self.bertscore is not None:
            obj["bertscore"] = self.bertscore
        return obj


ScoreFn = Callable[[Sequence[tuple[str, Sequence[str]]]], float]


@dataclasses.dataclass
class ScorerPort:
    """External scorer hooks; either may be absent."""

    meteor: ScoreFn | None = None
    bertscore: ScoreFn | None = None


class LineProtocolScorer:
    """Scorer backed by a subprocess speaking line-delimited JSON.

    Requests are ``{"candidate": ..., "references": [...]}`` lines on stdin;
    the process answers one ``{"score": ...}`` line per request and the
    corpus score is the mean.
    """

    def __init__(self, command: Sequence[str]):
        self.command = list(command)

    def __call__(self, pairs: Sequence[tuple[str, Sequence[str]]]) -> float:
        request = "".join(
            json.dumps({"candidate": c, "references": list(r)}) + "\n"
            for c, r in pairs)
        proc = subprocess.run(self.command, input=request, text=True,
                              capture_output=True, check=True)
        scores = [json.loads(line)["score"]
                  for line in proc.stdout.splitlines() if line.strip()]
        if len(scores) != len(pairs):
            raise MetricsError(
                f"scorer returned {len(scores)} scores for {len(pairs)} pairs")
        return sum(scores) / len(scores)


def external_scores(pairs: Sequence[tuple[str, Sequence[str]]],
                    port: ScorerPort | None
                    ) -> tuple[float | None, float | None]:
    """Run configured external scorers; a failing scorer yields None."""
    if port is None:
        return None, None
    results = []
    for name, fn in (("meteor", port.meteor), ("bertscore", port.bertscore)):
        if fn is None:
            results.append(None)
            continue
        try:
            results.append(fn(pairs))
        except Exception as exc:
            log.warning("%s scorer unavailable: %s", name, exc)
            results.append(None)
    return results[0], results[1]
