"""Text-to-text formatting: examples to (input, target) pairs and back.

Every task shares one surface convention: an input that names the task and
lists its fields, and a target that is either the bare label or
``"[label] explanation: [free text]"``.  Explanation-bearing pairs prefix
the input with ``"explain "``; label-only pairs drop both that prefix and
the explanation clause.  ``parse_output`` inverts the target format and is
total over arbitrary decoder output.
"""

from __future__ import annotations

import dataclasses
import json
import os
import random
from typing import Iterable, Sequence, Union

from .corpus import DatasetSplit, Example, Task

EXPLAIN_PREFIX = "explain "
EXPLANATION_MARKER = " explanation: "


class FormattingError(Exception):
    """Raised for format requests an example cannot satisfy."""


@dataclasses.dataclass(frozen=True)
class FormattedPair:
    """A model-ready (input text, target text) pair."""

    input_text: str
    target_text: str
    has_explanation: bool
    source_id: str
    task: Task


@dataclasses.dataclass(frozen=True)
class SplitRef:
    """A symbolic reference to a dataset split, resolved by the run engine.

    ``key`` names a well-known slot ("esnli/train", "child/train",
    "child/fewshot", ...); ``nominal_size`` is the full-scale example count
    used to pick hyperparameter ranges for unions before any data is loaded.
    """

    key: str
    nominal_size: int


@dataclasses.dataclass(frozen=True)
class SpecEntry:
    split: Union[DatasetSplit, SplitRef]
    with_explanations: bool

    @property
    def size(self) -> int:
        if isinstance(self.split, SplitRef):
            return self.split.nominal_size
        return len(self.split)


@dataclasses.dataclass(frozen=True)
class DatasetSpec:
    """An ordered list of (split, with_explanations) entries to be unioned."""

    entries: tuple[SpecEntry, ...]

    def __post_init__(self) -> None:
        if not self.entries:
            raise FormattingError("dataset spec has no entries")
        for entry in self.entries:
            if (entry.with_explanations
                    and isinstance(entry.split, DatasetSplit)
                    and any(not e.nles for e in entry.split)):
                raise FormattingError(
                    f"split {entry.split.name!r} requested with explanations "
                    f"but contains explanation-less examples")

    def is_resolved(self) -> bool:
        return all(isinstance(e.split, DatasetSplit) for e in self.entries)


def canonical_label(e: Example) -> str:
    """The label string as it appears in formatted targets."""
    if e.task is Task.COMVE:
        return f"Statement {e.label}"
    return e.label


def _input_body(e: Example) -> str:
    if e.task in (Task.ESNLI, Task.SNLI_LABEL_ONLY):
        return (f"nli premise: {e.fields['premise']} "
                f"hypothesis: {e.fields['hypothesis']}")
    if e.task is Task.WINOGRANDE:
        return (f"WinoGrande schema: {e.fields['schema']} "
                f"options: {e.fields['option1']}, {e.fields['option2']}.")
    if e.task is Task.COMVE:
        return (f"ComVE Sentence 1: {e.fields['statement1']} "
                f"Sentence 2: {e.fields['statement2']}")
    raise FormattingError(f"no template for task {e.task!r}")


def format_input(e: Example, with_explanation: bool) -> str:
    """Input text alone; usable for prediction on explanation-less examples."""
    body = _input_body(e)
    return EXPLAIN_PREFIX + body if with_explanation else body


def format_example(e: Example, with_explanation: bool) -> FormattedPair:
    """Render one example into its task's input/target template."""
    body = _input_body(e)
    label = canonical_label(e)
    if with_explanation:
        if not e.nles:
            raise FormattingError(
                f"example {e.id} has no explanation to format")
        return FormattedPair(
            input_text=EXPLAIN_PREFIX + body,
            target_text=f"{label}{EXPLANATION_MARKER}{e.nles[0]}",
            has_explanation=True, source_id=e.id, task=e.task)
    return FormattedPair(input_text=body, target_text=label,
                         has_explanation=False, source_id=e.id, task=e.task)


def parse_output(text: str, task: Task | None = None) -> tuple[str, str]:
    """Split decoder output into (label, explanation).

    Total over arbitrary text: without the explanation marker the whole
    trimmed text is the label and the explanation is empty.  The task
    argument is accepted for symmetry with ``format_example`` but the split
    rule is task-independent.
    """
    del task
    idx = text.find(EXPLANATION_MARKER)
    if idx < 0:
        return text.strip(), ""
    return (text[:idx].strip(),
            text[idx + len(EXPLANATION_MARKER):].strip())


def labels_match(predicted: str, gold: str) -> bool:
    """Case-insensitive exact match after whitespace trimming."""
    return predicted.strip().lower() == gold.strip().lower()


def build_union(spec: DatasetSpec, seed: int) -> list[FormattedPair]:
    """Format every entry and shuffle the concatenation deterministically.

    Duplicated underlying examples are kept: the same instance may appear
    once label-only and once with an explanation, and those are distinct
    training pairs.
    """
    if not spec.is_resolved():
        unresolved = [e.split.key for e in spec.entries
                      if isinstance(e.split, SplitRef)]
        raise FormattingError(
            f"spec has unresolved split references: {unresolved}")
    pairs: list[FormattedPair] = []
    for entry in spec.entries:
        assert isinstance(entry.split, DatasetSplit)
        for e in entry.split:
            pairs.append(format_example(e, entry.with_explanations))
    random.Random(seed).shuffle(pairs)
    return pairs


def write_pairs(pairs: Iterable[FormattedPair], path: str) -> None:
    """Write pairs as line-delimited JSON for inspection or external trainers."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(json.dumps({
                "input_text": p.input_text, "target_text": p.target_text,
                "has_explanation": p.has_explanation,
                "source_id": p.source_id, "task": p.task.value,
            }, sort_keys=True, ensure_ascii=False) + "\n")


def read_pairs(path: str) -> list[FormattedPair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            pairs.append(FormattedPair(
                input_text=obj["input_text"], target_text=obj["target_text"],
                has_explanation=obj["has_explanation"],
                source_id=obj["source_id"], task=Task(obj["task"])))
    return pairs
