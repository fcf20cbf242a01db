"""Dataset loading, reconstruction, and splitting for the three tasks.

The parent task is an NLI corpus whose every train/dev example carries one
human explanation.  The two child tasks are a binary fill-in-the-gap task
(re-split here into train/dev, with a small explanation set attached to
100/50/100 instances) and a commonsense-validation task built by joining a
statement-pair file with an explanation file on the nonsensical statement
text.  Loaders normalize everything into :class:`Example` records and never
mutate text content: no lowercasing, no tokenization, no trimming beyond
line endings.

All seeded operations are deterministic: same input and seed, same output.
"""

from __future__ import annotations

import csv
import dataclasses
import glob
import json
import logging
import os
import random
from enum import Enum
from typing import Iterable, Iterator, Sequence

log = logging.getLogger(__name__)

ESNLI_LABELS = ("entailment", "neutral", "contradiction")

# Reconstruction constants for the fill-in-the-gap task: the published
# training set has 40,398 instances and is re-split 39,130 / 1,268.
WG_RAW_TRAIN_SIZE = 40_398
WG_TRAIN_SIZE = 39_130
WG_DEV_SIZE = 1_268

# Explanation counts attached to the re-split task: train/dev/test.
FEW_SHOT_NLE_COUNTS = (100, 50, 100)

BLANK_MARKER = "_"


class Task(str, Enum):
    """Task identity of an example; the value doubles as the wire name."""

    ESNLI = "esnli"
    SNLI_LABEL_ONLY = "snli_label_only"
    WINOGRANDE = "winogrande"
    COMVE = "comve"


class CorpusError(Exception):
    """Raised for malformed source files and violated construction contracts."""


@dataclasses.dataclass(frozen=True)
class Example:
    """One task instance: named text fields, a label, and 0-3 explanations."""

    id: str
    task: Task
    fields: dict[str, str]
    label: str
    nles: tuple[str, ...] = ()

    def validate(self) -> None:
        if self.task in (Task.ESNLI, Task.SNLI_LABEL_ONLY):
            if self.label not in ESNLI_LABELS:
                raise CorpusError(
                    f"example {self.id}: label {self.label!r} outside "
                    f"{ESNLI_LABELS}")
        elif self.task is Task.WINOGRANDE:
            schema = self.fields.get("schema", "")
            if schema.count(BLANK_MARKER) != 1:
                raise CorpusError(
                    f"example {self.id}: schema must contain exactly one "
                    f"{BLANK_MARKER!r} marker")
            options = (self.fields.get("option1"), self.fields.get("option2"))
            if self.label not in options:
                raise CorpusError(
                    f"example {self.id}: label {self.label!r} is neither "
                    f"option value")
        elif self.task is Task.COMVE:
            if self.label not in ("1", "2"):
                raise CorpusError(
                    f"example {self.id}: label {self.label!r} not in "
                    "{'1', '2'}")
        if len(self.nles) > 3:
            raise CorpusError(f"example {self.id}: more than 3 explanations")


@dataclasses.dataclass(frozen=True)
class DatasetSplit:
    """An ordered, id-unique collection of examples with a construction record."""

    name: str
    examples: tuple[Example, ...]
    provenance: str

    def __post_init__(self) -> None:
        if not self.provenance:
            raise CorpusError(f"split {self.name!r}: empty provenance")
        seen: set[str] = set()
        for e in self.examples:
            if e.id in seen:
                raise CorpusError(
                    f"split {self.name!r}: duplicate example id {e.id!r}")
            seen.add(e.id)

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self) -> Iterator[Example]:
        return iter(self.examples)

    def ids(self) -> set[str]:
        return {e.id for e in self.examples}


# ── parent task (NLI with explanations) ──────────────────────────────────────

def _read_csv_rows(path: str) -> Iterator[tuple[int, dict[str, str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for lineno, row in enumerate(reader, start=2):  # header is line 1
            yield lineno, row


def _esnli_example(path: str, lineno: int, row: dict[str, str],
                   split_name: str, index: int) -> Example:
    try:
        label = (row["gold_label"] or "").strip()
        premise = row["Sentence1"]
        hypothesis = row["Sentence2"]
    except KeyError as exc:
        raise CorpusError(f"{path}:{lineno}: missing column {exc}") from None
    if premise is None or hypothesis is None:
        raise CorpusError(f"{path}:{lineno}: missing sentence field")
    if label not in ESNLI_LABELS:
        raise CorpusError(
            f"{path}:{lineno}: label {label!r} outside {ESNLI_LABELS}")
    if split_name == "test":
        nles = tuple(row[c] for c in ("Explanation_1", "Explanation_2",
                                      "Explanation_3")
                     if row.get(c))
    else:
        # one explanation per train/dev example
        nles = (row.get("Explanation_1") or "",)
    if not all(nles) or not nles:
        raise CorpusError(f"{path}:{lineno}: missing explanation")
    ex_id = row.get("pairID") or f"esnli-{split_name}-{index}"
    return Example(id=ex_id, task=Task.ESNLI,
                   fields={"premise": premise, "hypothesis": hypothesis},
                   label=label, nles=nles)


def load_esnli(source_path: str) -> dict[str, DatasetSplit]:
    """Load the parent NLI corpus from ``source_path``.

    Expects ``esnli_train*.csv`` (one or more files, concatenated in sorted
    order), ``esnli_dev.csv``, and ``esnli_test.csv`` with columns
    ``gold_label, Sentence1, Sentence2, Explanation_1[, _2, _3]``.
    """
    splits: dict[str, DatasetSplit] = {}
    file_sets = {
        "train": sorted(glob.glob(os.path.join(source_path, "esnli_train*.csv"))),
        "dev": [os.path.join(source_path, "esnli_dev.csv")],
        "test": [os.path.join(source_path, "esnli_test.csv")],
    }
    for split_name, paths in file_sets.items():
        if not paths or not all(os.path.exists(p) for p in paths):
            raise CorpusError(
                f"missing source file(s) for split {split_name!r} under "
                f"{source_path}")
        examples: list[Example] = []
        for path in paths:
            for lineno, row in _read_csv_rows(path):
                examples.append(_esnli_example(path, lineno, row, split_name,
                                               len(examples)))
        provenance = json.dumps({
            "task": Task.ESNLI.value, "split": split_name,
            "source_files": [os.path.basename(p) for p in paths],
            "n_examples": len(examples),
        }, sort_keys=True)
        splits[split_name] = DatasetSplit(split_name, tuple(examples),
                                          provenance)
        log.info("loaded %s/%s: %d examples", Task.ESNLI.value, split_name,
                 len(examples))
    return splits


def snli_label_only_view(split: DatasetSplit) -> DatasetSplit:
    """A label-only copy of a parent split, re-tagged and stripped of NLEs.

    Used by the regimes that train on the union of the explanation corpus
    and its underlying label-only corpus.
    """
    examples = tuple(
        dataclasses.replace(e, id=f"snli:{e.id}", task=Task.SNLI_LABEL_ONLY,
                            nles=())
        for e in split.examples)
    provenance = json.dumps({
        "task": Task.SNLI_LABEL_ONLY.value, "derived_from": split.name,
        "n_examples": len(examples),
    }, sort_keys=True)
    return DatasetSplit(split.name, examples, provenance)


# ── fill-in-the-gap child task ───────────────────────────────────────────────

def load_winogrande(source_path: str) -> dict[str, DatasetSplit]:
    """Load the fill-in-the-gap corpus from JSONL files.

    Expects ``train.jsonl`` and ``dev.jsonl`` with objects
    ``{qID, sentence, option1, option2, answer}`` where ``answer`` is ``"1"``
    or ``"2"``.  The label is normalized to the chosen option's text.
    """
    splits: dict[str, DatasetSplit] = {}
    for split_name in ("train", "dev"):
        path = os.path.join(source_path, f"{split_name}.jsonl")
        if not os.path.exists(path):
            raise CorpusError(f"missing source file {path}")
        examples = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise CorpusError(f"{path}:{lineno}: {exc}") from None
                try:
                    answer = str(obj["answer"])
                    options = {"1": obj["option1"], "2": obj["option2"]}
                    label = options[answer]
                except KeyError as exc:
                    raise CorpusError(
                        f"{path}:{lineno}: missing field or bad answer "
                        f"{exc}") from None
                e = Example(
                    id=str(obj.get("qID") or f"wg-{split_name}-{lineno}"),
                    task=Task.WINOGRANDE,
                    fields={"schema": obj["sentence"],
                            "option1": obj["option1"],
                            "option2": obj["option2"]},
                    label=label)
                e.validate()
                examples.append(e)
        provenance = json.dumps({
            "task": Task.WINOGRANDE.value, "split": split_name,
            "source_files": [os.path.basename(path)],
            "n_examples": len(examples),
        }, sort_keys=True)
        splits[split_name] = DatasetSplit(split_name, tuple(examples),
                                          provenance)
        log.info("loaded %s/%s: %d examples", Task.WINOGRANDE.value,
                 split_name, len(examples))
    return splits


def split_winogrande(raw_train: DatasetSplit,
                     seed: int) -> tuple[DatasetSplit, DatasetSplit]:
    """Re-split the 40,398-instance training set into 39,130 / 1,268.

    The published corpus has no validation labels we can use downstream, so
    the original dev set serves as test and the training set is re-split
    here.  The draw is seeded and recorded in provenance; both outputs keep
    the input's relative order.
    """
    if len(raw_train) != WG_RAW_TRAIN_SIZE:
        raise CorpusError(
            f"expected {WG_RAW_TRAIN_SIZE} training examples, got "
            f"{len(raw_train)}; refusing to re-split a nonstandard source")
    rng = random.Random(seed)
    dev_indices = set(rng.sample(range(len(raw_train)), WG_DEV_SIZE))
    train_examples = tuple(e for i, e in enumerate(raw_train.examples)
                           if i not in dev_indices)
    dev_examples = tuple(e for i, e in enumerate(raw_train.examples)
                         if i in dev_indices)
    base = {"task": Task.WINOGRANDE.value, "derived_from": "train",
            "split_seed": seed}
    wg_train = DatasetSplit(
        "train", train_examples,
        json.dumps({**base, "split": "train",
                    "n_examples": len(train_examples)}, sort_keys=True))
    wg_dev = DatasetSplit(
        "dev", dev_examples,
        json.dumps({**base, "split": "dev",
                    "n_examples": len(dev_examples)}, sort_keys=True))
    assert len(wg_train) == WG_TRAIN_SIZE
    return wg_train, wg_dev


def attach_nles(split: DatasetSplit,
                annotations: Sequence[tuple[str, str]]) -> DatasetSplit:
    """Attach one explanation to each annotated example, by id.

    Every annotation id must exist in the split and appear at most once;
    all other examples pass through unchanged.
    """
    by_id: dict[str, str] = {}
    for ex_id, nle in annotations:
        if ex_id in by_id:
            raise CorpusError(f"duplicate annotation for id {ex_id!r}")
        by_id[ex_id] = nle
    known = split.ids()
    unknown = sorted(set(by_id) - known)
    if unknown:
        raise CorpusError(f"annotations reference unknown ids: {unknown[:5]}")
    examples = tuple(
        dataclasses.replace(e, nles=(by_id[e.id],)) if e.id in by_id else e
        for e in split.examples)
    provenance = json.dumps({
        "base": json.loads(split.provenance),
        "n_attached_nles": len(by_id),
    }, sort_keys=True)
    return DatasetSplit(split.name, examples, provenance)


def sample_few_shot(split: DatasetSplit, k: int, seed: int) -> DatasetSplit:
    """Seeded k-subsample of the split's explanation-bearing examples.

    The sampled ids go into provenance so a published run can be checked
    example-by-example.  Input order is preserved.
    """
    eligible = [i for i, e in enumerate(split.examples) if e.nles]
    if len(eligible) < k:
        raise CorpusError(
            f"need {k} explanation-bearing examples, split has "
            f"{len(eligible)}")
    rng = random.Random(seed)
    chosen = sorted(rng.sample(eligible, k))
    examples = tuple(split.examples[i] for i in chosen)
    provenance = json.dumps({
        "base": json.loads(split.provenance),
        "few_shot_k": k, "few_shot_seed": seed,
        "sampled_ids": [e.id for e in examples],
    }, sort_keys=True)
    return DatasetSplit(split.name, examples, provenance)


# ── commonsense-validation child task ────────────────────────────────────────

def load_comve_statements(path: str, split_name: str) -> DatasetSplit:
    """Load a statement-pair file: CSV ``id,sent0,sent1,label``, label 0/1
    indexing the nonsensical statement (normalized to "1"/"2")."""
    if not os.path.exists(path):
        raise CorpusError(f"missing source file {path}")
    examples = []
    for lineno, row in _read_csv_rows(path):
        try:
            label_idx = row["label"].strip()
            if label_idx not in ("0", "1"):
                raise CorpusError(
                    f"{path}:{lineno}: label {label_idx!r} not in {{0, 1}}")
            e = Example(
                id=str(row["id"]), task=Task.COMVE,
                fields={"statement1": row["sent0"],
                        "statement2": row["sent1"]},
                label=str(int(label_idx) + 1))
        except KeyError as exc:
            raise CorpusError(f"{path}:{lineno}: missing column {exc}") from None
        examples.append(e)
    provenance = json.dumps({
        "task": Task.COMVE.value, "split": split_name, "stage": "statements",
        "source_files": [os.path.basename(path)], "n_examples": len(examples),
    }, sort_keys=True)
    return DatasetSplit(split_name, tuple(examples), provenance)


def load_comve_explanations(path: str, split_name: str) -> DatasetSplit:
    """Load an explanation file: CSV ``id,FalseSent,Reason1,Reason2,Reason3``.

    Each row becomes a pseudo-example keyed by the nonsensical statement
    text; :func:`merge_comve` joins it onto the statement pairs.
    """
    if not os.path.exists(path):
        raise CorpusError(f"missing source file {path}")
    examples = []
    for lineno, row in _read_csv_rows(path):
        try:
            nles = tuple(row[c] for c in ("Reason1", "Reason2", "Reason3")
                         if row.get(c))
            e = Example(
                id=str(row["id"]), task=Task.COMVE,
                fields={"statement": row["FalseSent"]},
                label="1", nles=nles)
        except KeyError as exc:
            raise CorpusError(f"{path}:{lineno}: missing column {exc}") from None
        if not nles:
            raise CorpusError(f"{path}:{lineno}: no reasons given")
        examples.append(e)
    provenance = json.dumps({
        "task": Task.COMVE.value, "split": split_name, "stage": "explanations",
        "source_files": [os.path.basename(path)], "n_examples": len(examples),
    }, sort_keys=True)
    return DatasetSplit(split_name, tuple(examples), provenance)


def merge_comve(task_a: DatasetSplit, task_c: DatasetSplit) -> DatasetSplit:
    """Join statement pairs with explanations on the nonsensical statement.

    The join must be total and unambiguous: a statement missing from the
    explanation file, or appearing there twice with the same text, is an
    error naming the offending ids.  Train and dev keep one explanation per
    example; the test split keeps all three.
    """
    by_text: dict[str, Example] = {}
    ambiguous: list[str] = []
    for e in task_c.examples:
        text = e.fields["statement"]
        if text in by_text:
            ambiguous.append(f"{by_text[text].id}/{e.id}")
        else:
            by_text[text] = e
    if ambiguous:
        raise CorpusError(
            f"ambiguous duplicate statements in explanation file: "
            f"{ambiguous[:5]}")
    keep_all = task_a.name == "test"
    merged: list[Example] = []
    unmatched: list[str] = []
    for e in task_a.examples:
        text = e.fields[f"statement{e.label}"]
        entry = by_text.get(text)
        if entry is None:
            unmatched.append(e.id)
            continue
        nles = entry.nles if keep_all else entry.nles[:1]
        merged.append(dataclasses.replace(e, nles=nles))
    if unmatched:
        raise CorpusError(
            f"{len(unmatched)} statement(s) missing from explanation file; "
            f"ids {unmatched[:5]}")
    provenance = json.dumps({
        "task": Task.COMVE.value, "split": task_a.name, "stage": "merged",
        "statements": json.loads(task_a.provenance),
        "explanations": json.loads(task_c.provenance),
        "n_examples": len(merged), "nles_kept": "all" if keep_all else "first",
    }, sort_keys=True)
    return DatasetSplit(task_a.name, tuple(merged), provenance)


def load_comve(source_path: str) -> dict[str, DatasetSplit]:
    """Load and merge all three commonsense-validation splits.

    Expects ``taskA_{train,dev,test}.csv`` and ``taskC_{train,dev,test}.csv``
    under ``source_path``.
    """
    splits = {}
    for split_name in ("train", "dev", "test"):
        a = load_comve_statements(
            os.path.join(source_path, f"taskA_{split_name}.csv"), split_name)
        c = load_comve_explanations(
            os.path.join(source_path, f"taskC_{split_name}.csv"), split_name)
        splits[split_name] = merge_comve(a, c)
        log.info("merged %s/%s: %d examples", Task.COMVE.value, split_name,
                 len(splits[split_name]))
    return splits


# ── normalized persistence ───────────────────────────────────────────────────

def write_split(split: DatasetSplit, path: str) -> None:
    """Write a split as line-delimited JSON plus a ``.provenance`` sidecar.

    Record schema: ``{id, task, fields, label, nles}``.  This file format is
    the contract consumed by every downstream module.
    """
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for e in split.examples:
            fh.write(json.dumps({
                "id": e.id, "task": e.task.value, "fields": e.fields,
                "label": e.label, "nles": list(e.nles),
            }, sort_keys=True, ensure_ascii=False) + "\n")
    with open(path + ".provenance", "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"name": split.name,
                             "provenance": split.provenance},
                            sort_keys=True) + "\n")


def read_split(path: str) -> DatasetSplit:
    """Read a split written by :func:`write_split`."""
    sidecar = path + ".provenance"
    if os.path.exists(sidecar):
        with open(sidecar, encoding="utf-8") as fh:
            meta = json.loads(fh.read())
        name, provenance = meta["name"], meta["provenance"]
    else:
        name = os.path.splitext(os.path.basename(path))[0]
        provenance = json.dumps({"source_files": [os.path.basename(path)],
                                 "note": "no sidecar present"})
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                examples.append(Example(
                    id=obj["id"], task=Task(obj["task"]), fields=obj["fields"],
                    label=obj["label"], nles=tuple(obj["nles"])))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from None
    return DatasetSplit(name, tuple(examples), provenance)
