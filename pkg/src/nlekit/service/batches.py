"""Batch assembly, quality gates, and the annotation coordinator.

Each evaluation item shows an annotator two explanations in randomized
order, one model-generated and one reference, without revealing which is
which.  Submissions are checked per batch of 10: at least 90% correct
labels, at least 90% positive ratings on reference explanations, at most
80% positive on model explanations.  Passing batches persist atomically;
failing ones re-queue for a different annotator.
"""

from __future__ import annotations

import dataclasses
import json
import random
import secrets
import threading
from typing import Mapping, Sequence

from ..analysis import (PROVENANCE_GOLD, PROVENANCE_MODEL, AnnotationRecord,
                        normalize_rating)
from ..corpus import DatasetSplit, Task
from ..formatting import canonical_label, labels_match
from .store import AppendLog

BATCH_ITEM_COUNT = 10
REQUIRED_ANNOTATIONS = 3
POSITIVE_RATINGS = ("yes", "weak_yes")

LABEL_GATE = "label_correctness"
GOLD_GATE = "gold_positive_minimum"
MODEL_GATE = "model_positive_ceiling"

LABEL_CORRECT_MIN_PCT = 90.0
GOLD_POSITIVE_MIN_PCT = 90.0
MODEL_POSITIVE_MAX_PCT = 80.0

ESNLI_OPTIONS = ("entailment", "neutral", "contradiction")
COMVE_OPTIONS = ("Statement 1", "Statement 2")


class ServiceError(Exception):
    """Validation or workflow failure; carries the HTTP status to report."""

    def __init__(self, message: str, status: int = 400):
        super().__init__(message)
        self.status = status


@dataclasses.dataclass(frozen=True)
class NleSlot:
    slot_id: str
    text: str


@dataclasses.dataclass(frozen=True)
class BatchItem:
    instance_id: str
    task: Task
    fields: dict
    label_options: tuple[str, ...]
    gold_label: str
    slots: tuple[NleSlot, NleSlot]
    # slot_id -> "model" | "gold"; never serialized toward annotators
    provenance: dict

    def payload(self) -> dict:
        return {"instance_id": self.instance_id,
                "task": self.task.value,
                "task_fields": dict(self.fields),
                "label_options": list(self.label_options),
                "nles": [{"slot_id": s.slot_id, "text": s.text}
                         for s in self.slots]}


@dataclasses.dataclass
class Batch:
    batch_id: str
    items: tuple[BatchItem, ...]
    short: bool = False
    status: str = "open"
    assigned_annotator: str | None = None
    accepted_by: set = dataclasses.field(default_factory=set)
    submitted_by: set = dataclasses.field(default_factory=set)
    rejections: list = dataclasses.field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.items:
            raise ServiceError(f"batch {self.batch_id} has no items")
        if len(self.items) != BATCH_ITEM_COUNT and not self.short:
            raise ServiceError(
                f"batch {self.batch_id} has {len(self.items)} items; only "
                f"the final short batch may differ from {BATCH_ITEM_COUNT}")

    def payload(self) -> dict:
        return {"batch_id": self.batch_id,
                "items": [item.payload() for item in self.items]}


@dataclasses.dataclass(frozen=True)
class GateResult:
    label_correct_pct: float
    gold_positive_pct: float
    model_positive_pct: float
    passed: bool
    failures: tuple[str, ...]

    def to_dict(self) -> dict:
        return {"label_correct_pct": self.label_correct_pct,
                "gold_positive_pct": self.gold_positive_pct,
                "model_positive_pct": self.model_positive_pct,
                "passed": self.passed,
                "failures": list(self.failures)}


def label_options_for(task: Task, fields: Mapping) -> tuple[str, ...]:
    if task is Task.WINOGRANDE:
        return (str(fields["option1"]), str(fields["option2"]))
    if task is Task.COMVE:
        return COMVE_OPTIONS
    return ESNLI_OPTIONS


def join_predictions(split: DatasetSplit,
                     records: Sequence[Mapping]) -> list[dict]:
    """Join prediction records onto their source examples by id."""
    by_id = {}
    for rec in records:
        rid = rec["id"]
        if rid in by_id:
            raise ServiceError(f"duplicate prediction for {rid!r}")
        by_id[rid] = rec
    joined = []
    for e in split:
        if e.id not in by_id:
            raise ServiceError(f"no prediction for example {e.id!r}")
        rec = by_id[e.id]
        joined.append({"id": e.id, "task": e.task, "fields": dict(e.fields),
                       "label": rec["label"], "nle": rec["nle"],
                       "gold_label": canonical_label(e),
                       "label_options": label_options_for(e.task, e.fields)})
    return joined


def assemble_batches(predictions: Sequence[Mapping],
                     gold_nles: Mapping[str, str],
                     seed: int) -> list[Batch]:
    """Build evaluation batches for the model-correct instances.

    Slot order is randomized per item from the seed; items fill batches
    of 10 in input order, with a final short batch allowed and flagged.
    """
    correct = [p for p in predictions
               if labels_match(str(p["label"]), str(p["gold_label"]))]
    missing = [p["id"] for p in correct if p["id"] not in gold_nles]
    if missing:
        raise ServiceError(
            "missing reference explanations for instances: "
            + ", ".join(repr(i) for i in missing))
    rng = random.Random(seed)
    items = []
    for p in correct:
        model_nle = str(p["nle"])
        gold_nle = str(gold_nles[p["id"]])
        if rng.random() < 0.5:
            order = ((model_nle, PROVENANCE_MODEL), (gold_nle,
                                                     PROVENANCE_GOLD))
        else:
            order = ((gold_nle, PROVENANCE_GOLD), (model_nle,
                                                   PROVENANCE_MODEL))
        slots = (NleSlot("a", order[0][0]), NleSlot("b", order[1][0]))
        provenance = {"a": order[0][1], "b": order[1][1]}
        task = p["task"] if isinstance(p["task"], Task) else Task(p["task"])
        options = tuple(p.get("label_options")
                        or label_options_for(task, p["fields"]))
        items.append(BatchItem(instance_id=str(p["id"]), task=task,
                               fields=dict(p["fields"]),
                               label_options=options,
                               gold_label=str(p["gold_label"]), slots=slots,
                               provenance=provenance))
    batches = []
    for start in range(0, len(items), BATCH_ITEM_COUNT):
        chunk = tuple(items[start:start + BATCH_ITEM_COUNT])
        batches.append(Batch(batch_id=f"batch-{len(batches):03d}",
                             items=chunk,
                             short=len(chunk) < BATCH_ITEM_COUNT))
    return batches


def batch_to_dict(batch: Batch) -> dict:
    """Operator-side serialization: includes provenance and gold labels.

    Runtime state (assignment, acceptances) is not included; it lives in
    the event store and is rebuilt by replay.
    """
    return {"batch_id": batch.batch_id, "short": batch.short,
            "items": [{"instance_id": i.instance_id, "task": i.task.value,
                       "fields": dict(i.fields),
                       "label_options": list(i.label_options),
                       "gold_label": i.gold_label,
                       "slots": [{"slot_id": s.slot_id, "text": s.text}
                                 for s in i.slots],
                       "provenance": dict(i.provenance)}
                      for i in batch.items]}


def batch_from_dict(obj: Mapping) -> Batch:
    items = tuple(
        BatchItem(instance_id=i["instance_id"], task=Task(i["task"]),
                  fields=dict(i["fields"]),
                  label_options=tuple(i["label_options"]),
                  gold_label=i["gold_label"],
                  slots=tuple(NleSlot(s["slot_id"], s["text"])
                              for s in i["slots"]),
                  provenance=dict(i["provenance"]))
        for i in obj["items"])
    return Batch(batch_id=obj["batch_id"], items=items,
                 short=bool(obj.get("short", False)))


def write_batches(batches: Sequence[Batch], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"batches": [batch_to_dict(b) for b in batches]}, fh,
                  sort_keys=True, indent=2)
        fh.write("\n")


def read_batches(path: str) -> list[Batch]:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    return [batch_from_dict(b) for b in obj["batches"]]


def check_gates(batch: Batch,
                records: Sequence[AnnotationRecord]) -> GateResult:
    """Evaluate the three per-batch quality gates (inclusive thresholds)."""
    if len(records) != len(batch.items):
        raise ServiceError(
            f"expected {len(batch.items)} records, got {len(records)}")
    by_instance = {item.instance_id: item for item in batch.items}
    label_correct = gold_positive = model_positive = 0
    for record in records:
        item = by_instance[record.instance_id]
        if labels_match(record.human_label, item.gold_label):
            label_correct += 1
        for slot_id, provenance in record.slot_provenance.items():
            positive = record.ratings[slot_id] in POSITIVE_RATINGS
            if provenance == PROVENANCE_GOLD and positive:
                gold_positive += 1
            elif provenance == PROVENANCE_MODEL and positive:
                model_positive += 1
    n = len(records)
    label_pct = 100.0 * label_correct / n
    gold_pct = 100.0 * gold_positive / n
    model_pct = 100.0 * model_positive / n
    failures = []
    if label_pct < LABEL_CORRECT_MIN_PCT:
        failures.append(LABEL_GATE)
    if gold_pct < GOLD_POSITIVE_MIN_PCT:
        failures.append(GOLD_GATE)
    if model_pct > MODEL_POSITIVE_MAX_PCT:
        failures.append(MODEL_GATE)
    return GateResult(label_correct_pct=label_pct, gold_positive_pct=gold_pct,
                      model_positive_pct=model_pct, passed=not failures,
                      failures=tuple(failures))


class AnnotationCoordinator:
    """Thread-safe assignment, gating, and persistence for one eval run.

    State mutates only after the corresponding event line is durably
    appended, so a restart replays the log to the identical state.
    """

    def __init__(self, batches: Sequence[Batch], store: AppendLog,
                 required_annotations: int = REQUIRED_ANNOTATIONS,
                 token_factory=None):
        self._lock = threading.Lock()
        self.store = store
        self.required = required_annotations
        self.batches = {b.batch_id: b for b in batches}
        self.order = [b.batch_id for b in batches]
        self.annotators: dict[str, str] = {}
        self._token_factory = token_factory or (lambda: secrets.token_hex(16))
        self._replay()

    def _replay(self) -> None:
        for event in self.store.read_all():
            kind = event.get("event")
            if kind == "register":
                self.annotators[event["annotator"]] = event.get("name", "")
            elif kind == "submission":
                self._apply_submission(
                    event["batch"], event["annotator"], event["passed"],
                    event["records"])

    def _apply_submission(self, batch_id: str, annotator: str, passed: bool,
                          record_dicts: Sequence[dict]) -> None:
        batch = self.batches.get(batch_id)
        if batch is None:
            raise ServiceError(
                f"store references unknown batch {batch_id!r}")
        batch.submitted_by.add(annotator)
        if batch.assigned_annotator == annotator:
            batch.assigned_annotator = None
        if passed:
            batch.accepted_by.add(annotator)
        else:
            batch.rejections.append({"annotator": annotator,
                                     "records": list(record_dicts)})
        if len(batch.accepted_by) >= self.required:
            batch.status = "accepted"
        elif batch.assigned_annotator is None:
            batch.status = "open"

    def register_annotator(self, name: str = "") -> str:
        with self._lock:
            token = self._token_factory()
            while token in self.annotators:
                token = self._token_factory()
            self.store.append({"event": "register", "annotator": token,
                               "name": name})
            self.annotators[token] = name
            return token

    def _assignable(self, batch: Batch, annotator: str) -> bool:
        return (batch.status == "open"
                and len(batch.accepted_by) < self.required
                and annotator not in batch.submitted_by)

    def next_batch(self, annotator: str) -> Batch | None:
        with self._lock:
            if annotator not in self.annotators:
                raise ServiceError(f"unknown annotator token {annotator!r}",
                                   status=403)
            for batch_id in self.order:
                batch = self.batches[batch_id]
                if (batch.status == "assigned"
                        and batch.assigned_annotator == annotator):
                    return batch
            for batch_id in self.order:
                batch = self.batches[batch_id]
                if self._assignable(batch, annotator):
                    batch.status = "assigned"
                    batch.assigned_annotator = annotator
                    return batch
            return None

    def release(self, annotator: str) -> None:
        """Drop an annotator's current assignment back to the pool."""
        with self._lock:
            for batch in self.batches.values():
                if (batch.status == "assigned"
                        and batch.assigned_annotator == annotator):
                    batch.status = "open"
                    batch.assigned_annotator = None

    def _build_records(self, batch: Batch, annotator: str,
                       wire_records: Sequence[Mapping]
                       ) -> list[AnnotationRecord]:
        by_instance = {item.instance_id: item for item in batch.items}
        seen = set()
        records = []
        for wire in wire_records:
            instance_id = str(wire.get("instance_id", ""))
            if instance_id not in by_instance:
                raise ServiceError(
                    f"record for unknown instance {instance_id!r}")
            if instance_id in seen:
                raise ServiceError(
                    f"duplicate record for instance {instance_id!r}")
            seen.add(instance_id)
            item = by_instance[instance_id]
            ratings = wire.get("ratings") or {}
            shortcomings = wire.get("shortcomings") or {}
            if set(ratings) != set(item.provenance):
                raise ServiceError(
                    f"instance {instance_id!r}: ratings must cover slots "
                    f"{sorted(item.provenance)}")
            record = AnnotationRecord(
                instance_id=instance_id, annotator_id=annotator,
                human_label=str(wire.get("label", "")),
                ratings={s: normalize_rating(r)
                         for s, r in ratings.items()},
                shortcomings={s: tuple(v)
                              for s, v in shortcomings.items()},
                slot_provenance=dict(item.provenance))
            record.validate()
            records.append(record)
        if len(records) != len(batch.items):
            raise ServiceError(
                f"expected one record per item "
                f"({len(batch.items)}), got {len(records)}")
        return records

    def submit(self, batch_id: str, annotator_id: str,
               records: Sequence[Mapping]) -> GateResult:
        with self._lock:
            batch = self.batches.get(batch_id)
            if batch is None:
                raise ServiceError(f"unknown batch {batch_id!r}", status=404)
            if annotator_id not in self.annotators:
                raise ServiceError(
                    f"unknown annotator token {annotator_id!r}", status=403)
            if annotator_id in batch.submitted_by:
                raise ServiceError(
                    f"annotator already submitted batch {batch_id!r}",
                    status=409)
            if (batch.status != "assigned"
                    or batch.assigned_annotator != annotator_id):
                raise ServiceError(
                    f"batch {batch_id!r} is not assigned to this annotator",
                    status=409)
            full_records = self._build_records(batch, annotator_id, records)
            gates = check_gates(batch, full_records)
            self.store.append({
                "event": "submission", "batch": batch_id,
                "annotator": annotator_id, "passed": gates.passed,
                "gates": gates.to_dict(),
                "records": [r.to_dict() for r in full_records]})
            self._apply_submission(batch_id, annotator_id, gates.passed,
                                   [r.to_dict() for r in full_records])
            return gates

    def accepted_records(self) -> list[AnnotationRecord]:
        records = []
        for event in self.store.read_all():
            if event.get("event") == "submission" and event["passed"]:
                records.extend(AnnotationRecord.from_dict(r)
                               for r in event["records"])
        return records

    def progress(self) -> dict:
        with self._lock:
            instances = {}
            for batch in self.batches.values():
                for item in batch.items:
                    instances[item.instance_id] = len(batch.accepted_by)
            return {
                "required_annotations": self.required,
                "instances": instances,
                "batches": {
                    b.batch_id: {"status": b.status,
                                 "accepted": len(b.accepted_by),
                                 "short": b.short}
                    for b in self.batches.values()},
                "done": all(len(b.accepted_by) >= self.required
                            for b in self.batches.values()),
            }


def _accepted_record_dicts(store: AppendLog) -> list[dict]:
    records = []
    for event in store.read_all():
        if event.get("event") == "submission" and event["passed"]:
            records.extend(event["records"])
    return records


def export(store: AppendLog) -> str:
    """Line-delimited snapshot of accepted records, provenance included.

    Serialization is canonical, so repeated exports of an unchanged
    store are byte-identical.
    """
    lines = [json.dumps(r, sort_keys=True, separators=(",", ":"))
             for r in _accepted_record_dicts(store)]
    return "".join(line + "\n" for line in lines)


@dataclasses.dataclass(frozen=True)
class AnnotatorFlag:
    annotator_id: str
    annotation_count: int
    sample: tuple[AnnotationRecord, ...]
    shortcoming_threshold: int

    def needs_reannotation(self, wrong_count: int) -> bool:
        return wrong_count > self.shortcoming_threshold


def flag_annotators(store: AppendLog, volume_threshold: int,
                    sample_size: int = 10, shortcoming_threshold: int = 5,
                    seed: int = 0) -> list[AnnotatorFlag]:
    """Queue high-volume annotators for human review of their samples.

    Flags every annotator with strictly more accepted annotations than
    the threshold and attaches a seeded random sample for the reviewer;
    the wrong-shortcoming judgment itself stays human.
    """
    records = [AnnotationRecord.from_dict(r)
               for r in _accepted_record_dicts(store)]
    by_annotator: dict[str, list[AnnotationRecord]] = {}
    for record in records:
        by_annotator.setdefault(record.annotator_id, []).append(record)
    rng = random.Random(seed)
    flags = []
    for annotator_id in sorted(by_annotator):
        mine = by_annotator[annotator_id]
        if len(mine) <= volume_threshold:
            continue
        sample = tuple(rng.sample(mine, min(sample_size, len(mine))))
        flags.append(AnnotatorFlag(annotator_id=annotator_id,
                                   annotation_count=len(mine), sample=sample,
                                   shortcoming_threshold=(
                                       shortcoming_threshold)))
    return flags


def mark_for_reannotation(store: AppendLog, annotator_id: str,
                          wrong_count: int,
                          shortcoming_threshold: int = 5) -> tuple[str, ...]:
    """Instance ids needing fresh annotation after a failed human review.

    Returns the flagged annotator's instances when the reviewer counted
    more wrong shortcoming selections than the threshold, else nothing.
    """
    if wrong_count <= shortcoming_threshold:
        return ()
    instance_ids = sorted({r["instance_id"]
                           for r in _accepted_record_dicts(store)
                           if r["annotator_id"] == annotator_id})
    return tuple(instance_ids)
