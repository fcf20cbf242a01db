"""Recipe execution: grid search per stage, winner selection, manifests.

A run resolves each stage's symbolic dataset references against loaded
splits, trains one model per grid point from the previous stage's winning
checkpoint, evaluates the stage's selection criterion on held-out data,
and records everything in a manifest.  Manifests contain no wall-clock
data, so two runs with the same seed are byte-identical; timing goes to a
sidecar log.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import time
from typing import Mapping, Sequence

from ..corpus import DatasetSplit, Task
from ..formatting import (DatasetSpec, SpecEntry, SplitRef, build_union,
                          canonical_label, format_example, format_input,
                          labels_match, parse_output)
from ..metrics import perplexity
from ..recipes import (CriterionKind, Recipe, SelectionCriterion,
                       TrainingStage)
from .backend import ModelBackend
from .decode import DEFAULT_MAX_DECODE_LEN

log = logging.getLogger(__name__)

DEFAULT_BEAM_WIDTH = 5


class EngineError(Exception):
    pass


class FloorViolationError(EngineError):
    """No grid point cleared the criterion's accuracy floor."""


def mix_seed(*parts) -> int:
    """Derive an independent child seed from arbitrary labeled parts."""
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "big") % (2 ** 63)


@dataclasses.dataclass
class GridPointResult:
    lr: float
    epochs: int
    criterion_value: float
    accuracy: float | None
    checkpoint: bytes
    checkpoint_sha256: str

    def manifest_entry(self) -> dict:
        entry = {"lr": self.lr, "epochs": self.epochs,
                 "criterion_value": self.criterion_value,
                 "checkpoint_sha256": self.checkpoint_sha256}
        if self.accuracy is not None:
            entry["accuracy"] = self.accuracy
        return entry


class DataResolver:
    """Maps symbolic split references to loaded splits and eval sets.

    Expected keys: ``esnli/train``, ``esnli/dev``, ``snli/train``,
    ``child/train``, ``child/dev``, ``child/fewshot`` (only the ones a
    recipe actually references must be present).
    """

    def __init__(self, splits: Mapping[str, DatasetSplit], child: Task):
        self.splits = dict(splits)
        self.child = child
        self._cache: dict[str, object] = {}

    def _get(self, key: str) -> DatasetSplit:
        if key not in self.splits:
            raise EngineError(f"no split loaded for reference {key!r}")
        return self.splits[key]

    def resolve(self, spec: DatasetSpec) -> DatasetSpec:
        entries = []
        for entry in spec.entries:
            if isinstance(entry.split, SplitRef):
                entries.append(SpecEntry(self._get(entry.split.key),
                                         entry.with_explanations))
            else:
                entries.append(entry)
        return DatasetSpec(tuple(entries))

    def child_dev_labeled(self) -> tuple[list[str], list[str]]:
        if "labeled" not in self._cache:
            split = self._get("child/dev")
            self._cache["labeled"] = (
                [format_input(e, False) for e in split],
                [canonical_label(e) for e in split])
        return self._cache["labeled"]  # type: ignore[return-value]

    def child_dev_nle_pairs(self):
        if "child_nle" not in self._cache:
            split = self._get("child/dev")
            pairs = [format_example(e, True) for e in split if e.nles]
            if not pairs:
                raise EngineError(
                    "child dev split has no explanation-bearing examples")
            self._cache["child_nle"] = pairs
        return self._cache["child_nle"]

    def parent_dev_nle_pairs(self):
        if "parent_nle" not in self._cache:
            split = self._get("esnli/dev")
            pairs = [format_example(e, True) for e in split if e.nles]
            if not pairs:
                raise EngineError(
                    "parent dev split has no explanation-bearing examples")
            self._cache["parent_nle"] = pairs
        return self._cache["parent_nle"]


def _dev_accuracy(backend: ModelBackend, resolver: DataResolver,
                  beam_width: int, max_len: int) -> float:
    inputs, golds = resolver.child_dev_labeled()
    if not inputs:
        raise EngineError("child dev split is empty")
    correct = 0
    for input_text, gold in zip(inputs, golds):
        label, _ = parse_output(backend.generate(input_text, beam_width,
                                                 max_len))
        if labels_match(label, gold):
            correct += 1
    return correct / len(inputs)


def evaluate_criterion(backend: ModelBackend, criterion: SelectionCriterion,
                       resolver: DataResolver,
                       beam_width: int = DEFAULT_BEAM_WIDTH,
                       max_len: int = DEFAULT_MAX_DECODE_LEN
                       ) -> tuple[float, float | None]:
    """Returns (criterion value, dev accuracy if additionally required).

    Accuracy is the fraction in [0, 1]; perplexity is exp of the mean
    per-token negative log-likelihood over explanation-format targets.
    """
    if criterion.kind is CriterionKind.CHILD_DEV_ACCURACY:
        value = _dev_accuracy(backend, resolver, beam_width, max_len)
        return value, value
    if criterion.kind is CriterionKind.CHILD_DEV_NLE_PERPLEXITY:
        value = perplexity(backend.score(resolver.child_dev_nle_pairs()))
        accuracy = None
        if criterion.accuracy_floor is not None:
            accuracy = _dev_accuracy(backend, resolver, beam_width, max_len)
        return value, accuracy
    value = perplexity(backend.score(resolver.parent_dev_nle_pairs()))
    return value, None


def train_stage(backend: ModelBackend, stage: TrainingStage,
                init: bytes | None, seed: int, resolver: DataResolver,
                beam_width: int = DEFAULT_BEAM_WIDTH,
                max_len: int = DEFAULT_MAX_DECODE_LEN,
                stage_dir: str | None = None) -> list[GridPointResult]:
    """Train and evaluate every grid point of one stage.

    Every point starts from the same ``init`` checkpoint; the training
    union is built once with the stage seed, so points differ only in
    their hyperparameters.
    """
    if stage.grid is None or stage.criterion is None:
        raise EngineError(
            f"stage {stage.name!r} has no grid or criterion attached")
    train_pairs = build_union(resolver.resolve(stage.data), seed)
    results = []
    for lr in stage.grid.learning_rates:
        for epochs in stage.grid.epoch_counts:
            point_seed = mix_seed(seed, "point", lr, epochs)
            backend.initialize(init)
            try:
                backend.train(train_pairs, lr, epochs, stage.grid.batch_size,
                              point_seed)
            except Exception as exc:
                raise EngineError(
                    f"training failed at grid point lr={lr} "
                    f"epochs={epochs}: {exc}") from exc
            value, accuracy = evaluate_criterion(
                backend, stage.criterion, resolver, beam_width, max_len)
            checkpoint = backend.save()
            sha = hashlib.sha256(checkpoint).hexdigest()
            result = GridPointResult(lr=lr, epochs=epochs,
                                     criterion_value=value,
                                     accuracy=accuracy, checkpoint=checkpoint,
                                     checkpoint_sha256=sha)
            results.append(result)
            if stage_dir is not None:
                point_dir = os.path.join(
                    stage_dir, f"lr{lr:g}-ep{epochs}")
                os.makedirs(point_dir, exist_ok=True)
                with open(os.path.join(point_dir, "checkpoint.json"),
                          "wb") as fh:
                    fh.write(checkpoint)
                with open(os.path.join(point_dir, "metrics.json"), "w",
                          encoding="utf-8") as fh:
                    json.dump(result.manifest_entry(), fh, sort_keys=True,
                              indent=2)
            log.info("stage %s lr=%g epochs=%d -> %s=%.6g", stage.name, lr,
                     epochs, stage.criterion.kind.value, value)
    return results


def select_winner(results: Sequence[GridPointResult],
                  criterion: SelectionCriterion) -> GridPointResult:
    """Best point by criterion direction, subject to the accuracy floor.

    Ties break to the lowest learning rate, then the fewest epochs.
    """
    if not results:
        raise EngineError("no grid results to select from")
    eligible = list(results)
    if criterion.accuracy_floor is not None:
        eligible = [r for r in results
                    if r.accuracy is not None
                    and r.accuracy >= criterion.accuracy_floor]
        if not eligible:
            best = max((r.accuracy or 0.0) for r in results)
            raise FloorViolationError(
                f"no grid point reached dev accuracy "
                f"{criterion.accuracy_floor:.2f} (best {best:.3f})")
    sign = 1.0 if criterion.direction == "minimize" else -1.0
    return min(eligible,
               key=lambda r: (sign * r.criterion_value, r.lr, r.epochs))


def run_recipe(backend: ModelBackend, recipe: Recipe, seed: int,
               resolver: DataResolver, run_dir: str | None = None,
               beam_width: int = DEFAULT_BEAM_WIDTH,
               max_len: int = DEFAULT_MAX_DECODE_LEN
               ) -> tuple[bytes, dict]:
    """Run all stages in order, chaining stage winners.

    Returns the final winning checkpoint and the manifest.  On stage
    failure the partial manifest is persisted (when a run directory is
    given) before the error propagates.
    """
    manifest: dict = {"recipe": recipe.name.value,
                      "child": recipe.child.value,
                      "global_seed": seed, "stages": []}
    sidecar = None
    if run_dir is not None:
        os.makedirs(run_dir, exist_ok=True)
        sidecar = os.path.join(run_dir, "run.log")
    init: bytes | None = None
    final: bytes | None = None
    try:
        for index, stage in enumerate(recipe.stages):
            _log_timing(sidecar, f"stage {index} ({stage.name}) start")
            stage_seed = mix_seed(seed, "stage", index)
            stage_dir = (os.path.join(run_dir, f"stage{index:02d}")
                         if run_dir else None)
            results = train_stage(backend, stage, init, stage_seed, resolver,
                                  beam_width, max_len, stage_dir)
            assert stage.criterion is not None
            winner = select_winner(results, stage.criterion)
            manifest["stages"].append({
                "name": stage.name,
                "criterion": stage.criterion.kind.value,
                "seed": stage_seed,
                "points": [r.manifest_entry() for r in results],
                "winner": results.index(winner),
            })
            init = winner.checkpoint
            final = winner.checkpoint
            _log_timing(sidecar, f"stage {index} ({stage.name}) done, "
                                 f"winner lr={winner.lr:g} "
                                 f"epochs={winner.epochs}")
    except Exception:
        if run_dir is not None:
            manifest["incomplete_after_stage"] = len(manifest["stages"]) - 1
            _write_manifest(manifest, run_dir)
        raise
    assert final is not None
    backend.initialize(final)
    if run_dir is not None:
        _write_manifest(manifest, run_dir)
        with open(os.path.join(run_dir, "final_checkpoint.json"), "wb") as fh:
            fh.write(final)
    return final, manifest


def _write_manifest(manifest: dict, run_dir: str) -> None:
    with open(os.path.join(run_dir, "manifest.json"), "w",
              encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _log_timing(sidecar: str | None, message: str) -> None:
    log.info("%s", message)
    if sidecar is not None:
        with open(sidecar, "a", encoding="utf-8") as fh:
            fh.write(f"{time.strftime('%Y-%m-%dT%H:%M:%S')} {message}\n")


def beam_decode(backend: ModelBackend, inputs: Sequence[str],
                width: int = DEFAULT_BEAM_WIDTH,
                max_len: int = DEFAULT_MAX_DECODE_LEN) -> list[str]:
    """Decode each input to its best beam-searched output text."""
    if width < 1:
        raise EngineError(f"beam width must be >= 1, got {width}")
    return [backend.generate(text, width, max_len) for text in inputs]


def predict_records(backend: ModelBackend, split: DatasetSplit,
                    beam_width: int = DEFAULT_BEAM_WIDTH,
                    max_len: int = DEFAULT_MAX_DECODE_LEN,
                    with_explanation: bool = True) -> list[dict]:
    """Decode a split into prediction records with parsed labels and NLEs."""
    records = []
    for e in split:
        input_text = format_input(e, with_explanation)
        output = backend.generate(input_text, beam_width, max_len)
        label, nle = parse_output(output)
        records.append({"id": e.id, "input_text": input_text,
                        "output_text": output, "label": label, "nle": nle})
    return records
