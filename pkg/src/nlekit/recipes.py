"""Training regimes compiled into staged, grid-searched plans.

Eight named regimes exist: four transfer methods (M1-M4), two
child-data-only baselines (CD_FINETUNE, CD_UNION), and two label-plus-
explanation multi-task baselines (WT5, WT5_FINETUNE).  Each compiles, for a
given child task, into an ordered list of stages.  A stage is a dataset
union to train on, a hyperparameter grid to search, and the criterion that
picks the winning grid point on held-out data.

Dataset components are symbolic references resolved by the engine at run
time; their nominal full-scale sizes decide which component dominates a
union and therefore which hyperparameter ranges apply.
"""

from __future__ import annotations

import dataclasses
import json
from enum import Enum
from typing import Callable

from .corpus import Task
from .formatting import DatasetSpec, SpecEntry, SplitRef

BATCH_SIZE = 16

# Nominal full-scale train sizes, used only to rank union components.
PARENT_TRAIN_SIZE = 549_367
CHILD_TRAIN_SIZES = {Task.WINOGRANDE: 39_130, Task.COMVE: 10_000}
FEW_SHOT_SIZE = 50

# Hyperparameter ranges.  Epochs grow as the training set shrinks; the
# parent-dominated ranges use the lr values shared by both child tasks.
PARENT_LRS = (3e-5, 1e-4, 3e-4)
CHILD_LRS = {
    Task.WINOGRANDE: (3e-5, 1e-4, 3e-4),
    Task.COMVE: (3e-5, 1e-4, 3e-4, 1e-3),
}
PARENT_EPOCHS = (1, 2, 3, 5)
CHILD_EPOCHS = {
    Task.WINOGRANDE: (1, 2, 3, 5, 7, 9, 11),
    Task.COMVE: (1, 2, 3, 5, 7, 10, 13),
}
FEW_SHOT_EPOCHS = (1, 2, 3, 5, 7, 10, 13, 17, 21, 26)

COMVE_UNION_ACCURACY_FLOOR = 0.75


class RecipeName(str, Enum):
    M1 = "M1"
    M2 = "M2"
    M3 = "M3"
    M4 = "M4"
    CD_FINETUNE = "CD_FINETUNE"
    CD_UNION = "CD_UNION"
    WT5 = "WT5"
    WT5_FINETUNE = "WT5_FINETUNE"


class CriterionKind(str, Enum):
    CHILD_DEV_NLE_PERPLEXITY = "child_dev_nle_perplexity"
    CHILD_DEV_ACCURACY = "child_dev_accuracy"
    PARENT_DEV_NLE_PERPLEXITY = "parent_dev_nle_perplexity"


class RecipeError(Exception):
    pass


@dataclasses.dataclass(frozen=True)
class HyperGrid:
    learning_rates: tuple[float, ...]
    epoch_counts: tuple[int, ...]
    batch_size: int = BATCH_SIZE

    def __post_init__(self) -> None:
        if not self.learning_rates or not self.epoch_counts:
            raise RecipeError("empty hyperparameter range")
        if self.batch_size != BATCH_SIZE:
            raise RecipeError(f"batch size is fixed at {BATCH_SIZE}")


@dataclasses.dataclass(frozen=True)
class SelectionCriterion:
    kind: CriterionKind
    accuracy_floor: float | None = None

    @property
    def direction(self) -> str:
        if self.kind is CriterionKind.CHILD_DEV_ACCURACY:
            return "maximize"
        return "minimize"

    def __post_init__(self) -> None:
        if (self.accuracy_floor is not None
                and self.kind is CriterionKind.CHILD_DEV_ACCURACY):
            raise RecipeError(
                "accuracy floor only applies to perplexity criteria")


@dataclasses.dataclass(frozen=True)
class TrainingStage:
    name: str
    data: DatasetSpec
    init_from: str  # "pretrained_base" | "previous_stage"
    grid: HyperGrid | None = None
    criterion: SelectionCriterion | None = None


@dataclasses.dataclass(frozen=True)
class Recipe:
    name: RecipeName
    child: Task
    stages: tuple[TrainingStage, ...]

    def __post_init__(self) -> None:
        for i, stage in enumerate(self.stages):
            expected = "pretrained_base" if i == 0 else "previous_stage"
            if stage.init_from != expected:
                raise RecipeError(
                    f"stage {i} must initialize from {expected}")


# ── compilation ──────────────────────────────────────────────────────────────

def _components(child: Task) -> dict[str, SpecEntry]:
    return {
        "esnli": SpecEntry(SplitRef("esnli/train", PARENT_TRAIN_SIZE), True),
        "snli": SpecEntry(SplitRef("snli/train", PARENT_TRAIN_SIZE), False),
        "child": SpecEntry(SplitRef("child/train", CHILD_TRAIN_SIZES[child]),
                           False),
        "fewshot": SpecEntry(SplitRef("child/fewshot", FEW_SHOT_SIZE), True),
    }


# Stage structure per regime, as lists of component-name lists.
_STRUCTURES: dict[RecipeName, list[list[str]]] = {
    RecipeName.CD_FINETUNE: [["child"], ["fewshot"]],
    RecipeName.CD_UNION: [["child", "fewshot"]],
    RecipeName.WT5_FINETUNE: [["esnli", "snli"], ["child"]],
    RecipeName.WT5: [["esnli", "snli", "child"]],
    RecipeName.M1: [["esnli", "child", "fewshot"]],
    RecipeName.M2: [["esnli", "child"], ["fewshot"]],
    RecipeName.M3: [["esnli"], ["child", "fewshot"]],
    RecipeName.M4: [["esnli"], ["child"], ["fewshot"]],
}


def compile(name: RecipeName, child: Task) -> Recipe:
    """Build the stage structure for a regime: data only, no grids yet."""
    if child not in (Task.WINOGRANDE, Task.COMVE):
        raise RecipeError(f"child must be a child task, got {child!r}")
    if name not in _STRUCTURES:
        raise RecipeError(f"unknown recipe {name!r}")
    parts = _components(child)
    stages = []
    for i, component_names in enumerate(_STRUCTURES[name]):
        spec = DatasetSpec(tuple(parts[c] for c in component_names))
        stages.append(TrainingStage(
            name="+".join(component_names), data=spec,
            init_from="pretrained_base" if i == 0 else "previous_stage"))
    return Recipe(name=name, child=child, stages=tuple(stages))


def _dominant_key(spec: DatasetSpec) -> str:
    best = max(spec.entries, key=lambda e: e.size)
    assert isinstance(best.split, SplitRef)
    return best.split.key


def attach_grids(recipe: Recipe) -> Recipe:
    """Attach lr/epoch ranges per stage.

    A union takes the ranges of its largest component.  A pure few-shot
    stage gets the stretched epoch range (training 50 examples needs many
    passes) with the child task's lr values; parent-dominated stages use
    the lr values common to both child tasks.
    """
    stages = []
    for stage in recipe.stages:
        dominant = _dominant_key(stage.data)
        if dominant == "child/fewshot":
            grid = HyperGrid(CHILD_LRS[recipe.child], FEW_SHOT_EPOCHS)
        elif dominant in ("esnli/train", "snli/train"):
            grid = HyperGrid(PARENT_LRS, PARENT_EPOCHS)
        else:
            grid = HyperGrid(CHILD_LRS[recipe.child],
                             CHILD_EPOCHS[recipe.child])
        stages.append(dataclasses.replace(stage, grid=grid))
    return dataclasses.replace(recipe, stages=tuple(stages))


def _spec_keys(spec: DatasetSpec) -> set[tuple[str, bool]]:
    keys = set()
    for entry in spec.entries:
        assert isinstance(entry.split, SplitRef)
        keys.add((entry.split.key, entry.with_explanations))
    return keys


def attach_criteria(recipe: Recipe) -> Recipe:
    """Attach the winner-selection criterion per stage.

    Parent-only stages are judged by parent dev explanation perplexity.
    Stages that see child explanations are judged by child dev explanation
    perplexity; stages that see only child labels by child dev accuracy.
    The two label-plus-explanation baselines are judged by child dev
    accuracy at their final stage regardless, and the child-union baseline
    on the commonsense task carries an accuracy floor so perplexity cannot
    select a model that lost the task.
    """
    stages = []
    for i, stage in enumerate(recipe.stages):
        keys = _spec_keys(stage.data)
        is_final = i == len(recipe.stages) - 1
        has_child_nles = ("child/fewshot", True) in keys
        has_child_labels = ("child/train", False) in keys
        if (recipe.name in (RecipeName.WT5, RecipeName.WT5_FINETUNE)
                and is_final):
            criterion = SelectionCriterion(CriterionKind.CHILD_DEV_ACCURACY)
        elif has_child_nles:
            floor = None
            if (recipe.name is RecipeName.CD_UNION
                    and recipe.child is Task.COMVE):
                floor = COMVE_UNION_ACCURACY_FLOOR
            criterion = SelectionCriterion(
                CriterionKind.CHILD_DEV_NLE_PERPLEXITY, accuracy_floor=floor)
        elif has_child_labels:
            criterion = SelectionCriterion(CriterionKind.CHILD_DEV_ACCURACY)
        else:
            criterion = SelectionCriterion(
                CriterionKind.PARENT_DEV_NLE_PERPLEXITY)
        stages.append(dataclasses.replace(stage, criterion=criterion))
    return dataclasses.replace(recipe, stages=tuple(stages))


def build_plan(name: RecipeName, child: Task) -> Recipe:
    """Compile a regime with grids and criteria attached."""
    return attach_criteria(attach_grids(compile(name, child)))


# ── plan serialization ───────────────────────────────────────────────────────

def recipe_to_dict(recipe: Recipe) -> dict:
    stages = []
    for stage in recipe.stages:
        components = []
        for entry in stage.data.entries:
            ref = entry.split
            assert isinstance(ref, SplitRef)
            components.append({
                "key": ref.key, "nominal_size": ref.nominal_size,
                "with_explanations": entry.with_explanations,
            })
        record: dict = {"name": stage.name, "init_from": stage.init_from,
                        "components": components}
        if stage.grid is not None:
            record["grid"] = {
                "learning_rates": list(stage.grid.learning_rates),
                "epoch_counts": list(stage.grid.epoch_counts),
                "batch_size": stage.grid.batch_size,
            }
        if stage.criterion is not None:
            record["criterion"] = {
                "kind": stage.criterion.kind.value,
                "direction": stage.criterion.direction,
                "accuracy_floor": stage.criterion.accuracy_floor,
            }
        stages.append(record)
    return {"recipe": recipe.name.value, "child": recipe.child.value,
            "stages": stages}


def recipe_from_dict(obj: dict) -> Recipe:
    """Rebuild a plan from its serialized form (user-authored plans allowed)."""
    stages = []
    for i, record in enumerate(obj["stages"]):
        entries = tuple(
            SpecEntry(SplitRef(c["key"], c["nominal_size"]),
                      c["with_explanations"])
            for c in record["components"])
        grid = criterion = None
        if "grid" in record:
            grid = HyperGrid(
                tuple(record["grid"]["learning_rates"]),
                tuple(record["grid"]["epoch_counts"]),
                record["grid"]["batch_size"])
        if "criterion" in record:
            criterion = SelectionCriterion(
                CriterionKind(record["criterion"]["kind"]),
                record["criterion"].get("accuracy_floor"))
        stages.append(TrainingStage(
            name=record["name"], data=DatasetSpec(entries),
            init_from=record["init_from"], grid=grid, criterion=criterion))
    return Recipe(RecipeName(obj["recipe"]), Task(obj["child"]),
                  tuple(stages))


def format_plan(recipe: Recipe) -> str:
    """Human-readable plan summary for the CLI."""
    lines = [f"recipe {recipe.name.value} / child {recipe.child.value}"]
    for i, stage in enumerate(recipe.stages, start=1):
        lines.append(f"  stage {i}: {stage.name} (init: {stage.init_from})")
        for entry in stage.data.entries:
            ref = entry.split
            assert isinstance(ref, SplitRef)
            tag = "with explanations" if entry.with_explanations else "labels only"
            lines.append(f"    data: {ref.key} ({ref.nominal_size}, {tag})")
        if stage.grid:
            lines.append(
                f"    grid: lr {list(stage.grid.learning_rates)} x epochs "
                f"{list(stage.grid.epoch_counts)}, batch {stage.grid.batch_size}")
        if stage.criterion:
            floor = (f", accuracy floor {stage.criterion.accuracy_floor}"
                     if stage.criterion.accuracy_floor is not None else "")
            lines.append(
                f"    select: {stage.criterion.direction} "
                f"{stage.criterion.kind.value}{floor}")
    return "\n".join(lines)
