"""Shared builders for synthetic examples and splits."""

import json

import pytest

from nlekit.corpus import DatasetSplit, Example, Task


def esnli_example(i: int, label: str = "entailment",
                  nles: tuple = None) -> Example:
    if nles is None:
        nles = (f"explanation {i}",)
    return Example(id=f"esnli-{i}", task=Task.ESNLI,
                   fields={"premise": f"premise {i}",
                           "hypothesis": f"hypothesis {i}"},
                   label=label, nles=nles)


def wg_example(i: int, choose: int = 1, nles: tuple = ()) -> Example:
    options = (f"cat{i}", f"dog{i}")
    return Example(id=f"wg-{i}", task=Task.WINOGRANDE,
                   fields={"schema": f"The _ number {i} ran.",
                           "option1": options[0], "option2": options[1]},
                   label=options[choose - 1], nles=nles)


def comve_example(i: int, label: str = "1", nles: tuple = None) -> Example:
    if nles is None:
        nles = (f"reason {i}",)
    return Example(id=f"cv-{i}", task=Task.COMVE,
                   fields={"statement1": f"statement one {i}",
                           "statement2": f"statement two {i}"},
                   label=label, nles=nles)


def make_split(name: str, examples, task: str = "test") -> DatasetSplit:
    return DatasetSplit(name, tuple(examples),
                        json.dumps({"origin": task, "split": name}))


@pytest.fixture
def tiny_esnli_split():
    return make_split("train", [esnli_example(i) for i in range(6)])


@pytest.fixture
def tiny_wg_split():
    return make_split("train", [wg_example(i, choose=1 + i % 2)
                                for i in range(8)])
