"""Recipe execution: grid-searched staged training over a pluggable backend."""

from .backend import ModelBackend, SteppableLM
from .decode import BeamResult, DecodeError, beam_search, greedy_decode
from .runner import (DataResolver, EngineError, FloorViolationError,
                     GridPointResult, beam_decode, evaluate_criterion,
                     mix_seed, predict_records, run_recipe, select_winner,
                     train_stage)
from .toy import ToyBackend

__all__ = [
    "ModelBackend", "SteppableLM", "BeamResult", "DecodeError", "beam_search",
    "greedy_decode", "DataResolver", "EngineError", "FloorViolationError",
    "GridPointResult", "beam_decode", "evaluate_criterion", "mix_seed",
    "predict_records", "run_recipe", "select_winner", "train_stage",
    "ToyBackend",
]
