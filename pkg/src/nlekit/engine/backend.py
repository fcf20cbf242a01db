"""Behavioral contracts for text-to-text model backends.

A backend owns tokenization, parameters, and optimization; the framework
only moves formatted pairs and opaque checkpoint bytes around.  Training
must be token-level cross-entropy on the target text under an
adaptive-moments optimizer with decoupled weight decay and a linear
learning-rate schedule warmed up over the first 10% of steps; no early
stopping, no layer freezing.  Everything must be deterministic given a
seed.
"""

from __future__ import annotations

from typing import Any, Protocol, Sequence, runtime_checkable

from ..formatting import FormattedPair


@runtime_checkable
class SteppableLM(Protocol):
    """Stepwise decoding interface consumed by the generic beam search."""

    @property
    def eos_id(self) -> int: ...

    @property
    def vocab_size(self) -> int: ...

    def start(self, input_text: str) -> Any:
        """Fresh decoder state for an input."""

    def step_logprobs(self, state: Any) -> Any:
        """Log-probabilities over the vocabulary for the next token,
        as an array of length ``vocab_size``."""

    def advance(self, state: Any, token_id: int) -> Any:
        """State after emitting ``token_id``.  Must not mutate ``state``."""

    def tokens_to_text(self, token_ids: Sequence[int]) -> str: ...


@runtime_checkable
class ModelBackend(Protocol):
    """Trainable text-to-text model."""

    def initialize(self, checkpoint: bytes | None) -> None:
        """Reset to the pretrained base (None) or to saved weights."""

    def train(self, pairs: Sequence[FormattedPair], lr: float, epochs: int,
              batch_size: int, seed: int) -> None: ...

    def score(self, pairs: Sequence[FormattedPair]) -> list[list[float]]:
        """Per-token negative log-likelihoods of each pair's target."""

    def generate(self, input_text: str, beam_width: int,
                 max_len: int = 64) -> str: ...

    def save(self) -> bytes: ...
