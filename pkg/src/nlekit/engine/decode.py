"""Beam search over a stepwise language model.

Standard mechanics: at every step each live hypothesis is extended with
every vocabulary token, the best ``width`` candidates survive, and a
candidate ending in the end-of-sequence token retires into the completed
pool with that token's log-probability included.  A hypothesis still alive
at the content-length cap is finalized by appending end-of-sequence.  The
answer is the completed sequence with the highest cumulative
log-probability; exact ties break toward the lexicographically smaller
token tuple, so decoding is fully deterministic.

Width 1 degenerates to greedy decoding: the single surviving candidate at
each step is the argmax token, and retiring on end-of-sequence is exactly
greedy's stop rule.
"""

from __future__ import annotations

import dataclasses
from typing import Any, Sequence

from .backend import SteppableLM

DEFAULT_MAX_DECODE_LEN = 64


class DecodeError(Exception):
    pass


@dataclasses.dataclass(frozen=True)
class BeamResult:
    text: str
    token_ids: tuple[int, ...]
    logprob: float


@dataclasses.dataclass(frozen=True)
class _Hyp:
    logprob: float
    tokens: tuple[int, ...]
    state: Any


def beam_search(lm: SteppableLM, input_text: str, width: int,
                max_len: int = DEFAULT_MAX_DECODE_LEN) -> BeamResult:
    """Highest-scoring end-of-sequence-terminated output for one input."""
    if width < 1:
        raise DecodeError(f"beam width must be >= 1, got {width}")
    if max_len < 1:
        raise DecodeError(f"max length must be >= 1, got {max_len}")
    eos = lm.eos_id
    alive: list[_Hyp] = [_Hyp(0.0, (), lm.start(input_text))]
    completed: list[tuple[float, tuple[int, ...]]] = []

    for _ in range(max_len):
        candidates: list[tuple[float, tuple[int, ...], _Hyp, int]] = []
        for hyp in alive:
            logprobs = lm.step_logprobs(hyp.state)
            for token in range(lm.vocab_size):
                candidates.append((hyp.logprob + float(logprobs[token]),
                                   hyp.tokens + (token,), hyp, token))
        candidates.sort(key=lambda c: (-c[0], c[1]))
        alive = []
        for logprob, tokens, parent, token in candidates[:width]:
            if token == eos:
                completed.append((logprob, tokens[:-1]))
            else:
                alive.append(_Hyp(logprob, tokens,
                                  lm.advance(parent.state, token)))
        if not alive:
            break

    # content cap reached: close surviving hypotheses
    for hyp in alive:
        eos_lp = float(lm.step_logprobs(hyp.state)[eos])
        completed.append((hyp.logprob + eos_lp, hyp.tokens))

    logprob, tokens = min(completed, key=lambda c: (-c[0], c[1]))
    return BeamResult(text=lm.tokens_to_text(tokens), token_ids=tokens,
                      logprob=logprob)


def greedy_decode(lm: SteppableLM, input_text: str,
                  max_len: int = DEFAULT_MAX_DECODE_LEN) -> BeamResult:
    """Follow the argmax token until end-of-sequence or the length cap.

    Implemented independently of ``beam_search`` so the two can be checked
    against each other.
    """
    state = lm.start(input_text)
    tokens: list[int] = []
    logprob = 0.0
    for _ in range(max_len):
        logprobs = lm.step_logprobs(state)
        best = int(min(range(lm.vocab_size),
                       key=lambda t: (-float(logprobs[t]), t)))
        logprob += float(logprobs[best])
        if best == lm.eos_id:
            return BeamResult(text=lm.tokens_to_text(tokens),
                              token_ids=tuple(tokens), logprob=logprob)
        tokens.append(best)
        state = lm.advance(state, best)
    logprob += float(lm.step_logprobs(state)[lm.eos_id])
    return BeamResult(text=lm.tokens_to_text(tokens),
                      token_ids=tuple(tokens), logprob=logprob)
