"""A tiny, fully deterministic text-to-text backend for the test suite.

The model is a log-linear conditional language model over whitespace
tokens: next-token logits are a linear map of the input's bag-of-words
plus an embedding of the previous target token plus a bias.  That is just
enough capacity to learn copy-style tasks and meaningful perplexities at
desk scale while keeping training (hand-rolled adaptive-moments optimizer
with decoupled weight decay and a warmup-then-linear-decay schedule) exact
and reproducible in pure numpy float64.

Checkpoints serialize to canonical JSON, so identical runs produce
byte-identical checkpoint blobs.
"""

from __future__ import annotations

import json
import math
from typing import Sequence

import numpy as np

from ..formatting import FormattedPair
from .decode import DEFAULT_MAX_DECODE_LEN, beam_search

UNK, EOS, BOS = "<unk>", "<eos>", "<bos>"
SPECIALS = (UNK, EOS, BOS)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
WEIGHT_DECAY = 0.01
WARMUP_FRACTION = 0.1


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


class _AdamW:
    """Adaptive-moments optimizer with decoupled weight decay."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray],
             grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        for key, p in params.items():
            g = grads[key]
            self.m[key] = ADAM_BETA1 * self.m[key] + (1 - ADAM_BETA1) * g
            self.v[key] = ADAM_BETA2 * self.v[key] + (1 - ADAM_BETA2) * g * g
            m_hat = self.m[key] / (1 - ADAM_BETA1 ** self.t)
            v_hat = self.v[key] / (1 - ADAM_BETA2 ** self.t)
            p -= lr * (m_hat / (np.sqrt(v_hat) + ADAM_EPS)
                       + WEIGHT_DECAY * p)


def _lr_at(step: int, total_steps: int, lr: float) -> float:
    """Linear warmup over the first 10% of steps, then linear decay to 0."""
    warmup = max(1, int(WARMUP_FRACTION * total_steps))
    if step <= warmup:
        return lr * step / warmup
    if total_steps == warmup:
        return lr
    return lr * (total_steps - step) / (total_steps - warmup)


class ToyBackend:
    """Deterministic log-linear seq2seq model over whitespace tokens."""

    def __init__(self) -> None:
        self.initialize(None)

    # ── lifecycle ────────────────────────────────────────────────────────────

    def initialize(self, checkpoint: bytes | None) -> None:
        if checkpoint is None:
            self.vocab: list[str] = list(SPECIALS)
            self.token_ids: dict[str, int] = {t: i for i, t
                                              in enumerate(self.vocab)}
            size = len(self.vocab)
            self.params: dict[str, np.ndarray] = {
                "w_in": np.zeros((size, size)),
                "w_prev": np.zeros((size, size)),
                "b": np.zeros(size),
            }
            return
        obj = json.loads(checkpoint.decode("utf-8"))
        self.vocab = list(obj["vocab"])
        self.token_ids = {t: i for i, t in enumerate(self.vocab)}
        self.params = {k: np.asarray(v, dtype=np.float64)
                       for k, v in obj["params"].items()}

    def save(self) -> bytes:
        obj = {
            "vocab": self.vocab,
            "params": {k: v.tolist() for k, v in self.params.items()},
        }
        return json.dumps(obj, sort_keys=True,
                          separators=(",", ":")).encode("utf-8")

    # ── vocabulary ───────────────────────────────────────────────────────────

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    @property
    def eos_id(self) -> int:
        return self.token_ids[EOS]

    def _extend_vocab(self, texts: Sequence[str]) -> None:
        new = [t for text in texts for t in text.split()
               if t not in self.token_ids]
        if not new:
            return
        for token in new:
            if token not in self.token_ids:
                self.token_ids[token] = len(self.vocab)
                self.vocab.append(token)
        grown = len(self.vocab)
        for key, p in self.params.items():
            pad = [(0, grown - n) for n in p.shape]
            self.params[key] = np.pad(p, pad)

    def _ids(self, text: str) -> list[int]:
        unk = self.token_ids[UNK]
        return [self.token_ids.get(t, unk) for t in text.split()]

    def _bag(self, input_text: str) -> np.ndarray:
        bag = np.zeros(len(self.vocab))
        for token_id in self._ids(input_text):
            bag[token_id] += 1.0
        return bag

    # ── training and scoring ─────────────────────────────────────────────────

    def _pair_logits(self, bag: np.ndarray,
                     target_ids: list[int]) -> tuple[np.ndarray, list[int]]:
        prevs = [self.token_ids[BOS]] + target_ids[:-1]
        base = self.params["w_in"] @ bag + self.params["b"]
        logits = base[None, :] + self.params["w_prev"][:, prevs].T
        return logits, prevs

    def train(self, pairs: Sequence[FormattedPair], lr: float, epochs: int,
              batch_size: int, seed: int) -> None:
        if not pairs:
            raise ValueError("no training pairs")
        self._extend_vocab([p.input_text for p in pairs]
                           + [p.target_text for p in pairs])
        eos = self.eos_id
        prepared = [(self._bag(p.input_text), self._ids(p.target_text) + [eos])
                    for p in pairs]
        n_batches = math.ceil(len(prepared) / batch_size)
        total_steps = epochs * n_batches
        optimizer = _AdamW(self.params)
        rng = np.random.default_rng(seed)
        step = 0
        for _ in range(epochs):
            order = rng.permutation(len(prepared))
            for start in range(0, len(prepared), batch_size):
                batch = [prepared[i] for i in order[start:start + batch_size]]
                grads = {k: np.zeros_like(v) for k, v in self.params.items()}
                n_tokens = 0
                for bag, target_ids in batch:
                    logits, prevs = self._pair_logits(bag, target_ids)
                    probs = np.exp(_log_softmax(logits))
                    probs[np.arange(len(target_ids)), target_ids] -= 1.0
                    grads["w_in"] += np.outer(probs.sum(axis=0), bag)
                    np.add.at(grads["w_prev"].T, prevs, probs)
                    grads["b"] += probs.sum(axis=0)
                    n_tokens += len(target_ids)
                for key in grads:
                    grads[key] /= n_tokens
                step += 1
                optimizer.step(self.params, grads,
                               _lr_at(step, total_steps, lr))

    def score(self, pairs: Sequence[FormattedPair]) -> list[list[float]]:
        eos = self.eos_id
        out = []
        for p in pairs:
            bag = self._bag(p.input_text)
            target_ids = self._ids(p.target_text) + [eos]
            logits, _ = self._pair_logits(bag, target_ids)
            logp = _log_softmax(logits)
            out.append([-float(logp[j, t]) for j, t in enumerate(target_ids)])
        return out

    # ── stepwise decoding interface ──────────────────────────────────────────

    def start(self, input_text: str) -> tuple[np.ndarray, int]:
        return self._bag(input_text), self.token_ids[BOS]

    def step_logprobs(self, state: tuple[np.ndarray, int]) -> np.ndarray:
        bag, prev = state
        logits = (self.params["w_in"] @ bag + self.params["b"]
                  + self.params["w_prev"][:, prev])
        return _log_softmax(logits)

    def advance(self, state: tuple[np.ndarray, int],
                token_id: int) -> tuple[np.ndarray, int]:
        return state[0], token_id

    def tokens_to_text(self, token_ids: Sequence[int]) -> str:
        return " ".join(self.vocab[t] for t in token_ids)

    def generate(self, input_text: str, beam_width: int,
                 max_len: int = DEFAULT_MAX_DECODE_LEN) -> str:
        return beam_search(self, input_text, beam_width, max_len).text
