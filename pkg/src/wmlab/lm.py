"""Deterministic toy autoregressive language model and distribution arithmetic.

The model is a stand-in for a real LM in every algorithm here: it maps a
context to a next-token distribution, nothing more. Determinism is the whole
point: identical (seed, temperature, context) produce bit-identical
probabilities on every platform, so watermark generation, detection and the
attacks can all be replayed exactly.

Construction of the next-token distribution, documented so golden values can
be re-derived by hand (see wmlab.hashing for mix64):

    window   = last `context_window` tokens of the prefix (all of it if
               shorter; empty when context_window == 0)
    state    = mix64(seed mod 2^64)
    state    = mix64(state XOR (token + 1))        for each window token
    raw[k]   = mix64(state XOR ((k + 1) * GOLDEN mod 2^64))   k in [0, V)
    logit[k] = raw[k] / 2^64                        in [0, 1)
    p        = softmax(logit / temperature)

softmax subtracts the max before exponentiating, sums the exponentials with
math.fsum and divides each term by that total, in index order. All arithmetic
is 64-bit IEEE floating point.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import (
    DimensionError,
    InvalidDistError,
    InvalidPairError,
    InvalidTokenError,
)
from .hashing import GOLDEN, MASK64, mix64

#: absolute tolerance for probability-vector normalization checks
DIST_ATOL = 1e-9


def as_dist(probs) -> np.ndarray:
    """Validate and return a probability vector as a read-only float64 array.

    Entries must be non-negative and sum to 1 within ``DIST_ATOL``. Zero
    entries are allowed (two-token forcing distributions rely on them).
    """
    arr = np.ascontiguousarray(probs, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidDistError("probability vector must be 1-D and non-empty")
    if np.any(arr < 0.0):
        raise InvalidDistError("probability vector has a negative entry")
    total = float(math.fsum(arr.tolist()))
    if abs(total - 1.0) > DIST_ATOL:
        raise InvalidDistError(f"probabilities sum to {total!r}, not 1")
    out = arr.copy()
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class ToyLM:
    """Seeded hash-based language model over integer tokens.

    next_dist is a pure function of (seed, temperature, and the last
    ``context_window`` tokens of the prefix); instances are immutable and safe
    to share across threads.
    """

    vocab_size: int
    seed: int
    temperature: float = 1.0
    context_window: int = 3

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")
        if self.context_window < 0:
            raise ValueError("context_window must be >= 0")

    def next_dist(self, prefix=()) -> np.ndarray:
        return next_dist(self, prefix)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "seed": self.seed,
            "temperature": self.temperature,
            "context_window": self.context_window,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ToyLM":
        return cls(
            vocab_size=int(d["vocab_size"]),
            seed=int(d["seed"]),
            temperature=float(d.get("temperature", 1.0)),
            context_window=int(d.get("context_window", 3)),
        )

    @classmethod
    def from_json(cls, s: str) -> "ToyLM":
        return cls.from_dict(json.loads(s))


@lru_cache(maxsize=1 << 16)
def _window_dist(vocab_size: int, seed: int, temperature: float,
                 window: tuple) -> np.ndarray:
    state = mix64(seed & MASK64)
    for tok in window:
        state = mix64(state ^ (tok + 1))
    inv = 2.0 ** -64
    z = [mix64(state ^ (((k + 1) * GOLDEN) & MASK64)) * inv / temperature
         for k in range(vocab_size)]
    zmax = max(z)
    exps = [math.exp(v - zmax) for v in z]
    total = math.fsum(exps)
    out = np.array([e / total for e in exps], dtype=np.float64)
    out.flags.writeable = False
    return out


def next_dist(model: ToyLM, prefix=()) -> np.ndarray:
    """Next-token distribution after ``prefix``; deterministic in (model, prefix).

    Raises InvalidTokenError if any prefix token is outside the vocabulary.
    """
    toks = tuple(int(t) for t in prefix)
    for t in toks:
        if not 0 <= t < model.vocab_size:
            raise InvalidTokenError(
                f"token {t} outside vocabulary of size {model.vocab_size}")
    window = toks[-model.context_window:] if model.context_window > 0 else ()
    return _window_dist(model.vocab_size, model.seed, model.temperature, window)


def forced_pair_dist(vocab_size: int, a: int, b: int) -> np.ndarray:
    """Distribution putting probability 0.5 on each of two distinct tokens.

    Models a prompt that forces the LM to choose uniformly between ``a`` and
    ``b``; every other token gets exactly zero mass.
    """
    if a == b:
        raise InvalidPairError(f"tokens must be distinct, got a == b == {a}")
    for t in (a, b):
        if not 0 <= t < vocab_size:
            raise InvalidTokenError(
                f"token {t} outside vocabulary of size {vocab_size}")
    out = np.zeros(vocab_size, dtype=np.float64)
    out[a] = 0.5
    out[b] = 0.5
    out.flags.writeable = False
    return out


def cdf_under_perm(dist, perm) -> np.ndarray:
    """Cumulative distribution of ``dist`` in the token order given by ``perm``.

    cum[k] accumulates the probability of the tokens at ranks 0..k, summed
    left to right in one pass (cum[k] = cum[k-1] + dist[perm(k)]), so the
    result is reproducible bit-for-bit by a plain running sum.
    """
    forward = np.asarray(getattr(perm, "forward", perm))
    d = np.asarray(dist, dtype=np.float64)
    if d.shape != forward.shape:
        raise DimensionError(
            f"distribution of size {d.size} vs permutation of size {forward.size}")
    return np.add.accumulate(d[forward])
