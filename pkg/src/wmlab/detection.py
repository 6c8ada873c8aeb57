"""Watermark detection: alignment cost plus a Monte-Carlo permutation test.

The test statistic sums, over token positions, the absolute gap between the
cumulative probability of the observed token (under the secret permutation,
conditioned on the candidate text's own running prefix) and the key value for
that position's slot. Genuinely watermarked text keeps each gap below the
token's own probability; unrelated key sequences land anywhere in the CDF, so
comparing against costs under freshly drawn uniform keys yields a p-value.

The detector sees only the candidate tokens, never the prompt that produced
them, and recomputes the model distribution at every position.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidTokenError
from .lm import ToyLM, cdf_under_perm
from .watermark import Permutation, as_keys, key_index, tokens_of


@dataclass(frozen=True)
class DetectionResult:
    """Outcome of a permutation test.

    p_value is (1 + c)/(T + 1) where c counts null resamples whose cost does
    not beat the observed cost, so it can never drop below 1/(T + 1).
    """

    alignment_cost: float
    p_value: float
    resamples: int
    null_costs_summary: dict

    def to_dict(self) -> dict:
        return {
            "alignment_cost": self.alignment_cost,
            "p_value": self.p_value,
            "resamples": self.resamples,
            "null_costs_summary": self.null_costs_summary,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _cost_profile(tokens: tuple[int, ...], perm: Permutation,
                  model: ToyLM) -> np.ndarray:
    """Cumulative probability of each observed token under perm's ordering.

    Entry t is C_{k_t}: the CDF value at the observed token's rank, with the
    model conditioned on tokens[:t]. This is the only model-dependent part of
    the statistic; the key enters separately, so resamples can reuse it.
    """
    if len(tokens) == 0:
        raise InvalidTokenError("candidate text must be non-empty")
    for t in tokens:
        if not 0 <= t < model.vocab_size:
            raise InvalidTokenError(
                f"token {t} outside vocabulary of size {model.vocab_size}")
    out = np.empty(len(tokens), dtype=np.float64)
    for t, tok in enumerate(tokens):
        cum = cdf_under_perm(model.next_dist(tokens[:t]), perm)
        out[t] = cum[perm.rank_of(tok)]
    return out


def _cost_against(profile: np.ndarray, slots: np.ndarray, keys) -> float:
    return float(np.abs(profile - np.asarray(keys)[slots]).sum())


def alignment_cost(text, key, perm: Permutation, model: ToyLM) -> float:
    """Total alignment cost of ``text`` against a key sequence.

    Sum over positions t of |C_{k_t} - key[slot(t)]|; lies in [0, len(text)].
    Depends only on the tokens, not on any origin tag or prompt.
    """
    tokens = tokens_of(text)
    keys = as_keys(key)
    profile = _cost_profile(tokens, perm, model)
    slots = np.array([key_index(t, keys.size)
                      for t in range(1, len(tokens) + 1)])
    return _cost_against(profile, slots, keys)


def null_resample(seed: int, index: int, n: int) -> np.ndarray:
    """Uniform key resample for the permutation test.

    Stream ``index`` is a counter-based Philox generator keyed by
    (seed, index), so resamples are reproducible individually and the loop
    can be evaluated in any order or in parallel.
    """
    bg = np.random.Philox(key=np.array([seed & (2**64 - 1), index],
                                       dtype=np.uint64))
    return np.random.Generator(bg).random(n)


def permutation_test(text, key, perm: Permutation, model: ToyLM,
                     T: int = 999, seed: int = 0) -> DetectionResult:
    """Monte-Carlo permutation test for the watermark.

    Args:
        text: candidate token sequence.
        key: the detector's secret key sequence (length n).
        perm: the detector's secret permutation.
        model: language model used to recompute per-position distributions.
        T: number of uniform key resamples (>= 1).
        seed: seed for the resample streams; fixed seed, fixed result.

    Returns:
        DetectionResult with the observed cost and p = (1 + c)/(T + 1), where
        c counts resamples i with observed cost >= resample cost (ties count
        toward c, making the p-value conservative).
    """
    if T < 1:
        raise ValueError(f"resample count must be >= 1, got {T}")
    tokens = tokens_of(text)
    keys = as_keys(key)
    n = keys.size
    profile = _cost_profile(tokens, perm, model)
    slots = np.array([key_index(t, n) for t in range(1, len(tokens) + 1)])
    observed = _cost_against(profile, slots, keys)
    null_costs = np.empty(T, dtype=np.float64)
    for i in range(T):
        null_costs[i] = _cost_against(profile, slots, null_resample(seed, i, n))
    c = int(np.count_nonzero(observed >= null_costs))
    p_value = (1 + c) / (T + 1)
    summary = {
        "min": float(null_costs.min()),
        "median": float(np.median(null_costs)),
        "max": float(null_costs.max()),
    }
    return DetectionResult(alignment_cost=observed, p_value=p_value,
                           resamples=T, null_costs_summary=summary)
