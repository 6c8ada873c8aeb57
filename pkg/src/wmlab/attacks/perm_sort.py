"""Threat model 1: the attacker chooses the keys, the permutation is hidden.

With a fixed prompt the model's next-token distribution is frozen, so the
first token of each response is a deterministic function of the key used.
Sampling many uniform keys and sorting the (key, first token) pairs by key
therefore replays the hidden CDF left to right: the order in which distinct
tokens first appear is exactly the hidden permutation restricted to tokens
with positive mass.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from ..lm import ToyLM
from ..watermark import Permutation, select_token_batch


@dataclass(frozen=True)
class PairDataset:
    """(key, first-token) observations collected under one fixed prefix."""

    xis: np.ndarray
    tokens: np.ndarray
    prefix: tuple[int, ...] = ()

    def __len__(self) -> int:
        return int(self.xis.size)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["xi", "token"])
        for xi, tok in zip(self.xis.tolist(), self.tokens.tolist()):
            w.writerow([repr(xi), tok])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({
            "prefix": list(self.prefix),
            "pairs": [[xi, int(t)] for xi, t in
                      zip(self.xis.tolist(), self.tokens.tolist())],
        }, sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> "PairDataset":
        d = json.loads(s)
        pairs = d["pairs"]
        return cls(
            xis=np.array([p[0] for p in pairs], dtype=np.float64),
            tokens=np.array([p[1] for p in pairs], dtype=np.int64),
            prefix=tuple(d.get("prefix", ())),
        )


@dataclass(frozen=True)
class PartialPermutation:
    """Total order over the tokens observed so far; invents no positions.

    ``inconsistent`` is set when a token reappeared non-contiguously in the
    sorted key order, which cannot happen against a consistent oracle and
    signals that the observations did not share a single distribution.
    """

    ordered_tokens: tuple[int, ...]
    inconsistent: bool = False

    def __len__(self) -> int:
        return len(self.ordered_tokens)


def build_pair_dataset(model: ToyLM, perm: Permutation, prefix, N: int,
                       seed: int) -> PairDataset:
    """Query the watermarked first token N times with fresh uniform keys.

    The prefix is held fixed so every pair is drawn against the same
    distribution; keys come from a generator seeded with ``seed``.
    """
    if N < 1:
        raise ValueError(f"need at least one query, got N={N}")
    prefix = tuple(int(t) for t in prefix)
    dist = model.next_dist(prefix)
    xis = np.random.default_rng(seed).random(N)
    tokens = select_token_batch(dist, xis, perm)
    return PairDataset(xis=xis, tokens=np.asarray(tokens, dtype=np.int64),
                       prefix=prefix)


def recover_perm_by_sort(dataset: PairDataset) -> PartialPermutation:
    """Sort pairs by key and read off the first-appearance order of tokens.

    Consecutive repeats of the same token are collapsed (many keys fall in
    one token's CDF bracket). A token that reappears after a different token
    contradicts the fixed-distribution assumption; it is dropped and the
    result is flagged inconsistent rather than listing a token twice.
    """
    if len(dataset) == 0:
        raise ValueError("dataset must be non-empty")
    order = np.argsort(dataset.xis, kind="stable")
    ordered: list[int] = []
    seen: set[int] = set()
    inconsistent = False
    for tok in dataset.tokens[order].tolist():
        if ordered and tok == ordered[-1]:
            continue
        if tok in seen:
            inconsistent = True
            continue
        ordered.append(tok)
        seen.add(tok)
    return PartialPermutation(tuple(ordered), inconsistent=inconsistent)
