"""Threat model 3: neither the keys nor the permutation are known.

A prompt that forces the model to choose uniformly between two tokens turns
the watermark itself into a comparison oracle: with both tokens at mass 0.5,
the selected token is the earlier of the pair in the hidden permutation when
the governing key is <= 0.5 and the later one otherwise. Feeding those
verdicts to merge sort recovers the whole vocabulary order, as the hidden
permutation or its exact mirror. The two are equally useful because flipping
the permutation and replacing every key xi by 1 - xi provably reproduces the
same watermarking behavior (and is the only other parameterization that
does).
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass

import numpy as np

from ..errors import InvalidPairError
from ..lm import ToyLM, forced_pair_dist
from ..watermark import Permutation, reverse_perm, select_token
from .key_bounds import AssumptionViolation, KeyBounds, estimate_key_bounds


class Verdict(str, enum.Enum):
    A_BEFORE_B = "a_before_b"
    B_BEFORE_A = "b_before_a"


IDENTICAL = "identical"
MIRRORED = "mirrored"
DISTINCT = "distinct"

#: tolerance for comparing secret keys in the equivalence classifier;
#: 1 - (1 - xi) already differs from xi in the last ulp
KEY_EQ_ATOL = 1e-12


class ComparisonOracle:
    """Watermarked provider answering forced two-token queries.

    The permutation and key are the provider's secret state; the attacker
    side only calls query_pair. Each query is a fresh single-token
    generation, so it is always governed by the first key slot
    (``key_slot_xi``). Deterministic: repeated queries agree.
    """

    def __init__(self, model: ToyLM, perm: Permutation, key_slot_xi: float):
        if not 0.0 <= key_slot_xi <= 1.0:
            raise ValueError("key value must lie in [0, 1]")
        self.model = model
        self.perm = perm
        self.key_slot_xi = float(key_slot_xi)
        self.query_count = 0

    def first_token(self, a: int, b: int) -> int:
        self.query_count += 1
        dist = forced_pair_dist(self.model.vocab_size, a, b)
        return select_token(dist, self.key_slot_xi, self.perm)


def query_pair(oracle: ComparisonOracle, a: int, b: int) -> Verdict:
    """One forced-pair query, interpreted as an ordering verdict.

    The model emitting ``b`` reads as "a before b"; anything else reads as
    "b before a". Swapping the arguments flips the verdict.
    """
    if a == b:
        raise InvalidPairError(f"tokens must be distinct, got a == b == {a}")
    out = oracle.first_token(a, b)
    return Verdict.A_BEFORE_B if out == b else Verdict.B_BEFORE_A


@dataclass(frozen=True)
class RecoveredOrdering:
    """Full vocabulary ordering recovered from pairwise queries.

    orientation stays "unknown" at recovery time: the attacker cannot tell
    the permutation from its mirror without side information; downstream key
    estimation works under either. ``inconsistent`` marks verdicts that
    violated the recovered order during verification (impossible with the
    deterministic oracle, possible with a noisy one).
    """

    ordered_tokens: tuple[int, ...]
    query_count: int
    orientation: str = "unknown"
    inconsistent: bool = False

    def to_json(self) -> str:
        return json.dumps({
            "ordered_tokens": list(self.ordered_tokens),
            "query_count": self.query_count,
            "orientation": self.orientation,
        }, sort_keys=True)


def _before(oracle: ComparisonOracle, a: int, b: int) -> bool:
    return query_pair(oracle, a, b) is Verdict.A_BEFORE_B


def _merge_sort(items: list[int], oracle: ComparisonOracle) -> list[int]:
    if len(items) <= 1:
        return items
    mid = len(items) // 2
    left = _merge_sort(items[:mid], oracle)
    right = _merge_sort(items[mid:], oracle)
    merged: list[int] = []
    i = j = 0
    while i < len(left) and j < len(right):
        if _before(oracle, left[i], right[j]):
            merged.append(left[i])
            i += 1
        else:
            merged.append(right[j])
            j += 1
    merged.extend(left[i:])
    merged.extend(right[j:])
    return merged


def recover_ordering_mergesort(vocab_size: int,
                               oracle: ComparisonOracle) -> RecoveredOrdering:
    """Sort the whole vocabulary with forced-pair queries.

    Returns the hidden permutation or its exact mirror (which one depends on
    whether the governing key exceeds 0.5). After sorting, every adjacent
    pair is re-queried as a consistency check; a mismatch there is retried
    best-of-three and, if it persists, the result is flagged inconsistent
    and kept as a best-effort order. Total queries stay within
    vocab_size * ceil(log2(vocab_size)).
    """
    if vocab_size < 1:
        raise ValueError(f"vocab_size must be >= 1, got {vocab_size}")
    if vocab_size == 1:
        return RecoveredOrdering((0,), query_count=0)
    ordered = _merge_sort(list(range(vocab_size)), oracle)
    inconsistent = False
    for u, v in zip(ordered, ordered[1:]):
        if _before(oracle, u, v):
            continue
        retry_votes = sum(_before(oracle, u, v) for _ in range(2))
        if retry_votes < 2:  # majority of the three queries contradicts the order
            inconsistent = True
    return RecoveredOrdering(tuple(ordered), query_count=oracle.query_count,
                             inconsistent=inconsistent)


def classify_orientation(ordering, true_perm: Permutation) -> str:
    """Label a recovered ordering against ground truth (lab-side only)."""
    toks = tuple(getattr(ordering, "ordered_tokens", ordering))
    if toks == tuple(true_perm.forward.tolist()):
        return "pi"
    if toks == tuple(true_perm.forward[::-1].tolist()):
        return "reverse_pi"
    return "unknown"


def resolve_orientation(ordering: RecoveredOrdering, outputs, model: ToyLM,
                        n: int) -> tuple[Permutation, KeyBounds]:
    """Adopt an orientation for a recovered ordering using watermarked data.

    Runs the key interval estimator under the as-sorted order and, if that
    produces an impossible interval, under the mirror. Both orientations
    succeed on genuine watermarked outputs (with mirrored key estimates), so
    ties break toward the as-sorted order; the choice only fixes which of the
    two equivalent parameterizations the attacker spoofs with.
    """
    as_sorted = Permutation(np.array(ordering.ordered_tokens, dtype=np.int64))
    try:
        return as_sorted, estimate_key_bounds(outputs, as_sorted, model, n)
    except AssumptionViolation:
        flipped = reverse_perm(as_sorted)
        return flipped, estimate_key_bounds(outputs, flipped, model, n)


@dataclass(frozen=True)
class EquivalenceReport:
    """Outcome of comparing two watermark parameterizations.

    verdict is decided by the exact law (identical parameters, or mirrored:
    reversed permutation with complemented key) and the sampling side
    independently corroborates it. ``confirmed`` is False when the empirical
    search failed to corroborate (e.g. no separating distribution found for a
    structurally distinct pair); that is reported, never asserted away.
    """

    verdict: str
    trials: int
    disagreements: int
    separator_found: bool
    separating_dist: tuple | None
    confirmed: bool


def _two_token_sweep(a: int, b: int, size: int, xi1, perm1, xi2, perm2,
                     grid: int) -> np.ndarray | None:
    """Scan distributions p(a)=x, p(b)=1-x for a point where selections differ.

    Grid points sit at bin midpoints, so a key value expressible on the grid
    itself is never probed exactly (ties at CDF boundaries are measure-zero
    and excluded everywhere in the lab).
    """
    for j in range(grid):
        x = (j + 0.5) / grid
        p = np.zeros(size)
        p[a] = x
        p[b] = 1.0 - x
        if select_token(p, xi1, perm1) != select_token(p, xi2, perm2):
            return p
    return None


def _betweenness_witness(perm1: Permutation, perm2: Permutation):
    """Find tokens (a, b, c) adjacent in perm1 whose middle element is not
    between the outer two under perm2; exists whenever the permutations are
    neither equal nor mutual mirrors."""
    f = perm1.forward.tolist()
    for i in range(1, len(f) - 1):
        a, b, c = f[i - 1], f[i], f[i + 1]
        ra, rb, rc = (perm2.rank_of(a), perm2.rank_of(b), perm2.rank_of(c))
        if not (min(ra, rc) < rb < max(ra, rc)):
            return a, b, c
    return None


def _three_token_sweep(abc, size: int, xi1, perm1, xi2, perm2,
                       grid: int) -> np.ndarray | None:
    a, b, c = abc
    for j in range(grid):
        x = (j + 0.5) / grid
        p = np.zeros(size)
        p[a] = x
        p[b] = 0.5 * (1.0 - x)
        p[c] = 0.5 * (1.0 - x)
        if select_token(p, xi1, perm1) != select_token(p, xi2, perm2):
            return p
    return None


def check_equivalence(xi1: float, perm1: Permutation, xi2: float,
                      perm2: Permutation, model: ToyLM, trials: int = 200,
                      seed: int = 0, grid: int = 2001) -> EquivalenceReport:
    """Decide whether two (key, permutation) pairs watermark identically.

    The exact law says they do iff they are equal or exact mirrors of each
    other. The verdict comes from that law; ``trials`` random distributions
    (plus, for distinct pairs, brute-force sweeps over two- and three-token
    distribution families) corroborate it empirically.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    size = len(perm1)
    if len(perm2) != size or model.vocab_size != size:
        raise ValueError("permutations and model must share one vocabulary")

    same_keys = abs(xi1 - xi2) <= KEY_EQ_ATOL
    mirror_keys = abs(xi1 - (1.0 - xi2)) <= KEY_EQ_ATOL
    if perm1 == perm2 and same_keys:
        verdict = IDENTICAL
    elif perm1 == reverse_perm(perm2) and mirror_keys:
        verdict = MIRRORED
    else:
        verdict = DISTINCT

    rng = np.random.default_rng(seed)
    disagreements = 0
    separating = None
    for _ in range(trials):
        p = rng.dirichlet(np.ones(size))
        if select_token(p, xi1, perm1) != select_token(p, xi2, perm2):
            disagreements += 1
            if separating is None:
                separating = p
    if verdict == DISTINCT and separating is None:
        pairs = {(perm1.token_at(0), perm1.token_at(1)),
                 (perm2.token_at(0), perm2.token_at(1))}
        for a, b in pairs:
            separating = _two_token_sweep(a, b, size, xi1, perm1, xi2, perm2,
                                          grid)
            if separating is not None:
                break
        if separating is None:
            witness = _betweenness_witness(perm1, perm2)
            if witness is not None:
                separating = _three_token_sweep(witness, size, xi1, perm1,
                                                xi2, perm2, grid)

    separator_found = separating is not None
    if verdict == DISTINCT:
        confirmed = separator_found
    else:
        confirmed = disagreements == 0
    return EquivalenceReport(
        verdict=verdict,
        trials=trials,
        disagreements=disagreements,
        separator_found=separator_found,
        separating_dist=None if separating is None else tuple(separating.tolist()),
        confirmed=confirmed,
    )
