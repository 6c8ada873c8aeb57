"""Threat model 2: the permutation is known, the key sequence is not.

Every watermarked token pins its position's key into the CDF bracket of the
observed token: the key must exceed the cumulative mass strictly below the
token's rank and cannot exceed the cumulative mass through it. Intersecting
brackets across outputs shrinks each slot to an interval that provably
contains the true key. When only a subset of the vocabulary has known ranks,
the bracket loosens to the mass of known tokens ranked below (lower bound)
and one minus the mass of known tokens ranked above (upper bound).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import AssumptionViolation, InvalidTokenError
from ..lm import ToyLM, cdf_under_perm
from ..watermark import Permutation, key_index, prompt_of, tokens_of


@dataclass
class KeyBounds:
    """Per-slot interval estimates [lb, ub] for an n-slot key sequence.

    Updates only tighten: lb is non-decreasing, ub non-increasing. A slot
    with no observations stays at (0, 1). An update that would cross
    (lb > ub) raises AssumptionViolation instead of clamping, because it proves the
    hypothesised (permutation, model, key length) cannot explain the data.
    """

    lb: np.ndarray
    ub: np.ndarray
    observations: np.ndarray

    @classmethod
    def fresh(cls, n: int) -> "KeyBounds":
        if n < 1:
            raise ValueError(f"key length must be >= 1, got {n}")
        return cls(lb=np.zeros(n), ub=np.ones(n),
                   observations=np.zeros(n, dtype=np.int64))

    @property
    def n(self) -> int:
        return int(self.lb.size)

    def update(self, slot: int, lo: float, hi: float,
               output_index: int | None = None,
               position: int | None = None) -> None:
        new_lb = max(float(self.lb[slot]), lo)
        new_ub = min(float(self.ub[slot]), hi)
        if new_lb > new_ub:
            raise AssumptionViolation(
                f"slot {slot}: interval [{new_lb}, {new_ub}] is empty after "
                f"observing output {output_index} position {position}; the "
                "assumed permutation, model, or key length is wrong",
                output_index=output_index, position=position, slot=slot)
        self.lb[slot] = new_lb
        self.ub[slot] = new_ub
        self.observations[slot] += 1

    def merge(self, other: "KeyBounds") -> "KeyBounds":
        """Combine two partial folds; max/min per slot, commutative."""
        if other.n != self.n:
            raise ValueError("cannot merge bounds of different key lengths")
        lb = np.maximum(self.lb, other.lb)
        ub = np.minimum(self.ub, other.ub)
        bad = np.nonzero(lb > ub)[0]
        if bad.size:
            raise AssumptionViolation(
                f"slot {int(bad[0])}: merged interval is empty",
                slot=int(bad[0]))
        return KeyBounds(lb=lb, ub=ub,
                         observations=self.observations + other.observations)

    def widths(self) -> np.ndarray:
        return self.ub - self.lb

    def contains(self, keys) -> bool:
        k = np.asarray(keys, dtype=np.float64)
        return bool(np.all((self.lb <= k) & (k <= self.ub)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["slot", "lb", "ub", "count"])
        for i in range(self.n):
            w.writerow([i, repr(float(self.lb[i])), repr(float(self.ub[i])),
                        int(self.observations[i])])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({
            "lb": self.lb.tolist(),
            "ub": self.ub.tolist(),
            "observations": self.observations.tolist(),
        }, sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> "KeyBounds":
        d = json.loads(s)
        return cls(lb=np.array(d["lb"], dtype=np.float64),
                   ub=np.array(d["ub"], dtype=np.float64),
                   observations=np.array(d["observations"], dtype=np.int64))


@dataclass(frozen=True)
class KnownSubsetOrder:
    """A subset of tokens whose true ranks under the permutation are known."""

    rank_of: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        ranks = list(self.rank_of.values())
        if len(set(ranks)) != len(ranks):
            raise ValueError("subset ranks must be distinct")

    @property
    def tokens(self) -> set[int]:
        return set(self.rank_of)

    def __len__(self) -> int:
        return len(self.rank_of)

    @classmethod
    def from_permutation(cls, perm: Permutation, tokens) -> "KnownSubsetOrder":
        return cls({int(t): perm.rank_of(int(t)) for t in tokens})


def _iter_positions(output, model: ToyLM):
    """Yield (position, token, distribution) walking one output.

    The model is conditioned on the output's own prompt (when known) plus the
    completion so far: the same contexts the generator saw.
    """
    toks = tokens_of(output)
    context = prompt_of(output)
    for s, tok in enumerate(toks, start=1):
        if not 0 <= tok < model.vocab_size:
            raise InvalidTokenError(
                f"token {tok} outside vocabulary of size {model.vocab_size}")
        yield s, tok, model.next_dist(context)
        context = context + (tok,)


def estimate_key_bounds(outputs, perm: Permutation, model: ToyLM,
                        n: int) -> KeyBounds:
    """Interval-estimate all n key slots from watermarked outputs.

    Args:
        outputs: watermarked sequences (Transcript prompts are honoured;
            bare TokenSeq/lists are treated as prompt-free).
        perm: the known (hypothesised) permutation.
        model: the generation model.
        n: the known (hypothesised) key sequence length.

    Returns:
        KeyBounds whose intervals contain the true keys whenever the
        hypothesis is correct; an exact guarantee, not a statistical one.
    """
    bounds = KeyBounds.fresh(n)
    for j, output in enumerate(outputs):
        for s, tok, dist in _iter_positions(output, model):
            cum = cdf_under_perm(dist, perm)
            k = perm.rank_of(tok)
            lo = float(cum[k - 1]) if k > 0 else 0.0
            hi = float(cum[k])
            bounds.update(key_index(s, n), lo, hi,
                          output_index=j, position=s)
    return bounds


def estimate_key_bounds_partial(outputs, subset: KnownSubsetOrder,
                                model: ToyLM, n: int) -> KeyBounds:
    """Interval-estimate key slots knowing ranks only on a token subset.

    Only observations of subset tokens trigger updates. Each bracket uses
    subset mass alone, so it contains the full-ordering bracket for the same
    observation; with the subset equal to the whole vocabulary the two
    estimators coincide.
    """
    bounds = KeyBounds.fresh(n)
    if len(subset) == 0:
        return bounds
    by_rank = sorted(subset.rank_of.items(), key=lambda kv: kv[1])
    sub_tokens = np.array([t for t, _ in by_rank], dtype=np.int64)
    sub_index = {t: i for i, (t, _) in enumerate(by_rank)}
    for j, output in enumerate(outputs):
        for s, tok, dist in _iter_positions(output, model):
            i = sub_index.get(tok)
            if i is None:
                continue
            # accumulate in rank order so S = V reproduces the full-ordering
            # lower bounds bit for bit
            cums = np.add.accumulate(dist[sub_tokens])
            lo = float(cums[i - 1]) if i > 0 else 0.0
            hi = 1.0 - float(cums[-1] - cums[i])
            bounds.update(key_index(s, n), lo, hi,
                          output_index=j, position=s)
    return bounds


def key_point_estimate(bounds: KeyBounds) -> np.ndarray:
    """Midpoint key estimate; unobserved slots default to 0.5."""
    est = (bounds.lb + bounds.ub) / 2.0
    est[bounds.observations == 0] = 0.5
    return est


def fit_key_length(outputs, perm: Permutation, model: ToyLM,
                   candidates) -> int:
    """Pick the key length that best explains the outputs.

    Tries each candidate n; ones that trigger an interval violation are
    impossible and discarded, the rest are scored by mean interval width.
    Ties break toward the smallest n. Plumbing for when the attacker does
    not know n a priori.
    """
    best_n = None
    best_score = None
    for n in sorted(set(int(c) for c in candidates)):
        if n < 1:
            raise ValueError(f"candidate key length must be >= 1, got {n}")
        try:
            bounds = estimate_key_bounds(outputs, perm, model, n)
        except AssumptionViolation:
            continue
        score = float(bounds.widths().mean())
        if best_score is None or score < best_score:
            best_n, best_score = n, score
    if best_n is None:
        raise AssumptionViolation(
            "no candidate key length is consistent with the outputs")
    return best_n
