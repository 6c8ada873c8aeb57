"""Spoofed generation: text that passes the detector without the real secrets.

A spoofer holds an estimated permutation and estimated keys, possibly built
from partial knowledge, and simply runs the watermarked generator with them.
With exact recovery the spoof is token-identical to the provider's output;
with partial recovery the alignment cost degrades gracefully with the
fraction of the permutation the attacker pinned down.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .attacks.key_bounds import KeyBounds, KnownSubsetOrder, key_point_estimate
from .attacks.perm_sort import PartialPermutation
from .errors import DomainError
from .lm import ToyLM
from .watermark import (
    Origin,
    Permutation,
    TokenSeq,
    generate,
    prompt_of,
    tokens_of,
)


@dataclass(frozen=True)
class SpoofConfig:
    """Everything the spoofer needs: a full permutation and a key estimate.

    known_fraction records how much of the permutation was actually known
    when the config was built (0.0 for none, making est_perm pure noise).
    """

    est_perm: Permutation
    est_keys: np.ndarray
    known_fraction: float
    fill_seed: int


def _fill_known_ranks(subset: KnownSubsetOrder, vocab_size: int,
                      rng: np.random.Generator) -> list[int]:
    # known tokens sit at their exact known ranks; unknown tokens are
    # shuffled into the remaining rank slots
    forward = [-1] * vocab_size
    for tok, rank in subset.rank_of.items():
        forward[rank] = tok
    unknown = [t for t in range(vocab_size) if t not in subset.tokens]
    unknown = [unknown[i] for i in rng.permutation(len(unknown))]
    it = iter(unknown)
    return [tok if tok != -1 else next(it) for tok in forward]


def _fill_relative_order(known: tuple[int, ...], vocab_size: int,
                         rng: np.random.Generator) -> list[int]:
    # only the relative order of the known tokens is fixed; each unknown
    # token is inserted at a uniformly random position
    forward = list(known)
    unknown = [t for t in range(vocab_size) if t not in set(known)]
    for i in rng.permutation(len(unknown)):
        forward.insert(int(rng.integers(0, len(forward) + 1)), unknown[i])
    return forward


def make_spoof_config(partial, bounds: KeyBounds, vocab_size: int,
                      fill_seed: int) -> SpoofConfig:
    """Complete partial knowledge into a usable spoofing configuration.

    ``partial`` is either a KnownSubsetOrder (absolute ranks known for a
    subset) or a PartialPermutation (relative order known for the observed
    tokens). Known information is preserved exactly; everything unknown is
    filled uniformly at random from ``fill_seed``. Keys are the interval
    midpoints, 0.5 for never-observed slots.
    """
    rng = np.random.default_rng(fill_seed)
    if isinstance(partial, KnownSubsetOrder):
        known_count = len(partial)
        forward = _fill_known_ranks(partial, vocab_size, rng)
    elif isinstance(partial, PartialPermutation):
        known_count = len(partial)
        forward = _fill_relative_order(partial.ordered_tokens, vocab_size, rng)
    else:
        raise TypeError(
            "partial must be a KnownSubsetOrder or PartialPermutation, "
            f"got {type(partial).__name__}")
    return SpoofConfig(
        est_perm=Permutation(np.array(forward, dtype=np.int64)),
        est_keys=key_point_estimate(bounds),
        known_fraction=known_count / vocab_size,
        fill_seed=fill_seed,
    )


def spoof_generate(model: ToyLM, prompt, m: int,
                   config: SpoofConfig) -> TokenSeq:
    """Generate ``m`` tokens with the estimated secrets; tagged as spoofed."""
    text = generate(model, prompt, m, config.est_keys, config.est_perm)
    return TokenSeq(text.tokens, Origin.SPOOFED)


def quality_proxy(text, model: ToyLM) -> float:
    """Mean negative log-likelihood of ``text`` under the model.

    Stands in for perplexity-style fluency scoring: lower is more typical of
    the model. Conditions on the prompt when ``text`` carries one, then on
    the running completion. A zero-probability token makes the proxy
    infinite, the flag that the sequence cannot come from this model.
    """
    toks = tokens_of(text)
    if not toks:
        raise DomainError("text must be non-empty")
    context = prompt_of(text)
    total = 0.0
    for tok in toks:
        p = float(model.next_dist(context)[tok])
        if p <= 0.0:
            return math.inf
        total -= math.log(p)
        context = context + (tok,)
    return total / len(toks)
