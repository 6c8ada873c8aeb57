"""Secret-key/permutation data model and the watermarked generator.

Generation embeds the watermark by inverse transform sampling: the vocabulary
is ordered by a secret permutation, the next-token distribution is accumulated
into a CDF along that order, and the emitted token is the one at the first
rank whose cumulative mass reaches the current secret key. Keys come from a
fixed sequence of n uniforms cycled over token positions, so the text stays
correlated with the key sequence while each token is still an exact sample
from the model's distribution (the key being uniform).
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .lm import ToyLM, cdf_under_perm


class Origin(str, enum.Enum):
    """How a token sequence was produced."""

    WATERMARKED = "watermarked"
    PLAIN = "plain"
    SPOOFED = "spoofed"


class Permutation:
    """Bijection between vocabulary ranks and token ids, with cached inverse.

    ``forward[r]`` is the token at rank r (0-based); ``inverse[t]`` is the
    rank of token t. Instances are immutable.
    """

    __slots__ = ("forward", "inverse")

    def __init__(self, forward):
        f = np.ascontiguousarray(forward, dtype=np.int64)
        if f.ndim != 1 or f.size == 0:
            raise ValueError("permutation must be a non-empty 1-D sequence")
        inv = np.full(f.size, -1, dtype=np.int64)
        for rank, tok in enumerate(f.tolist()):
            if not 0 <= tok < f.size or inv[tok] != -1:
                raise ValueError("forward map is not a bijection on [0, size)")
            inv[tok] = rank
        f = f.copy()
        f.flags.writeable = False
        inv.flags.writeable = False
        object.__setattr__(self, "forward", f)
        object.__setattr__(self, "inverse", inv)

    def __setattr__(self, name, value):
        raise AttributeError("Permutation is immutable")

    def __len__(self) -> int:
        return int(self.forward.size)

    def __eq__(self, other) -> bool:
        return isinstance(other, Permutation) and np.array_equal(
            self.forward, other.forward)

    def __hash__(self):
        return hash(self.forward.tobytes())

    def __repr__(self):
        return f"Permutation({self.forward.tolist()})"

    def rank_of(self, token: int) -> int:
        return int(self.inverse[token])

    def token_at(self, rank: int) -> int:
        return int(self.forward[rank])

    @classmethod
    def identity(cls, size: int) -> "Permutation":
        return cls(np.arange(size, dtype=np.int64))

    @classmethod
    def random(cls, size: int, rng: np.random.Generator) -> "Permutation":
        return cls(rng.permutation(size))

    def to_json(self) -> str:
        return json.dumps(self.forward.tolist())

    @classmethod
    def from_json(cls, s: str) -> "Permutation":
        return cls(json.loads(s))


def reverse_perm(perm: Permutation) -> Permutation:
    """Mirror a permutation: rank k maps to what rank (size-1-k) mapped to."""
    return Permutation(perm.forward[::-1])


def as_keys(keys) -> np.ndarray:
    """Validate a secret key sequence: 1-D, non-empty, every entry in [0, 1]."""
    arr = np.ascontiguousarray(keys, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("key sequence must be 1-D and non-empty")
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError("key values must lie in [0, 1]")
    out = arr.copy()
    out.flags.writeable = False
    return out


def random_keys(n: int, rng: np.random.Generator) -> np.ndarray:
    return as_keys(rng.random(n))


@dataclass(frozen=True)
class TokenSeq:
    """An immutable token sequence tagged with how it was produced."""

    tokens: tuple[int, ...]
    origin: Origin = Origin.PLAIN

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
        object.__setattr__(self, "origin", Origin(self.origin))

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)


@dataclass(frozen=True)
class Transcript:
    """A generation record: prompt, completion, and provenance metadata.

    Serializes to {prompt, tokens, origin, key_id, perm_id, model_params} plus
    any extra fields (spoof transcripts add known_fraction and fill_seed).
    """

    prompt: tuple[int, ...]
    text: TokenSeq
    key_id: str | None = None
    perm_id: str | None = None
    model_params: dict | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "prompt", tuple(int(t) for t in self.prompt))

    @property
    def tokens(self) -> tuple[int, ...]:
        return self.text.tokens

    def to_dict(self) -> dict:
        d = {
            "prompt": list(self.prompt),
            "tokens": list(self.text.tokens),
            "origin": self.text.origin.value,
            "key_id": self.key_id,
            "perm_id": self.perm_id,
            "model_params": self.model_params,
        }
        d.update(self.extra)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "Transcript":
        extra = {k: v for k, v in d.items()
                 if k not in ("prompt", "tokens", "origin", "key_id",
                              "perm_id", "model_params")}
        return cls(
            prompt=tuple(d.get("prompt", ())),
            text=TokenSeq(tuple(d["tokens"]), Origin(d.get("origin", "plain"))),
            key_id=d.get("key_id"),
            perm_id=d.get("perm_id"),
            model_params=d.get("model_params"),
            extra=extra,
        )

    @classmethod
    def from_json(cls, s: str) -> "Transcript":
        return cls.from_dict(json.loads(s))


def key_index(t: int, n: int) -> int:
    """Key slot used at generation position ``t`` (1-based), as a 0-based index.

    Position 1 uses slot 0, position n uses slot n-1, position n+1 wraps back
    to slot 0: the cycle is anchored to the first generated token.
    """
    if t < 1:
        raise DomainError(f"position must be >= 1, got {t}")
    if n < 1:
        raise DomainError(f"key length must be >= 1, got {n}")
    return (t - 1) % n


def select_token(dist, xi: float, perm: Permutation) -> int:
    """Pick the token at the first rank whose cumulative mass reaches ``xi``.

    The CDF is taken along ``perm``'s order; ties resolve to the smallest
    qualifying rank. If floating-point rounding leaves every cumulative value
    below ``xi`` (xi = 1 against a CDF peaking at 1 - eps), the last rank is
    returned.
    """
    if not 0.0 <= xi <= 1.0:
        raise DomainError(f"key value must lie in [0, 1], got {xi!r}")
    cum = cdf_under_perm(dist, perm)
    k = int(np.searchsorted(cum, xi, side="left"))
    if k >= cum.size:
        k = cum.size - 1
    return int(perm.forward[k])


def select_token_batch(dist, xis, perm: Permutation) -> np.ndarray:
    """Vectorized select_token for many key values against one distribution."""
    x = np.asarray(xis, dtype=np.float64)
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise DomainError("key values must lie in [0, 1]")
    cum = cdf_under_perm(dist, perm)
    ks = np.searchsorted(cum, x, side="left")
    np.minimum(ks, cum.size - 1, out=ks)
    return perm.forward[ks]


def generate(model: ToyLM, prompt, m: int, key, perm: Permutation) -> TokenSeq:
    """Generate ``m`` watermarked tokens after ``prompt``.

    Token t (1-based) is selected from the model's distribution conditioned on
    prompt plus the tokens generated so far, using key slot key_index(t, n).
    Pure function of its arguments.
    """
    if m < 1:
        raise DomainError(f"generation length must be >= 1, got {m}")
    keys = as_keys(key)
    context = tuple(int(t) for t in prompt)
    out: list[int] = []
    for t in range(1, m + 1):
        dist = model.next_dist(context)
        xi = float(keys[key_index(t, keys.size)])
        tok = select_token(dist, xi, perm)
        out.append(tok)
        context = context + (tok,)
    return TokenSeq(tuple(out), Origin.WATERMARKED)


def plain_generate(model: ToyLM, prompt, m: int,
                   rng: np.random.Generator) -> TokenSeq:
    """Sample ``m`` tokens ancestrally from the model, with no watermark.

    Each step draws a fresh uniform and inverts the CDF in token-id order;
    the marginal at every step is exactly the model distribution.
    """
    if m < 1:
        raise DomainError(f"generation length must be >= 1, got {m}")
    ident = Permutation.identity(model.vocab_size)
    context = tuple(int(t) for t in prompt)
    out: list[int] = []
    for _ in range(m):
        dist = model.next_dist(context)
        tok = select_token(dist, float(rng.random()), ident)
        out.append(tok)
        context = context + (tok,)
    return TokenSeq(tuple(out), Origin.PLAIN)


def tokens_of(text) -> tuple[int, ...]:
    """Extract raw tokens from a TokenSeq, Transcript, or plain sequence."""
    if isinstance(text, Transcript):
        return text.text.tokens
    if isinstance(text, TokenSeq):
        return text.tokens
    return tuple(int(t) for t in text)


def prompt_of(text) -> tuple[int, ...]:
    """Extract the generation prompt if the object carries one (else empty)."""
    if isinstance(text, Transcript):
        return text.prompt
    return ()
