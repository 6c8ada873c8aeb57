"""Experiment orchestration: the full steal-and-spoof benchmark at toy scale.

One call runs the whole pipeline against a hidden (key, permutation) pair:

  1. recover the vocabulary ordering with forced-pair queries + merge sort;
  2. collect watermarked outputs and adopt an orientation for the ordering;
  3. interval-estimate the keys at each known-permutation fraction;
  4. generate plain, watermarked, and spoofed corpora;
  5. detect everything with the true secrets and aggregate metrics.

Everything derives from ``master_seed`` through labelled seed streams (see
wmlab.hashing.derive_seed): the per-sample seed for category X and sample j
is derive_seed(master_seed, "<X label>", j), so growing one stage never
shifts the randomness of another, and two runs with the same config produce
byte-identical reports. Wall-clock runtimes are kept on the report object for
interactive use but never serialized, precisely to protect that guarantee.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field, fields

import numpy as np

from .attacks.key_bounds import (
    KnownSubsetOrder,
    estimate_key_bounds_partial,
    key_point_estimate,
)
from .attacks.pairwise_order import (
    ComparisonOracle,
    classify_orientation,
    recover_ordering_mergesort,
    resolve_orientation,
)
from .errors import ConfigError
from .hashing import derive_seed
from .detection import permutation_test
from .lm import ToyLM
from .spoof import SpoofConfig, make_spoof_config, quality_proxy, spoof_generate
from .watermark import (
    Permutation,
    Transcript,
    generate,
    plain_generate,
    random_keys,
)


@dataclass(frozen=True)
class ExperimentConfig:
    """Toy benchmark configuration; defaults mirror the evaluation setup
    (100 samples of 50 tokens per category, alpha = 0.05) at a vocabulary
    small enough for brute-force oracles."""

    vocab_size: int = 64
    key_length: int = 16
    num_samples: int = 100
    tokens_per_sample: int = 50
    detection_T: int = 999
    known_fractions: tuple[float, ...] = (0.25, 0.5, 1.0)
    master_seed: int = 20240501
    model_seed: int | None = None
    temperature: float = 1.0
    context_window: int = 3
    prompt_tokens: int = 3
    attack_samples: int = 500
    alpha: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "known_fractions",
                           tuple(float(f) for f in self.known_fractions))
        self.validate()

    def validate(self) -> None:
        if self.vocab_size < 2:
            raise ConfigError("vocab_size", f"must be >= 2, got {self.vocab_size}")
        for name in ("key_length", "num_samples", "tokens_per_sample",
                     "detection_T", "attack_samples"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(name, f"must be a positive integer, got {v!r}")
        if self.prompt_tokens < 0:
            raise ConfigError("prompt_tokens", "must be >= 0")
        if self.temperature <= 0:
            raise ConfigError("temperature", "must be positive")
        if self.context_window < 0:
            raise ConfigError("context_window", "must be >= 0")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha", f"must lie in (0, 1), got {self.alpha}")
        if not self.known_fractions:
            raise ConfigError("known_fractions", "must not be empty")
        for i, f in enumerate(self.known_fractions):
            if not 0 < f <= 1:
                raise ConfigError(f"known_fractions[{i}]",
                                  f"must lie in (0, 1], got {f}")

    def model(self) -> ToyLM:
        seed = self.model_seed
        if seed is None:
            seed = derive_seed(self.master_seed, "model")
        return ToyLM(vocab_size=self.vocab_size, seed=seed,
                     temperature=self.temperature,
                     context_window=self.context_window)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["known_fractions"] = list(self.known_fractions)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(unknown[0], "unknown configuration field")
        kwargs = dict(d)
        if "known_fractions" in kwargs:
            kwargs["known_fractions"] = tuple(kwargs["known_fractions"])
        return cls(**kwargs)

    @classmethod
    def from_json(cls, s: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(s))


def fraction_label(f: float) -> str:
    return f"{f:g}"


@dataclass(frozen=True)
class CategoryMetrics:
    """Detection and quality summary of one generated corpus."""

    count: int
    median_p: float
    mean_p: float
    rejection_rate: float
    nll_mean: float
    nll_median: float
    nll_mean_filtered: float
    nll_median_filtered: float

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "median_p": self.median_p,
            "mean_p": self.mean_p,
            "rejection_rate": self.rejection_rate,
            "nll_mean": self.nll_mean,
            "nll_median": self.nll_median,
            "nll_mean_filtered": self.nll_mean_filtered,
            "nll_median_filtered": self.nll_median_filtered,
        }


_METRIC_NAMES = ("count", "median_p", "mean_p", "rejection_rate", "nll_mean",
                 "nll_median", "nll_mean_filtered", "nll_median_filtered")


@dataclass
class MetricsReport:
    """Aggregated benchmark results.

    ``runtimes`` (seconds per stage) is deliberately excluded from to_dict /
    to_json / CSV so that exported reports are byte-identical across runs.
    """

    config: dict
    alpha: float
    categories: dict[str, CategoryMetrics]
    key_mae: dict[str, float]
    interval_width_median: dict[str, float]
    recovery: dict
    runtimes: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "alpha": self.alpha,
            "categories": {k: v.to_dict() for k, v in self.categories.items()},
            "key_mae": self.key_mae,
            "interval_width_median": self.interval_width_median,
            "recovery": self.recovery,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_csv_rows(self) -> list[tuple[str, str, str]]:
        """Plot-ready long format: one (category, metric, value) per row."""
        rows: list[tuple[str, str, str]] = []
        for cat in sorted(self.categories):
            m = self.categories[cat].to_dict()
            for name in _METRIC_NAMES:
                rows.append((cat, name, repr(m[name])))
        for label in sorted(self.key_mae):
            rows.append(("key_recovery", f"mae_at_{label}",
                         repr(self.key_mae[label])))
        for label in sorted(self.interval_width_median):
            rows.append(("key_recovery", f"median_width_at_{label}",
                         repr(self.interval_width_median[label])))
        for name in sorted(self.recovery):
            rows.append(("order_recovery", name, repr(self.recovery[name])))
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["category", "metric", "value"])
        w.writerows(self.to_csv_rows())
        return buf.getvalue()


def export_report(report: MetricsReport, fmt: str, path) -> None:
    """Write a report artifact ('json' or 'csv') to ``path``."""
    if fmt == "json":
        payload = report.to_json()
    elif fmt == "csv":
        payload = report.to_csv()
    else:
        raise ValueError(f"unknown format {fmt!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(payload)


def _random_prompt(seed: int, vocab_size: int, length: int) -> tuple[int, ...]:
    if length == 0:
        return ()
    rng = np.random.default_rng(seed)
    return tuple(int(t) for t in rng.integers(0, vocab_size, size=length))


def _summarize(p_values: np.ndarray, nlls: np.ndarray,
               alpha: float) -> CategoryMetrics:
    keep = nlls <= np.percentile(nlls, 95)
    return CategoryMetrics(
        count=int(p_values.size),
        median_p=float(np.median(p_values)),
        mean_p=float(p_values.mean()),
        rejection_rate=float(np.mean(p_values < alpha)),
        nll_mean=float(nlls.mean()),
        nll_median=float(np.median(nlls)),
        nll_mean_filtered=float(nlls[keep].mean()),
        nll_median_filtered=float(np.median(nlls[keep])),
    )


def run_benchmark(config: ExperimentConfig) -> MetricsReport:
    """Run the full benchmark; deterministic in (config, master_seed).

    Generates non-watermarked, watermarked, and one spoofed corpus per known
    fraction, detects everything against the true secrets, and reports
    detection/quality summaries plus key-recovery error per fraction.
    """
    config.validate()
    master = config.master_seed
    model = config.model()
    V, n, m = config.vocab_size, config.key_length, config.tokens_per_sample
    timings: dict[str, float] = {}

    def tick():
        return time.perf_counter()

    t0 = tick()
    true_perm = Permutation.random(
        V, np.random.default_rng(derive_seed(master, "perm")))
    true_keys = random_keys(
        n, np.random.default_rng(derive_seed(master, "keys")))

    # threat model 3: recover the vocabulary ordering via forced-pair queries
    oracle = ComparisonOracle(model, true_perm, key_slot_xi=float(true_keys[0]))
    ordering = recover_ordering_mergesort(V, oracle)
    orientation = classify_orientation(ordering, true_perm)
    timings["order_recovery"] = tick() - t0

    # watermarked outputs the attacker collected with prompts of their own
    t0 = tick()
    attack_outputs = []
    for j in range(config.attack_samples):
        prompt = _random_prompt(derive_seed(master, "attack-prompt", j),
                                V, config.prompt_tokens)
        attack_outputs.append(
            Transcript(prompt=prompt,
                       text=generate(model, prompt, m, true_keys, true_perm)))
    adopted_perm, _ = resolve_orientation(ordering, attack_outputs, model, n)
    # key estimates live in the adopted parameterization; when the mirror
    # was adopted the comparable ground truth is the complemented key
    adopted_is_true = adopted_perm == true_perm
    ref_keys = true_keys if adopted_is_true else 1.0 - true_keys
    timings["attack_corpus"] = tick() - t0

    # key recovery at each known-permutation fraction; the known subsets are
    # nested prefixes of the tokens ranked by how often the attacker saw them
    # (the tokens whose positions an attacker pins down first), which also
    # concentrates the spoofer's emissions on rank-exact tokens
    t0 = tick()
    freq = np.zeros(V, dtype=np.int64)
    for tr in attack_outputs:
        np.add.at(freq, np.fromiter(tr.tokens, dtype=np.int64), 1)
    subset_pool = np.argsort(-freq, kind="stable")
    key_mae: dict[str, float] = {}
    width_median: dict[str, float] = {}
    spoof_configs: dict[str, SpoofConfig] = {}
    for f in config.known_fractions:
        label = fraction_label(f)
        count = max(1, int(round(f * V)))
        subset = KnownSubsetOrder.from_permutation(
            adopted_perm, subset_pool[:count].tolist())
        bounds = estimate_key_bounds_partial(attack_outputs, subset, model, n)
        est = key_point_estimate(bounds)
        key_mae[label] = float(np.abs(est - ref_keys).mean())
        width_median[label] = float(np.median(bounds.widths()))
        spoof_configs[label] = make_spoof_config(
            subset, bounds, V, fill_seed=derive_seed(master, "fill", label))
    timings["key_recovery"] = tick() - t0

    # corpora
    t0 = tick()
    corpora: dict[str, list[Transcript]] = {}
    plain = []
    for j in range(config.num_samples):
        prompt = _random_prompt(derive_seed(master, "plain-prompt", j),
                                V, config.prompt_tokens)
        rng = np.random.default_rng(derive_seed(master, "plain-sample", j))
        plain.append(Transcript(prompt=prompt,
                                text=plain_generate(model, prompt, m, rng)))
    corpora["non_watermarked"] = plain
    wm = []
    for j in range(config.num_samples):
        prompt = _random_prompt(derive_seed(master, "wm-prompt", j),
                                V, config.prompt_tokens)
        wm.append(Transcript(prompt=prompt,
                             text=generate(model, prompt, m, true_keys,
                                           true_perm)))
    corpora["watermarked"] = wm
    for f in config.known_fractions:
        label = fraction_label(f)
        cfg = spoof_configs[label]
        spoofs = []
        for j in range(config.num_samples):
            prompt = _random_prompt(
                derive_seed(master, "spoof-prompt", label, j),
                V, config.prompt_tokens)
            spoofs.append(Transcript(
                prompt=prompt,
                text=spoof_generate(model, prompt, m, cfg),
                extra={"known_fraction": f}))
        corpora[f"spoof_{label}"] = spoofs
    timings["generation"] = tick() - t0

    # detection with the true secrets + quality proxy
    t0 = tick()
    categories: dict[str, CategoryMetrics] = {}
    for cat, transcripts in corpora.items():
        ps = np.empty(len(transcripts))
        nlls = np.empty(len(transcripts))
        for j, tr in enumerate(transcripts):
            res = permutation_test(tr.text, true_keys, true_perm, model,
                                   T=config.detection_T,
                                   seed=derive_seed(master, "detect", cat, j))
            ps[j] = res.p_value
            nlls[j] = quality_proxy(tr, model)
        categories[cat] = _summarize(ps, nlls, config.alpha)
    timings["detection"] = tick() - t0

    recovery = {
        "query_count": int(ordering.query_count),
        "orientation": orientation,
        "adopted_matches_true_perm": bool(adopted_is_true),
        "order_exact": orientation in ("pi", "reverse_pi"),
    }
    return MetricsReport(
        config=config.to_dict(),
        alpha=config.alpha,
        categories=categories,
        key_mae=key_mae,
        interval_width_median=width_median,
        recovery=recovery,
        runtimes=timings,
    )
