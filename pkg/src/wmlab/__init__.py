"""Inverse-transform-sampling watermark laboratory.

Implements the distortion-free watermark driven by a secret key sequence and
a secret vocabulary permutation, its alignment-cost detector, and the full
suite of key/permutation recovery attacks, validated end-to-end against a
deterministic toy language model.
"""

from .errors import (
    AssumptionViolation,
    ConfigError,
    DimensionError,
    DomainError,
    InvalidDistError,
    InvalidPairError,
    InvalidTokenError,
    WmLabError,
)
from .hashing import derive_seed, mix64
from .lm import DIST_ATOL, ToyLM, as_dist, cdf_under_perm, forced_pair_dist, next_dist
from .watermark import (
    Origin,
    Permutation,
    TokenSeq,
    Transcript,
    as_keys,
    generate,
    key_index,
    plain_generate,
    random_keys,
    reverse_perm,
    select_token,
    select_token_batch,
)
from .detection import DetectionResult, alignment_cost, permutation_test
from .attacks import (
    ComparisonOracle,
    EquivalenceReport,
    KeyBounds,
    KnownSubsetOrder,
    PairDataset,
    PartialPermutation,
    RecoveredOrdering,
    Verdict,
    build_pair_dataset,
    check_equivalence,
    classify_orientation,
    estimate_key_bounds,
    estimate_key_bounds_partial,
    fit_key_length,
    key_point_estimate,
    query_pair,
    recover_perm_by_sort,
    recover_ordering_mergesort,
    resolve_orientation,
)
from .spoof import SpoofConfig, make_spoof_config, quality_proxy, spoof_generate
from .experiment import (
    CategoryMetrics,
    ExperimentConfig,
    MetricsReport,
    export_report,
    run_benchmark,
)

__version__ = "0.1.0"
