"""Watermark recovery attacks, one module per threat model.

perm_sort       -- keys known: recover the permutation by sorting chosen keys
                  against observed first tokens.
key_bounds      -- permutation known (fully or partially): pin down each key
                  slot with interval estimates from watermarked outputs.
pairwise_order  -- nothing known: recover the vocabulary order (or its mirror)
                  with forced two-token queries and merge sort, and check the
                  mirror-equivalence law.
"""

from .perm_sort import PairDataset, PartialPermutation, build_pair_dataset, recover_perm_by_sort
from .key_bounds import (
    KeyBounds,
    KnownSubsetOrder,
    estimate_key_bounds,
    estimate_key_bounds_partial,
    fit_key_length,
    key_point_estimate,
)
from .pairwise_order import (
    ComparisonOracle,
    EquivalenceReport,
    RecoveredOrdering,
    Verdict,
    check_equivalence,
    classify_orientation,
    query_pair,
    recover_ordering_mergesort,
    resolve_orientation,
)

__all__ = [
    "PairDataset", "PartialPermutation", "build_pair_dataset", "recover_perm_by_sort",
    "KeyBounds", "KnownSubsetOrder", "estimate_key_bounds",
    "estimate_key_bounds_partial", "fit_key_length", "key_point_estimate",
    "ComparisonOracle", "EquivalenceReport", "RecoveredOrdering", "Verdict",
    "check_equivalence", "classify_orientation", "query_pair",
    "recover_ordering_mergesort", "resolve_orientation",
]
