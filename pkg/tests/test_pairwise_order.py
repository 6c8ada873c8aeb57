import math

import numpy as np
import pytest

from wmlab import (
    AssumptionViolation,
    ComparisonOracle,
    InvalidPairError,
    Permutation,
    RecoveredOrdering,
    ToyLM,
    Transcript,
    Verdict,
    check_equivalence,
    classify_orientation,
    generate,
    query_pair,
    random_keys,
    recover_ordering_mergesort,
    resolve_orientation,
    reverse_perm,
    select_token,
)
from wmlab.attacks.pairwise_order import DISTINCT, IDENTICAL, MIRRORED


def make_oracle(vocab, perm_seed, xi, model_seed=3):
    model = ToyLM(vocab_size=vocab, seed=model_seed)
    perm = Permutation.random(vocab, np.random.default_rng(perm_seed))
    return ComparisonOracle(model, perm, xi), perm


def test_query_pair_fact_mapping():
    oracle, perm = make_oracle(8, 1, xi=0.3)
    a, b = perm.token_at(2), perm.token_at(5)  # a earlier than b
    # low key -> model emits the earlier token -> read as "b before a"
    assert query_pair(oracle, a, b) is Verdict.B_BEFORE_A
    oracle_hi, _ = make_oracle(8, 1, xi=0.7)
    assert query_pair(oracle_hi, a, b) is Verdict.A_BEFORE_B


def test_query_pair_swap_flips_verdict():
    oracle, perm = make_oracle(8, 2, xi=0.7)
    a, b = perm.token_at(0), perm.token_at(4)
    assert query_pair(oracle, a, b) is Verdict.A_BEFORE_B
    assert query_pair(oracle, b, a) is Verdict.B_BEFORE_A


def test_query_pair_rejects_degenerate():
    oracle, _ = make_oracle(8, 2, xi=0.7)
    with pytest.raises(InvalidPairError):
        query_pair(oracle, 3, 3)


def test_query_pair_deterministic():
    oracle, _ = make_oracle(8, 5, xi=0.42)
    verdicts = {query_pair(oracle, 1, 6) for _ in range(5)}
    assert len(verdicts) == 1


def test_recover_singleton_vocab():
    oracle, _ = make_oracle(2, 0, xi=0.9)
    out = recover_ordering_mergesort(1, oracle)
    assert out.ordered_tokens == (0,)
    assert out.query_count == 0


def test_recover_exact_orientations():
    oracle, perm = make_oracle(8, 7, xi=0.7)
    out = recover_ordering_mergesort(8, oracle)
    assert out.ordered_tokens == tuple(perm.forward.tolist())
    assert classify_orientation(out, perm) == "pi"

    oracle_lo, perm_lo = make_oracle(8, 7, xi=0.3)
    out_lo = recover_ordering_mergesort(8, oracle_lo)
    assert out_lo.ordered_tokens == tuple(perm_lo.forward[::-1].tolist())
    assert classify_orientation(out_lo, perm_lo) == "reverse_pi"


def test_recover_boundary_key_half():
    # xi = 0.5 takes the "earlier token" branch consistently: reverse order
    oracle, perm = make_oracle(16, 9, xi=0.5)
    out = recover_ordering_mergesort(16, oracle)
    assert classify_orientation(out, perm) == "reverse_pi"
    assert not out.inconsistent


@pytest.mark.parametrize("vocab", [2, 3, 5, 8, 13, 16, 33, 64])
def test_query_budget(vocab):
    oracle, perm = make_oracle(vocab, vocab, xi=0.77, model_seed=hash(vocab) % 97 + 2)
    out = recover_ordering_mergesort(vocab, oracle)
    assert out.ordered_tokens in (tuple(perm.forward.tolist()),
                                  tuple(perm.forward[::-1].tolist()))
    assert out.query_count <= vocab * math.ceil(math.log2(vocab))


def test_query_budget_at_thousand_tokens():
    oracle, perm = make_oracle(1000, 4, xi=0.66)
    out = recover_ordering_mergesort(1000, oracle)
    assert out.ordered_tokens == tuple(perm.forward.tolist())
    assert out.query_count < 10_000


class NoisyOracle:
    """Returns an arbitrary member of the pair; not a consistent order."""

    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)
        self.query_count = 0

    def first_token(self, a, b):
        self.query_count += 1
        return int(self.rng.choice([a, b]))


def test_noisy_oracle_flagged_inconsistent():
    out = recover_ordering_mergesort(16, NoisyOracle(seed=0))
    assert out.inconsistent
    assert len(out.ordered_tokens) == 16
    assert sorted(out.ordered_tokens) == list(range(16))


@pytest.fixture(scope="module")
def recovery_scenario():
    model = ToyLM(vocab_size=32, seed=6)
    rng = np.random.default_rng(50)
    perm = Permutation.random(32, rng)
    keys = random_keys(8, rng)
    outs = []
    for j in range(40):
        prompt = tuple(int(t) for t in
                       np.random.default_rng(500 + j).integers(0, 32, 3))
        outs.append(Transcript(prompt=prompt,
                               text=generate(model, prompt, 30, keys, perm)))
    return model, perm, keys, outs


def test_resolve_orientation_adopts_as_sorted(recovery_scenario):
    model, perm, keys, outs = recovery_scenario
    oracle = ComparisonOracle(model, perm, key_slot_xi=float(keys[0]))
    ordering = recover_ordering_mergesort(32, oracle)
    adopted, bounds = resolve_orientation(ordering, outs, model, 8)
    # ties break toward the as-sorted orientation, and its bounds must
    # bracket the matching parameterization of the true keys
    assert adopted.forward.tolist() == list(ordering.ordered_tokens)
    ref = keys if adopted == perm else 1.0 - keys
    assert bounds.contains(ref)
    # the mirror orientation is equally consistent (no violation either)
    flipped = reverse_perm(adopted)
    from wmlab import estimate_key_bounds
    assert estimate_key_bounds(outs, flipped, model, 8).contains(1.0 - ref)


def test_resolve_orientation_corrupted_order_raises(recovery_scenario):
    model, perm, keys, outs = recovery_scenario
    wrong = perm.forward.tolist()
    wrong[0], wrong[17] = wrong[17], wrong[0]
    ordering = RecoveredOrdering(tuple(wrong), query_count=0)
    with pytest.raises(AssumptionViolation):
        resolve_orientation(ordering, outs, model, 8)


def test_check_equivalence_identical():
    model = ToyLM(vocab_size=6, seed=1)
    perm = Permutation.random(6, np.random.default_rng(3))
    rep = check_equivalence(0.37, perm, 0.37, perm, model, trials=300, seed=9)
    assert rep.verdict == IDENTICAL
    assert rep.disagreements == 0
    assert rep.confirmed


def test_check_equivalence_mirrored():
    model = ToyLM(vocab_size=6, seed=1)
    perm = Permutation.random(6, np.random.default_rng(4))
    xi = 0.31
    rep = check_equivalence(xi, perm, 1.0 - xi, reverse_perm(perm), model,
                            trials=500, seed=10)
    assert rep.verdict == MIRRORED
    assert rep.disagreements == 0
    assert rep.confirmed
    assert not rep.separator_found


def test_check_equivalence_distinct_keys_same_perm():
    model = ToyLM(vocab_size=3, seed=1)
    perm = Permutation.random(3, np.random.default_rng(5))
    rep = check_equivalence(0.3, perm, 0.6, perm, model, trials=200, seed=11)
    assert rep.verdict == DISTINCT
    assert rep.separator_found and rep.confirmed
    p = np.array(rep.separating_dist)
    assert select_token(p, 0.3, perm) != select_token(p, 0.6, perm)


def test_check_equivalence_distinct_perms():
    model = ToyLM(vocab_size=8, seed=1)
    rng = np.random.default_rng(6)
    p1 = Permutation.random(8, rng)
    p2 = Permutation.random(8, rng)
    assert p1 != p2 and p1 != reverse_perm(p2)
    rep = check_equivalence(0.5, p1, 0.5, p2, model, trials=400, seed=12)
    assert rep.verdict == DISTINCT
    assert rep.separator_found


def test_check_equivalence_mirrored_perm_wrong_key():
    # reversed permutation but the key is not complemented: distinct, and the
    # two-token sweep must expose it even if random trials agree
    model = ToyLM(vocab_size=4, seed=1)
    perm = Permutation.random(4, np.random.default_rng(7))
    rep = check_equivalence(0.3, perm, 0.6, reverse_perm(perm), model,
                            trials=200, seed=13)
    assert rep.verdict == DISTINCT
    assert rep.separator_found
