import numpy as np
import pytest

from wmlab import Permutation, ToyLM


class FixedDistModel:
    """Stand-in model returning one fixed distribution for every context."""

    def __init__(self, probs):
        self.probs = np.asarray(probs, dtype=np.float64)
        self.vocab_size = self.probs.size

    def next_dist(self, prefix=()):
        return self.probs


@pytest.fixture
def toy8():
    return ToyLM(vocab_size=8, seed=7)


@pytest.fixture
def ident8():
    return Permutation.identity(8)
