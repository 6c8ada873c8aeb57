"""Exception types shared across the lab."""


class WmLabError(Exception):
    """Base class for all wmlab errors."""


class InvalidTokenError(WmLabError, ValueError):
    """A token id falls outside the model vocabulary."""


class InvalidPairError(WmLabError, ValueError):
    """A two-token construction received a degenerate pair (a == b)."""


class DimensionError(WmLabError, ValueError):
    """Vector sizes disagree (distribution vs permutation, etc.)."""


class DomainError(WmLabError, ValueError):
    """A scalar argument is outside its mathematical domain."""


class InvalidDistError(WmLabError, ValueError):
    """A probability vector has negative mass or does not sum to one."""


class ConfigError(WmLabError, ValueError):
    """An experiment configuration field is invalid.

    ``field`` holds the dotted path of the offending entry.
    """

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class AssumptionViolation(WmLabError):
    """The attacker's hypothesised (permutation, model, key length) cannot
    explain an observation: an interval update produced lb > ub.

    Carries the offending output index, token position (1-based) and key slot
    so the caller can inspect which observation broke the hypothesis.
    """

    def __init__(self, message: str, output_index: int | None = None,
                 position: int | None = None, slot: int | None = None):
        self.output_index = output_index
        self.position = position
        self.slot = slot
        super().__init__(message)
