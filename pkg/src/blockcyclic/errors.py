"""Exception types raised across the package."""


class BlockCyclicError(Exception):
    """Base class. ``category`` is the machine-readable tag the CLI reports."""

    category = "error"


class ChainDivergedError(BlockCyclicError):
    category = "divergence"

    def __init__(self, t: int, norm: float):
        self.t = t
        self.norm = norm
        super().__init__(f"non-finite loss or gradient at step {t} (|w_t| = {norm:.6g})")


class ContractViolation(BlockCyclicError):
    """A documented precondition of an update rule was broken (e.g. a loss above its bound)."""

    category = "contract"


class SolverError(BlockCyclicError):
    category = "solver"


class IngestionError(BlockCyclicError):
    category = "ingestion"


class ConfigError(BlockCyclicError):
    category = "config"
