"""Exception hierarchy shared across the toolkit."""


class PrefrankError(Exception):
    """Base class for all toolkit errors."""


class InvalidActuator(PrefrankError):
    """Actuator vector has the wrong shape or values outside [0, 1]."""


class InvalidImage(PrefrankError):
    """Image is empty, malformed, or has values outside the expected range."""


class DegenerateVector(PrefrankError):
    """Zero-norm vector passed where a direction is required."""


class InsufficientPool(PrefrankError):
    """Candidate pool is too small for the requested selection."""


class InvalidItems(PrefrankError):
    """Duplicate or otherwise unusable item ids."""


class StaleAnswer(PrefrankError):
    """Answer does not reference the currently pending query."""


class InvalidWinner(PrefrankError):
    """Declared winner is not a member of the queried pair."""


class IncomparableRankings(PrefrankError):
    """Rankings do not cover the same item set."""


class InvalidInput(PrefrankError):
    """Model input has the wrong shape."""


class NoData(PrefrankError):
    """Training requested on an empty dataset."""


class InvalidSplit(PrefrankError):
    """Cross-validation split is impossible with the given data."""


class IllConditioned(PrefrankError):
    """Kernel matrix is not positive definite even after jitter escalation."""


class AbortedRun(PrefrankError):
    """Optimization aborted; carries the partial trace collected so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class IoError(PrefrankError):
    """Artifact missing, unreadable, or failing its integrity check."""
