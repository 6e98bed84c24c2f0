"""Exception types shared across the package.

Failures that falsify a numerical hypothesis (rather than indicating a bug)
carry enough payload to be reported as structured records by the step driver.
"""

from __future__ import annotations


class QPLabError(Exception):
    """Base class for all package errors."""


class DomainError(QPLabError):
    """Input outside the analyticity / validity domain (e.g. strip violation)."""


class RegimeError(QPLabError):
    """A perturbative precondition (e.g. epsilon < delta^M) does not hold."""


class SingularWindow(QPLabError):
    """Resolvent requested too close to the spectrum.

    Attributes
    ----------
    nearest_eigenvalue_distance : float
        Estimate of the distance from the shift to the nearest eigenvalue.
    """

    def __init__(self, message, nearest_eigenvalue_distance=None):
        super().__init__(message)
        self.nearest_eigenvalue_distance = nearest_eigenvalue_distance


class SingularBlock(QPLabError):
    """A sub-block that must be inverted is numerically singular."""


class ContourTooClose(QPLabError):
    """A zero of the integrand sits (numerically) on the contour."""


class NonSeparable(QPLabError):
    """Root subdivision exceeded the maximum depth without isolating roots."""


class ConfigError(QPLabError):
    """Malformed experiment configuration; carries the offending key."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class InconsistencyError(QPLabError):
    """Two independent computations of the same quantity disagree."""


class HypothesisViolation(QPLabError):
    """A runtime-checkable hypothesis of the induction failed.

    This is a first-class scientific outcome at toy scales: it falsifies the
    configured ladder, not the code.  The step driver catches it and records
    a structured entry in the certificate.
    """

    def __init__(self, name, detail="", expected=None, observed=None):
        super().__init__(f"{name}: {detail}" if detail else name)
        self.name = name
        self.detail = detail
        self.expected = expected
        self.observed = observed

    def record(self):
        return {
            "name": self.name,
            "detail": self.detail,
            "expected": _jsonable(self.expected),
            "observed": _jsonable(self.observed),
        }


class PigeonholeExhausted(HypothesisViolation):
    """No admissible cell in a pigeonhole search; carries the occupancy table."""

    def __init__(self, name, detail="", occupancy=None):
        super().__init__(name, detail)
        self.occupancy = occupancy


class NoCleanAnnulus(HypothesisViolation):
    """Every candidate eigenvalue-free annulus contained an eigenvalue."""


def _jsonable(x):
    if x is None or isinstance(x, (bool, int, float, str)):
        return x
    if isinstance(x, complex):
        return [x.real, x.imag]
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return repr(x)
