"""Exception hierarchy shared across the package.

Every error that a caller is expected to catch programmatically gets its
own class; plain ValueError is reserved for constructor-level validation
of obviously malformed inputs.
"""

from __future__ import annotations


class IdtoolError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(IdtoolError):
    """A model or run configuration violates its invariants."""


class EmptySectionError(IdtoolError):
    """No grid point satisfies the support predicate at some (z, theta).

    The framework assumes sections are nonempty, so an empty discretized
    section signals that the latent grid is too coarse or the truncation
    radius too small.  The offending atom index is attached when the
    failure surfaces while iterating over a data distribution.
    """

    def __init__(self, message: str, *, atom_index: int | None = None):
        super().__init__(message)
        self.atom_index = atom_index


class DimensionError(IdtoolError):
    """An operation was called with an incompatible moment partition."""


class NumericalInstabilityError(IdtoolError):
    """The LP solver hit a pivot below its stability threshold."""


class EmptyIntervalError(IdtoolError):
    """A pinned selection LP is infeasible: no admissible value exists."""


class RatioDegenerateError(IdtoolError):
    """A ratio-type parameter has a feasible selection with zero denominator."""


class NonemptyCorrespondenceViolated(IdtoolError):
    """A counterfactual correspondence is empty at a feasible grid point."""

    def __init__(self, message: str, *, z=None, u=None, theta=None):
        super().__init__(message)
        self.z = z
        self.u = u
        self.theta = theta


class NotSupportedError(IdtoolError):
    """The requested feature is outside the supported scope."""
