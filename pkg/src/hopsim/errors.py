"""Exception types shared across the package."""


class HopsimError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateGap(HopsimError):
    """The off-diagonal norm sqrt(beta^2 + gamma^2) vanished at a queried point.

    Eigenprojectors and the gap gradient are undefined there; for the
    built-in models this signals misuse (all have a strictly positive
    minimal gap).
    """


class UnknownModel(HopsimError):
    """Requested built-in potential name is not registered."""


class ZeroMomentumAtCrossing(HopsimError):
    """Momentum (or the coupling-slope determinant factor) is numerically
    zero at a gap minimum, so the transition rate is undefined."""


class FrustratedHop(HopsimError):
    """An upward hop was requested but the drifted kinetic energy would be
    nonpositive.  Callers reject the hop and let the trajectory continue."""


class BranchOverflow(HopsimError):
    """A branching run produced more weighted copies of one initial sample
    than the configured maximum."""


class DomainTooSmall(HopsimError):
    """The initial wave packet does not fit in the grid domain."""


class StepTooLarge(HopsimError):
    """Integration step violates the phase-resolution bound."""


class ParseError(HopsimError):
    """Config file could not be parsed.  Carries the offending line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(HopsimError):
    """Config parsed but a field value is invalid.  Carries the field name."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class BoundaryLeak(UserWarning):
    """Wavefunction mass near the periodic boundary exceeded the monitor
    threshold; the grid run is no longer trustworthy."""
