"""Exception types shared across the package."""


class DupenetError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(DupenetError, ValueError):
    """Invalid configuration: bad parameter values, malformed config files."""


class ConsistencyError(DupenetError, ValueError):
    """Inputs that must refer to the same object or grid do not match."""


class SamplingError(DupenetError, RuntimeError):
    """Network sampling failed; the message reports the offending seed."""


class BracketError(DupenetError, ValueError):
    """Bisection bracket does not straddle the invasion threshold."""


class NumericalBlowupError(DupenetError, RuntimeError):
    """Integration produced a non-finite state."""

    def __init__(self, time: float):
        self.time = time
        super().__init__(f"non-finite state at t={time:g}")


class EmptyGroupError(DupenetError, ValueError):
    """A record predicate or partition matched no responses."""
