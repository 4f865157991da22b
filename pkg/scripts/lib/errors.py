"""Exception hierarchy shared by the simulator modules.

ConfigError lives in config.py next to the loader that raises it; everything
else that a library call can raise is defined here so the CLI can map
exception classes to exit codes in one place.
"""


class SpinSimError(Exception):
    """Base class for all simulator errors."""
    pass


class DomainError(SpinSimError, ValueError):
    """Raised when physical inputs are outside their valid domain."""
    pass


class ResourceError(SpinSimError, MemoryError):
    """Raised when a request exceeds the dense 2^N operator cap."""
    pass


class TimingError(SpinSimError, ValueError):
    """Raised when a pulse sequence cannot be laid out with the given timing."""
    pass


class CyclicityError(SpinSimError):
    """Raised when the pulse rotations of a cycle do not multiply to identity."""

    def __init__(self, residual_angle: float):
        self.residual_angle = residual_angle
        super().__init__(
            f"Sequence is not cyclic: net pulse rotation of {residual_angle:.6g} rad"
        )


class NumericalError(SpinSimError, ArithmeticError):
    """Raised on dimension mismatches, non-finite values, or total failure."""
    pass


class AnalysisError(SpinSimError, ValueError):
    """Raised when the echo analysis chain cannot produce a value."""
    pass


class CenterPeakOnlyError(AnalysisError):
    """Spectrum has a peak at the carrier but no detuned side-peak."""
    pass
