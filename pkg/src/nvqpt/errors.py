"""Exception hierarchy shared across the package."""


class NvqptError(Exception):
    """Base class for all package-specific errors."""


class UnphysicalStateError(NvqptError, ValueError):
    """A density matrix, Bloch vector or process matrix violates physicality."""


class TimelineError(NvqptError, ValueError):
    """A pulse timeline is malformed or inconsistent with the protocol."""


class CalibrationError(NvqptError, RuntimeError):
    """Pulse calibration could not reach the requested rotation angle."""


class ConvergenceError(NvqptError, RuntimeError):
    """An integrator or optimizer failed to converge.

    ``payload`` may carry the best result found so far (e.g. the lowest-cost
    process matrix from a failed multistart fit) for diagnostics.
    """

    def __init__(self, message, payload=None):
        super().__init__(message)
        self.payload = payload


class DatasetError(NvqptError, ValueError):
    """A tomography dataset is incomplete or internally inconsistent."""
