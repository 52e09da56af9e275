"""Exception types shared across the package.

Every failure mode that callers are expected to handle gets its own class so
the CLI can map them onto exit codes without string matching.
"""


class NmqsdError(Exception):
    """Base class for all package-specific errors."""


class InvalidParameterError(NmqsdError):
    """A model or grid parameter is out of its documented range."""


class UnsupportedSizeError(NmqsdError):
    """Requested Hilbert space exceeds the dense-matrix size cap."""


class InvalidModelError(NmqsdError):
    """Model structure violates a contract (shape, hermiticity, family)."""


class InvalidCorrelationError(NmqsdError):
    """Correlation function is not positive semidefinite or is malformed."""


class BasisMismatchError(NmqsdError):
    """Discovered operator basis disagrees with the expected counts."""


class ClosureDivergedError(NmqsdError):
    """Closure iteration failed to reach a fixed point within bounds."""


class BasisIncompleteError(NmqsdError):
    """A projected right-hand side left the operator basis span."""


class KernelBlowupError(NmqsdError):
    """Kernel tables became non-finite during propagation."""

    def __init__(self, t: float):
        super().__init__(f"kernel tables non-finite at t={t:.6g}")
        self.t = t


class TrajectoryDivergedError(NmqsdError):
    """A trajectory state became non-finite during integration."""

    def __init__(self, t: float, seed: int, index: int):
        super().__init__(
            f"trajectory {index} (seed {seed}) non-finite at t={t:.6g}"
        )
        self.t = t
        self.seed = seed
        self.index = index


class ResourceLimitError(NmqsdError):
    """Estimated memory for kernel tables exceeds the configured cap."""


class InvalidStateError(NmqsdError):
    """A state vector or density matrix violates its contract."""


class TruncationError(NmqsdError):
    """An oracle truncation parameter is too small for convergence."""


class ConfigError(NmqsdError):
    """Run configuration is malformed; message carries the key path."""
