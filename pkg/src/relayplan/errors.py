"""Exception hierarchy shared across the toolkit.

The CLI maps these onto process exit codes: validation problems exit 2,
size-cap violations exit 3, I/O failures exit 4.
"""


class RelayPlanError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(RelayPlanError):
    """A value violates a documented invariant (bad range, bad shape, ...)."""


class SchemaError(ValidationError):
    """A scenario file does not match the expected schema.

    Carries the dotted path of the offending field so callers can point at
    the exact location in the input file.
    """

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class CapExceededError(RelayPlanError):
    """An operation would exceed a configured size cap.

    The message includes a remediation hint (smaller horizon, fewer relays,
    a different solver) because these errors are expected at the boundary
    between desk-scale exact methods and the point-based solvers.
    """


class SpectralError(RelayPlanError):
    """A chain has no unique stationary distribution (reducible or periodic)."""
