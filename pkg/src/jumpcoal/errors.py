"""Exception taxonomy shared across the package.

Exit-code mapping used by the CLI: ConfigError maps to exit code 2,
failed validation checks map to exit code 1, everything else is a bug.
"""


class JumpcoalError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(JumpcoalError):
    """Malformed or inconsistent run configuration."""


class KernelIntegrationError(JumpcoalError):
    """A kernel constant could not be computed by quadrature.

    The message names the divergent or non-convergent constant.
    """


class InvalidScaleError(JumpcoalError):
    """Scale interval is empty or reversed (alpha_star <= alpha0)."""


class HorizonExceededError(JumpcoalError):
    """Requested evolution time is at or beyond the guaranteed horizon."""


class BlowUpError(JumpcoalError):
    """Time stepping produced non-finite values."""


class CombinatorialBlowupError(JumpcoalError):
    """Subset enumeration was requested beyond the hard cap."""


class TruncationError(JumpcoalError):
    """Cluster-expansion depth incompatible with the stored orders."""


class UnsupportedSamplingError(JumpcoalError):
    """Event sampling is not available for this kernel family."""
