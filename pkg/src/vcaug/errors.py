"""Exception hierarchy shared across the package.

The CLI maps ``ValidationError`` and ``ConfigError`` to exit code 2 and
everything else to exit code 1.
"""


class VcaugError(Exception):
    pass


class ValidationError(VcaugError, ValueError):
    """Input data violates a precondition (bad shape, too short, empty)."""


class ConfigError(VcaugError):
    """Configuration or run setup is unusable (missing codebook, unknown key)."""


class BackendError(VcaugError):
    """A pluggable backend (speech encoder, vocoder, ASR) failed."""
