"""Exception hierarchy shared across the package.

Every error raised on a documented failure path derives from AgegradError so
the CLI can turn any of them into a single-line diagnostic and a nonzero exit.
"""


class AgegradError(Exception):
    """Base class for all package-level errors."""


class ShapeError(AgegradError):
    """Tensor/parameter shapes are inconsistent with an operation's contract."""


class ConfigError(AgegradError):
    """A configuration value or combination of values is invalid."""


class ContractError(AgegradError):
    """A caller violated an operation precondition (non-shape, non-config)."""


class ManifestError(AgegradError):
    """A dataset manifest file failed to parse."""


class CheckpointError(AgegradError):
    """A checkpoint file is missing, truncated, or incompatible."""
