"""Exception types shared across the toolkit."""


class RegionflowError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(RegionflowError):
    """Input data violates a documented contract."""


class ConfigError(RegionflowError):
    """A configuration value is out of range or inconsistent."""


class TrainingError(RegionflowError):
    """Training cannot proceed, e.g. no positive pairs at the configured threshold."""


class NumericalError(RegionflowError):
    """A computation produced non-finite values."""


class InfeasibleError(RegionflowError):
    """The requested partition cannot satisfy the connectivity constraint."""


class UsageError(RegionflowError):
    """Bad command-line usage."""
