"""Exception types shared across the package."""


class FoldsimError(Exception):
    """Base class for all foldsim-specific errors."""


class MappingError(FoldsimError):
    """A layer (or fold) cannot be placed on the given PE array."""


class SimulationError(FoldsimError):
    """A functional simulation is inconsistent or incomplete."""


class ConfigError(FoldsimError):
    """Invalid run or system configuration."""
