"""Exception taxonomy shared across the package."""


class JointDiffError(Exception):
    """Base class for all package errors."""


class ConfigurationError(JointDiffError):
    """Invalid configuration value (bad dimensions, ranges, weights)."""


class ShapeError(JointDiffError):
    """Array shapes incompatible with the requested operation."""


class ContractError(JointDiffError):
    """Caller violated an operation precondition."""


class TrainingError(JointDiffError):
    """Training diverged (non-finite loss) or cannot proceed."""


class ArtifactError(JointDiffError):
    """A referenced artifact is missing or fails integrity checks."""
