"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid shapes, hyperparameters or configuration values."""


class InputError(ValueError):
    """Data that violates an operation's preconditions (labels, targets, indices)."""


class SceneLoadError(OSError):
    """A scene or checkpoint on disk is missing, truncated or inconsistent."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
