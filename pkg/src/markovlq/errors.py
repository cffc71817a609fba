"""Exception hierarchy shared by all toolkit modules."""


class ToolkitError(Exception):
    """Base class for all toolkit-specific errors."""


class DomainError(ToolkitError, ValueError):
    """An argument lies outside the declared domain of an operation."""


class NotPsdError(ToolkitError, ValueError):
    """A matrix required to be positive semidefinite is not."""


class ConsistencyError(ToolkitError, RuntimeError):
    """An internal contract was violated; signals corrupted inputs, not user error."""


class NotConvergedError(ToolkitError, RuntimeError):
    """A result that requires convergence was used before convergence."""


class ResourceLimitError(ToolkitError, RuntimeError):
    """A configured resource cap (e.g. the grid box cap) would be exceeded."""


class ConfigError(ToolkitError, ValueError):
    """A scenario configuration failed to parse or validate."""
