"""Exception hierarchy shared by the solver and the simulation harness."""


class BessOpmError(Exception):
    """Base class for all package errors."""


class DomainError(BessOpmError, ValueError):
    """An argument lies outside the domain where a model function is defined."""


class ModelError(BessOpmError):
    """The electro-thermal model was driven into an undefined state."""


class ConfigError(BessOpmError, ValueError):
    """A configuration or scenario failed validation.

    ``path`` holds the dotted key path of the offending entry when known.
    """

    def __init__(self, message, path=None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class SolverError(BessOpmError):
    """A solver could not make progress (e.g. every particle diverged)."""


class SimulationFault(BessOpmError):
    """Unrecoverable fault inside the closed-loop simulation."""
