"""Exception types shared across fazekit.

The CLI maps these onto process exit codes (see ``fazekit.cli``).
"""


class FazeError(Exception):
    """Base class for all fazekit errors."""


class InvalidArgumentError(FazeError, ValueError):
    pass


class DegenerateInputError(InvalidArgumentError):
    """Input lies on a singularity of the requested transform."""


class NoIntersectionError(InvalidArgumentError):
    """A gaze ray never meets the target plane."""


class ConfigError(FazeError):
    pass


class FormatError(FazeError):
    """Malformed container file. ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset=None, path=None):
        self.offset = offset
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class VersionError(FormatError):
    pass


class DependencyError(FazeError):
    """A pipeline stage is missing an upstream artifact."""

    def __init__(self, stage, missing):
        self.stage = stage
        self.missing = missing
        super().__init__(f"stage '{stage}' requires missing artifact: {missing}")


class NumericalError(FazeError):
    """NaN or inf showed up during training or evaluation."""
