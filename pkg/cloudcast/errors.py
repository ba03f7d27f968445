"""cloudcast exceptions"""


class CloudcastException(Exception):
    """General cloudcast exception."""
    pass


class ConfigError(CloudcastException):
    """A configuration or parameter document has invalid values."""
    pass


class TraceError(CloudcastException):
    """Usage events or trace series cannot be turned into demand."""
    pass


class DataError(CloudcastException):
    """A series cannot be scaled, windowed or split as requested."""
    pass


class ModelError(CloudcastException):
    """A model is misconfigured, untrained or fed the wrong shapes."""
    pass


class DivergenceError(ModelError):
    """Training produced a non-finite loss."""
    pass


class ScenarioError(CloudcastException):
    """A training scenario is invalid or lacks its datasets."""
    pass


class DegenerateTestError(CloudcastException):
    """A statistical test was given input without any variance."""
    pass


class ArtifactError(CloudcastException):
    """Run directory artifacts are inconsistent."""
    pass


class MissingArtifactError(ArtifactError):
    """A required artifact does not exist yet."""

    def __init__(self, path, command=None):
        self.path = path
        self.command = command
        message = "missing artifact '%s'" % (path,)
        if command:
            message += "; run '%s' first" % (command,)
        super().__init__(message)


class CloudcastNameError(CloudcastException):
    """Error to raise when an unknown command is called."""
    pass
