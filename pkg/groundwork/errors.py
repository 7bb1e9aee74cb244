class GroundworkError(Exception):
    pass


class CloudFormatError(GroundworkError):
    """Raised when an XYZ file can not be parsed. ``line`` is 1-based."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        if line is not None:
            message = f"{path}:{line}: {message}"
        super().__init__(message)


class NoGroundDataError(GroundworkError):
    def __init__(self, message="no ground data"):
        if "no ground data" not in message:
            message = "no ground data: " + message
        super().__init__(message)


class GridBoundsError(GroundworkError):
    pass


class DomainError(GroundworkError):
    pass


class DuplicateSiteError(GroundworkError):
    pass


class SystemTooLargeError(GroundworkError):
    pass


class SingularSystemError(GroundworkError):
    pass


class IllConditionedError(GroundworkError):
    pass


class IllConditionedWarning(UserWarning):
    pass


class ConfigError(GroundworkError):
    pass


class ArtifactError(GroundworkError):
    pass


class StageError(GroundworkError):
    """Wraps a failure with the name of the pipeline stage it came from."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"{stage}: {cause}")
