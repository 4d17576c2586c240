"""Exception hierarchy shared by every stage of the pipeline."""


class Sketch2StatueError(Exception):
    """Base class for all library errors."""


class InvalidInputError(Sketch2StatueError, ValueError):
    """An argument violates a documented precondition."""


class ShapeMismatchError(InvalidInputError):
    """Arrays that must agree in shape do not."""


class MeshParseError(Sketch2StatueError):
    """A mesh or point-cloud file could not be parsed."""


class UnsupportedFormatError(MeshParseError):
    pass


class ExternalToolError(Sketch2StatueError):
    """An external sketch translator failed.

    ``diagnostics`` carries the captured stdout/stderr of the subprocess.
    """

    def __init__(self, message, diagnostics=""):
        super().__init__(message)
        self.diagnostics = diagnostics


class DataError(Sketch2StatueError):
    """Dataset files are missing, inconsistent or malformed."""


class DisjointnessError(InvalidInputError):
    """A statue would leak between training and evaluation splits."""


class CheckpointError(Sketch2StatueError):
    """A checkpoint cannot be read or does not match the requested config."""


class TrainingError(Sketch2StatueError):
    """Training aborted (e.g. non-finite loss)."""
