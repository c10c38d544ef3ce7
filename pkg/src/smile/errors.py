"""Exception hierarchy shared by all smile modules.

Every error the package raises deliberately derives from SmileError so the
CLI can map error classes onto stable exit codes.
"""


class SmileError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SmileError):
    """Invalid configuration value; message names the offending field."""


class ConfigurationInfeasibleError(ConfigError):
    """A configuration is syntactically valid but cannot be satisfied
    (e.g. lesions cannot be placed inside the brain ellipse)."""


class InsufficientDataError(SmileError):
    """Too few samples for the requested operation."""


class DatasetFormatError(SmileError):
    """A dataset container file is malformed; message names the record."""


class UnknownFormatVersionError(DatasetFormatError):
    """A container declares a format version this code does not understand."""


class ContainerFormatError(SmileError):
    """A tensor container file is malformed or truncated."""


class ShapeError(SmileError):
    """Tensor shapes violate an operation's contract."""


class NonFiniteError(SmileError):
    """A NaN or Inf appeared in parameters, activations or losses."""


class TrainingDivergedError(NonFiniteError):
    """Training hit a non-finite loss.  Carries the last good checkpoint."""

    def __init__(self, message: str, last_good_checkpoint: str | None = None):
        super().__init__(message)
        self.last_good_checkpoint = last_good_checkpoint


class EvalSegmentorDegenerateError(SmileError):
    """The frozen evaluation segmentor finds no lesions in real abnormal
    images, so the healthiness ratio is undefined."""


class EvalSegmentorUndertrainedError(SmileError):
    """The evaluation segmentor failed to reach the minimum Dice score;
    metrics computed with it would be meaningless and are refused."""
