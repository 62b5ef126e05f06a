"""Exception types shared across the package."""


class SpoofDetError(Exception):
    """Base class for all package errors."""


class UnreadableFile(SpoofDetError):
    """File is missing, corrupt, or not a supported audio container."""


class EmptyAudio(SpoofDetError):
    """Decoded audio contains zero samples."""


class AllSilent(SpoofDetError):
    """Silence trimming would remove every sample."""


class BadConfig(SpoofDetError):
    """A configuration object violates its invariants."""


class TooShort(SpoofDetError):
    """Input has too few frames for the requested transform."""


class ShapeMismatch(SpoofDetError):
    """Tensor shape does not match the operation's contract."""


class FrameMismatch(ShapeMismatch):
    """Feature maps disagree on their frame counts."""


class ChecksumMismatch(SpoofDetError):
    """Checkpoint content does not match the expected digest."""


class MissingTensors(SpoofDetError):
    """Checkpoint lacks tensors the encoder architecture requires."""


class MalformedLine(SpoofDetError):
    """A dataset protocol file has an unparseable line."""

    def __init__(self, path, line_no, reason):
        super().__init__(f"{path}:{line_no}: {reason}")
        self.path = path
        self.line_no = line_no
        self.reason = reason


class DuplicateId(SpoofDetError):
    """The same utterance id appears more than once."""


class SingleClass(SpoofDetError):
    """An operation requiring both classes received only one."""


class InsufficientRecords(SpoofDetError):
    """Not enough records to build the requested split."""


class NonFiniteLoss(SpoofDetError):
    """Training produced a NaN or infinite loss."""


class NotWhisperFrontend(SpoofDetError):
    """Fine-tuning requested on a front-end without an encoder."""


class EmptyHistory(SpoofDetError):
    """No completed epochs to select a checkpoint from."""


class IncompatibleCheckpoint(SpoofDetError):
    """Checkpoint arch/front-end tags do not match the run config."""


class ConfigInvalid(SpoofDetError):
    """Run configuration fails validation."""


class IoError(SpoofDetError):
    """Failed to write an output artifact."""
