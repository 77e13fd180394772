"""Exception hierarchy shared by the codec, the trainer and the CLI.

Every error carries the process exit code the CLI should use for it.
"""

from __future__ import annotations

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_PARSE = 3
EXIT_CONFIG_MISMATCH = 4
EXIT_CORRUPT = 5
EXIT_VERIFY = 6


class HintError(RuntimeError):
    exit_code = EXIT_FAILURE

    frame_index: int | None = None

    def at_frame(self, frame_index: int) -> "HintError":
        """Tag the error with the sequence position it was raised at."""
        if self.frame_index is None:
            self.frame_index = frame_index
            self.add_note(f"while coding frame {frame_index}")
        return self


class OutOfRangeError(HintError):
    """A coordinate or Morton key does not fit the per-level bit budget."""


class InconsistentPayloadError(HintError):
    """The same voxel was given two different payload codes."""


class EmptyLevelError(HintError):
    pass


class DepthMismatchError(HintError):
    pass


class ShapeError(HintError):
    pass


class IdOutOfRangeError(HintError):
    pass


class OptimizerStateError(HintError):
    pass


class ContractError(HintError):
    pass


class InvalidProbabilityError(HintError):
    pass


class ConfigError(HintError):
    exit_code = EXIT_PARSE


class ConfigMismatchError(HintError):
    exit_code = EXIT_CONFIG_MISMATCH

    def __init__(self, message: str, fields: list[str] | tuple[str, ...] = ()):
        super().__init__(message)
        self.fields = tuple(fields)


class CorruptStreamError(HintError):
    exit_code = EXIT_CORRUPT


class CorruptLevelError(CorruptStreamError):
    pass


class CorruptPyramidError(CorruptStreamError):
    pass


class BadMagicError(CorruptStreamError):
    pass


class UnsupportedVersionError(CorruptStreamError):
    pass


class CheckpointError(HintError):
    exit_code = EXIT_CORRUPT


class TrainingDivergedError(HintError):
    pass


class PlyParseError(HintError):
    exit_code = EXIT_PARSE


class VerificationError(HintError):
    exit_code = EXIT_VERIFY
