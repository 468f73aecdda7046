"""
Error types and exit-code contract
"""
from typing import Dict, Type

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_INVARIANT = 3


class BurstFuseError(Exception):
    """Base class for every error raised by burstfuse"""
    exit_code = EXIT_INVARIANT


class UsageError(BurstFuseError, ValueError):
    """Bad command line, unknown config key or mistyped config value"""
    exit_code = EXIT_USAGE


class InputError(BurstFuseError, OSError):
    """Unreadable or malformed input file or directory"""
    exit_code = EXIT_IO


class InvariantError(BurstFuseError, ValueError):
    """A data invariant was violated by otherwise readable inputs"""
    exit_code = EXIT_INVARIANT


class MissingSidecarField(InputError):
    def __init__(self, path: str, field: str):
        super().__init__(f"{path}: sidecar is missing required field '{field}'")
        self.field = field


class OddDimensions(InputError):
    def __init__(self, path: str, width: int, height: int):
        super().__init__(f"{path}: dimensions {width}x{height} are not even (whole Bayer quads required)")


class UnsupportedBitDepth(InputError):
    def __init__(self, path: str, detail: str):
        super().__init__(f"{path}: unsupported bit depth ({detail}); 16-bit single channel expected")


class UnsupportedPattern(InputError):
    def __init__(self, path: str, pattern: str):
        super().__init__(f"{path}: CFA pattern '{pattern}' is not supported (RGGB only)")


class DimensionMismatch(InvariantError):
    pass


class EmptyBurst(InvariantError):
    pass


class OffsetTooLarge(InvariantError):
    pass


def exit_code_for(error: BaseException) -> int:
    """Map an exception to the CLI exit code"""
    if isinstance(error, BurstFuseError):
        return error.exit_code
    for error_type, code in _BUILTIN_CODES.items():
        if isinstance(error, error_type):
            return code
    return EXIT_INVARIANT


_BUILTIN_CODES: Dict[Type[BaseException], int] = {
    FileNotFoundError: EXIT_IO,
    PermissionError: EXIT_IO,
    OSError: EXIT_IO,
}
