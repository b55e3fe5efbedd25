"""
pvgan — Exception hierarchy

Every error raised on purpose by the package derives from PVGANError so the
CLI can map it to an exit code in one place.
"""

from typing import Optional


class PVGANError(Exception):
    """Base class for all pvgan errors."""

    exit_code = 2


class ContractViolation(PVGANError, ValueError):
    """A caller broke an operation's precondition (lengths, shapes, condition sets)."""

    exit_code = 1


class ConfigError(PVGANError, ValueError):
    """Invalid configuration value. `key` is the dotted path of the offending entry."""

    exit_code = 1

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


class FormatError(PVGANError):
    """Malformed grid, checkpoint or results file."""

    exit_code = 3

    def __init__(self, message: str, path=None, offset: Optional[int] = None):
        self.path = path
        self.offset = offset
        where = ""
        if path is not None:
            where += f" in {path}"
        if offset is not None:
            where += f" at byte {offset}"
        super().__init__(f"{message}{where}")


class VersionMismatch(FormatError):
    def __init__(self, found: int, expected: int, path=None):
        self.found = found
        self.expected = expected
        super().__init__(
            f"checkpoint version {found} found, version {expected} expected", path=path, offset=6
        )


class NumericError(PVGANError, ArithmeticError):
    """Non-finite loss or gradient."""

    exit_code = 2

    def __init__(self, message: str, step: Optional[int] = None, layer: Optional[int] = None):
        self.step = step
        self.layer = layer
        parts = [message]
        if step is not None:
            parts.append(f"step={step}")
        if layer is not None:
            parts.append(f"layer={layer}")
        super().__init__(" ".join(parts))
