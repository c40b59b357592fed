from typing import List, Optional


class NeatestError(Exception):
    """Base class for all errors raised by the generator"""


class GameSpecError(NeatestError):
    """Syntax or semantic error in a game document, with its source position"""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.message = message
        self.line = line
        self.column = column
        location = f"{line}:{column}: " if line is not None else ""
        super().__init__(f"{location}{message}")


class SpecValidationError(NeatestError):
    """A parsed game violates one or more GameSpec invariants"""

    def __init__(self, issues: List["object"]):
        self.issues = issues
        summary = "; ".join(f"{issue.block_id or '-'}: {issue.message}" for issue in issues[:5])
        super().__init__(f"{len(issues)} validation issue(s): {summary}")


class UnknownSpriteError(NeatestError):
    pass


class UnknownColorError(NeatestError):
    pass


class InvalidRangeError(NeatestError):
    pass


class UnknownNodeError(NeatestError):
    pass


class CycleError(NeatestError):
    pass


class FitnessError(NeatestError):
    pass


class StatisticsError(NeatestError):
    pass


class GenomeError(NeatestError):
    """A genome cannot be built or violates a structural invariant"""
