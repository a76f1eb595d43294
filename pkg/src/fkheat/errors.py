"""Exception hierarchy shared by the library and the CLI.

Every class carries the process exit code the CLI uses when the error
escapes a run: 2 for input problems, 3 for numerical failures, 4 for a
failed acceptance suite.
"""
from __future__ import annotations

from typing import Optional


class FkheatError(Exception):
    """Base class. ``operation`` names the public operation that failed."""

    exit_code = 3

    def __init__(self, message: str, *, operation: Optional[str] = None) -> None:
        super().__init__(message)
        self.operation = operation

    def __str__(self) -> str:
        base = super().__str__()
        if self.operation:
            return f"[{self.operation}] {base}"
        return base


# ---------------------------------------------------------
# 입력 오류 (exit 2)
# ---------------------------------------------------------
class ConfigError(FkheatError):
    exit_code = 2

    def __init__(self, message: str, *, field: Optional[str] = None, operation: Optional[str] = None) -> None:
        super().__init__(message, operation=operation)
        self.field = field

    def __str__(self) -> str:
        base = super().__str__()
        if self.field:
            return f"{base} (field: {self.field})"
        return base


class AdmissibilityError(ConfigError, ValueError):
    """Hurst parameters violate a regime condition; ``condition`` names it."""

    def __init__(self, condition: str, *, operation: Optional[str] = None) -> None:
        super().__init__(f"inadmissible Hurst parameters: {condition}", field="hurst", operation=operation)
        self.condition = condition


class LadderError(ConfigError):
    pass


class RecordError(FkheatError):
    exit_code = 2

    def __init__(self, message: str, *, line_no: Optional[int] = None) -> None:
        super().__init__(message)
        self.line_no = line_no


# ---------------------------------------------------------
# 수치 오류 (exit 3)
# ---------------------------------------------------------
class DegenerateGridError(FkheatError, ValueError):
    pass


class UnsupportedGridError(FkheatError, ValueError):
    pass


class DegeneratePathError(FkheatError, ValueError):
    pass


class FactorizationError(FkheatError):
    def __init__(self, message: str, *, dimension: int, operation: Optional[str] = None) -> None:
        super().__init__(message, operation=operation)
        self.dimension = dimension


class MemoryBudgetError(FkheatError):
    pass


class TruncationDomainError(FkheatError):
    pass


class UnsupportedKernelError(FkheatError):
    pass


class DomainError(FkheatError, ValueError):
    pass


class QuadratureError(FkheatError):
    pass


class StudyAbortedError(FkheatError):
    pass


class AcceptanceFailure(FkheatError):
    exit_code = 4
