"""Exception hierarchy shared by the library and the CLI.

Each error carries the process exit code the CLI uses for it and, where a
search or a ledger was interrupted, the partial report.
"""

from __future__ import annotations

from typing import Any, Optional


class UnrectError(Exception):
    exit_code: int = 1

    def __init__(self, message: str, report: Optional[Any] = None) -> None:
        super().__init__(message)
        self.report = report


class GuardError(UnrectError, ValueError):
    """A parameter or invariant guard was violated."""

    exit_code = 2


class DomainError(GuardError):
    """Points (or a rotated chart) leave the declared chart domain."""


class CoverError(GuardError):
    def __init__(self, message: str, uncovered: int = 0, report: Optional[Any] = None) -> None:
        super().__init__(message, report=report)
        self.uncovered = uncovered


class InfeasibleError(UnrectError):
    """A constructive search found nothing admissible."""

    exit_code = 3


class BudgetError(UnrectError):
    """A ledger bound or a two-sided consistency check failed."""

    exit_code = 4


class SupportOverlapError(BudgetError):
    pass
