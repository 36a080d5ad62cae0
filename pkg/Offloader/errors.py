"""
Errors Module - Exception types shared across the offloading toolkit

The CLI maps these onto process exit codes: configuration problems exit
with 2, unreadable or malformed data with 3.
"""

from typing import List, Optional


class OffloaderError(Exception):
    """Base class for all toolkit errors"""

    exit_code = 1


class ConfigError(OffloaderError, ValueError):
    """Invalid or unknown configuration values"""

    exit_code = 2


class CostModelError(ConfigError):
    """Cost parameters outside their normalized ranges or undefined rules"""


class DataError(OffloaderError):
    """
    Problems with a score trace or dataset

    Args:
        message: Summary of the problem
        issues: Individual findings, usually one per offending line
    """

    exit_code = 3

    def __init__(self, message: str, issues: Optional[List[str]] = None):
        self.issues = list(issues or [])
        if self.issues:
            message = message + "\n" + "\n".join(f"  - {issue}" for issue in self.issues)
        super().__init__(message)


class FeedbackError(OffloaderError):
    """A policy asked for the remote label on a round it did not offload"""


class HarnessError(OffloaderError, ValueError):
    """Trace and offline optimum were computed on different data"""
