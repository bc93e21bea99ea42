"""
Exception hierarchy for the selection-dynamics toolkit.
Every error carries an exit code and a human readable detail, the CLI maps
them straight onto process exit codes.
"""
from typing import Any, Optional


class SeldynError(Exception):
    """Base error: `detail` is the message, `exit_code` the CLI status."""
    exit_code: int = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class InvalidArgumentError(SeldynError, ValueError):
    """Shape or argument violation in a library call."""
    exit_code = 2


class ConfigError(SeldynError):
    """Configuration document or referenced file is unusable."""
    exit_code = 2


class DivergenceError(SeldynError):
    """
    Forward state became non-finite or exceeded the divergence guard.

    Attributes:
        step: index of the first bad time step
        max_norm: sup-norm of the offending state (inf/nan allowed)
        partial: trajectory up to the last good step, if available
    """
    exit_code = 3

    def __init__(self, step: int, max_norm: float, partial: Optional[Any] = None):
        super().__init__(f"forward solve diverged at step {step} (max-norm {max_norm:.6g})")
        self.step = step
        self.max_norm = max_norm
        self.partial = partial


class NonConvergenceError(SeldynError):
    exit_code = 3


class PreconditionError(SeldynError):
    """An analysis hypothesis does not hold; the detail names which one."""
    exit_code = 4
