"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: configuration problems exit
with 1, violated runtime monitors with 2, infeasible instances with 3.
"""

from __future__ import annotations


class AdvCmdpError(Exception):
    """Base class for all package errors."""


class ConfigError(AdvCmdpError):
    """Invalid configuration, preset id, or constructor argument."""


class MonitorViolation(AdvCmdpError):
    """A hard runtime invariant failed (aborts the offending run)."""

    def __init__(self, message: str, episode: int | None = None):
        if episode is not None:
            message = f"episode {episode}: {message}"
        super().__init__(message)
        self.episode = episode


class InternalConsistencyError(MonitorViolation):
    """Numerical state drifted past tolerances (e.g. negative quadratic form)."""


class InfeasibleError(AdvCmdpError):
    """The constrained instance has no policy meeting the cost budget."""
