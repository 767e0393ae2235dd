"""Exception hierarchy shared across the pipeline.

Each class maps to a process exit code so the CLI can translate failures
uniformly: bad input data is 2, a provably infeasible model is 3, and a
broken internal invariant is 4.
"""
from __future__ import annotations

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_INFEASIBLE = 3
EXIT_INTERNAL = 4


class GridSynthError(Exception):
    """Base class for all package errors."""

    exit_code = EXIT_INTERNAL


class ValidationError(GridSynthError):
    """Input data violates a documented precondition or file schema."""

    exit_code = EXIT_VALIDATION


class InfeasibleError(GridSynthError):
    """An optimization model has no feasible solution."""

    exit_code = EXIT_INFEASIBLE


class InternalError(GridSynthError):
    """A solution violates an invariant the pipeline promised to uphold."""

    exit_code = EXIT_INTERNAL
