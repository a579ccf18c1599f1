"""Exception types shared across the package.

Every error raised on a contract violation derives from GeomoeaError so
callers (and the HTTP layer) can map failures to structured responses
without matching on message text.
"""

from __future__ import annotations


class GeomoeaError(Exception):
    """Base class for all package-specific failures."""


class InvalidConfigError(GeomoeaError):
    """A configuration value violates its documented constraint."""


class ParseError(GeomoeaError):
    """An input file could not be parsed."""

    def __init__(self, message: str, *, row: int | None = None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class DomainTooSmallError(GeomoeaError):
    """The location universe has fewer points than an operation needs."""


class CellInfeasibleError(GeomoeaError):
    """No valid protection sets exist for a cell under the given budget."""

    def __init__(self, cell_id: int, message: str):
        super().__init__(f"cell {cell_id}: {message}")
        self.cell_id = cell_id


class DegeneratePlsError(GeomoeaError):
    """A protection set has zero diameter, so no reporting law exists."""


class UnreachableOutputError(GeomoeaError):
    """A reported location has zero marginal probability under the prior."""


class NoIdleWorkerError(GeomoeaError):
    """A task arrived while every worker was busy."""
