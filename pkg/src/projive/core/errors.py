"""Exception hierarchy for projive.

Every library failure derives from `ProjiveError` and from the builtin
exception that best describes it, so callers can catch either.
"""

from __future__ import annotations

from typing import Any


class ProjiveError(Exception):
    """Base class for all projive errors."""


class ShapeError(ProjiveError, ValueError):
    """Matrix dimensions are inconsistent with each other or with a layout."""


class RankError(ProjiveError, ValueError):
    """Requested ranks are invalid for the data dimensions."""


class SingularMatrixError(ProjiveError, ValueError):
    """A covariance or moment matrix is numerically singular."""


class PreprocessError(ProjiveError, ValueError):
    """Preprocessing cannot be applied to the data as given."""


class MonotonicityError(ProjiveError, RuntimeError):
    """An EM step decreased the log-likelihood beyond the allowed slack."""


class CalibrationError(ProjiveError, RuntimeError):
    """The R-squared scale constants could not be solved.

    Attributes:
        diagnostics: Trace coefficients of the calibration equations.
    """

    def __init__(self, message: str, diagnostics: dict[str, Any] | None = None) -> None:
        """Initialize with a message and the solver diagnostics.

        Args:
            message: Human-readable description.
            diagnostics: Trace coefficients and the last iterate.
        """
        super().__init__(message)
        self.diagnostics = diagnostics or {}
