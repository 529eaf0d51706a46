"""Exception hierarchy.

Every error carries the ``module.operation`` that raised it so the command
line can report where a failure happened.
"""

from __future__ import annotations


class TimelessError(Exception):
    """Base class. ``where`` is a ``module.operation`` label."""

    exit_code = 2

    def __init__(self, where: str, message: str):
        self.where = where
        self.detail = message
        super().__init__(f"{where}: {message}")


class InputError(TimelessError, ValueError):
    exit_code = 1


class GeometryError(TimelessError):
    pass


class UnsupportedFeatureError(TimelessError):
    exit_code = 1


class EmptyPhysicalSpaceError(TimelessError):
    pass


class DegenerateRegionError(TimelessError):
    pass


class ResolutionError(TimelessError):
    pass


class NoClassicalLimitError(TimelessError):
    pass


class DegenerateCoarseGrainingError(TimelessError):
    pass


class UndefinedResidualError(TimelessError):
    pass


class ConditioningError(TimelessError):
    pass


class UndefinedPosteriorError(TimelessError):
    pass


class InapplicableScenarioError(TimelessError):
    exit_code = 1


class NumericError(TimelessError):
    pass


class CausticWarning(UserWarning):
    pass


class InstabilityWarning(UserWarning):
    pass


class DegenerateSampleWarning(UserWarning):
    pass
