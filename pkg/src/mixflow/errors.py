"""Exception hierarchy shared by all mixflow modules."""


class MixflowError(Exception):
    """Base class for all package errors."""


class DomainError(MixflowError):
    """An evaluation point lies outside the admissible domain."""


class ConvergenceError(MixflowError):
    """An iterative solve failed to reach its tolerance.

    Carries the last residual so callers can report how far off it ended.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class BasisError(MixflowError):
    """A requested basis is singular or too ill-conditioned to dualise."""


class SpecError(MixflowError):
    """A model specification (e.g. a mobility base matrix) is inadmissible."""


class GridError(MixflowError):
    """A grid is too coarse or otherwise unusable."""


class LinearSolverError(MixflowError):
    """A direct banded/block solve hit a singular pivot."""


class StepSizeError(MixflowError):
    """Sub-stepping demanded more substeps than the configured cap."""


class PositivityError(MixflowError):
    """The total mass density lost strict positivity during a run."""


class UsageError(MixflowError):
    """Caller passed inconsistently shaped or otherwise unusable arguments."""


class ScenarioError(MixflowError):
    """A scenario file is unreadable or violates its validation rules.

    ``violations`` lists every broken invariant, not just the first.
    """

    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = list(violations)
