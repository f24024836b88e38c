"""Exception types shared across the library.

Every failure mode a caller is expected to branch on gets its own class;
anything else is allowed to surface as a plain ValueError from numpy.
"""


class PrescurvError(Exception):
    """Base class for all library-specific errors."""


class InvalidShape(PrescurvError):
    """Grid construction parameters violate the shape/dimension floor."""


class KindMismatch(PrescurvError):
    """Interior field supplied where a boundary field is required, or vice versa."""


class NoBoundary(PrescurvError):
    """Boundary operation requested on a manifold without boundary."""


class DimensionMismatch(PrescurvError):
    """Operation restricted to a specific dimension (e.g. surface operators need dim 2)."""


class IncompatibleRHS(PrescurvError):
    """Singular linear system whose right-hand side violates the compatibility condition."""

    def __init__(self, message, defect=None):
        super().__init__(message)
        self.defect = defect


class NoConvergence(PrescurvError):
    """Iterative solver exhausted its budget."""

    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class NonPositiveInput(PrescurvError):
    """A field that must be strictly positive is not."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class SlackTooLarge(PrescurvError):
    """Additive slack destroys the negative-mean precondition of the upper construction."""


class VerificationFailed(PrescurvError):
    """An a-posteriori inequality check failed at some node."""

    def __init__(self, message, node=None, margin=None):
        super().__init__(message)
        self.node = node
        self.margin = margin


class NotNontrivial(PrescurvError):
    """A candidate lower solution is identically zero."""


class NoPositiveRegion(PrescurvError):
    """No admissible local domain exists (the target function is nowhere positive)."""


class NonPositiveMultiplier(PrescurvError):
    """The local constrained minimization produced a non-coercive multiplier."""

    def __init__(self, message, multiplier=None):
        super().__init__(message)
        self.multiplier = multiplier


class GluingFailed(PrescurvError):
    """All gluing retries exhausted; carries the best margin achieved."""

    def __init__(self, message, best_margin=None):
        super().__init__(message)
        self.best_margin = best_margin


class MonotonicityViolated(PrescurvError):
    """An iterate escaped the ordered interval of the comparison principle."""

    def __init__(self, message, step=None, node=None, margin=None):
        super().__init__(message)
        self.step = step
        self.node = node
        self.margin = margin


class SmallnessBudgetExceeded(PrescurvError):
    """Boundary data too large for the Robin iteration envelope."""

    def __init__(self, message, sup_h=None, budget=None):
        super().__init__(message)
        self.sup_h = sup_h
        self.budget = budget


class CollapsedToZero(PrescurvError):
    """Monotone iteration limit fell below the positivity floor."""


class NecessaryConditionViolated(PrescurvError):
    """Prescribed curvature function fails the sign-change / negative-mean test."""


class BisectionFailed(PrescurvError):
    """Feasibility bisection could not bracket or close on a root."""


class LineSearchStalled(PrescurvError):
    """Backtracking line search could not produce an acceptable step."""


class DegenerateMultiplier(PrescurvError):
    """Constraint multiplier numerically zero (constant-minimizer corner case)."""


class SignCaseMismatch(PrescurvError):
    """Measured eigenvalue sign disagrees with the requested scenario case."""


class CShrinkExhausted(PrescurvError):
    """The boundary-coupling constant was halved to exhaustion without certifying."""


class UnsupportedBackground(PrescurvError):
    """Background coefficient outside the supported model family."""


class ConfigError(PrescurvError):
    """Malformed or incomplete run configuration."""
