"""
Errors Module - Exception hierarchy shared by every service module.

Each exception carries the process exit code the command layer reports for it.
"""

from typing import Iterable, List, Optional


class QwdError(Exception):
    """Base class for every error raised by the services package."""

    exit_code = 1


# Input errors (exit 2)

class InputError(QwdError):
    exit_code = 2


class DimensionMismatchError(InputError):
    pass


class NonFiniteInputError(InputError):
    pass


class GuardExceededError(InputError):
    pass


class InvalidDistributionError(InputError):
    pass


class InvalidConfigError(InputError):
    pass


class CheckpointVersionError(InputError):
    pass


class ClassifierOutputError(InputError):
    pass


class MixedSignError(InputError):
    pass


class PointInsideBoxError(InputError):
    pass


class NonScalarLossError(InputError):
    pass


class NotPSDError(InputError):
    pass


class DualInfeasibleError(InputError):
    """A proposed dual vector violates Upsilon^T y <= C or b^T y >= 0."""

    def __init__(self, violations: Iterable[str]):
        self.violations: List[str] = list(violations)
        super().__init__("Dual vector is infeasible: " + "; ".join(self.violations))


# Infeasibility (exit 3)

class InfeasibleError(QwdError):
    exit_code = 3


class MassImbalanceError(InfeasibleError):
    def __init__(self, component: int, deficit: float):
        self.component = component
        self.deficit = deficit
        super().__init__(
            f"Mass imbalance in component {component}: "
            f"P_r total minus P_g total is {deficit:.3e}."
        )


class ComponentInfeasibleError(InfeasibleError):
    def __init__(self, component: int, detail: Optional[str] = None):
        self.component = component
        message = f"Component {component} system Upsilon x = b({component}), x >= 0 is infeasible."
        if detail:
            message += f" {detail}"
        super().__init__(message)


# Numeric abort (exit 4)

class NumericAbortError(QwdError):
    exit_code = 4


# Check failure (exit 5)

class CheckFailedError(QwdError):
    exit_code = 5


# Internal solver failures (exit 1)

class SolverError(QwdError):
    exit_code = 1


class FarkasAlternativeError(SolverError):
    pass
