# Exception hierarchy for the cfmm simulator
from typing import Optional


class CfmmError(Exception):
    """Base class for every error raised by the simulator."""


class ConfigurationError(CfmmError, ValueError):
    """
    Scenario parameters that cannot be realised.

    Raised for invalid config files, infeasible serving clusters and
    beam exhaustion at an access point.
    """


class SingularSystemError(CfmmError, ArithmeticError):
    """Regularised solve requested with zero shift on a rank-deficient operator."""


class EigenConvergenceError(CfmmError, RuntimeError):
    """Jacobi sweeps did not drive the off-diagonal norm below tolerance."""

    def __init__(self, residual: float, sweeps: int):
        self.residual = residual
        self.sweeps = sweeps
        super().__init__(
            f"Jacobi eigensolver did not converge after {sweeps} sweeps "
            f"(off-diagonal norm {residual:.3e})"
        )


class BisectionError(CfmmError, RuntimeError):
    """The analytic upper bound on the power multiplier did not bracket the constraint."""


class ResultsWriteError(CfmmError, OSError):
    """Writing experiment results failed."""

    def __init__(self, path: str, reason: Optional[str] = None):
        self.path = path
        message = f"Could not write results to {path}"
        if reason:
            message += f": {reason}"
        super().__init__(message)
