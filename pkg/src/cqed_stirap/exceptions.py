"""Exception types raised by the simulation and analysis routines."""


class StirapError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(StirapError, ValueError):
    """Parameters or inputs violate a model invariant.

    ``diagnostics`` holds the individual violation messages.
    """

    def __init__(self, diagnostics):
        if isinstance(diagnostics, str):
            diagnostics = [diagnostics]
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


class IntegrationError(StirapError):
    """The ODE integrator could not complete the requested span."""

    def __init__(self, message, t_fail=None):
        self.t_fail = t_fail
        if t_fail is not None:
            message = f"{message} (t = {t_fail:.6g})"
        super().__init__(message)


class ConvergenceError(StirapError):
    """Newton iteration did not reach the requested residual."""

    def __init__(self, message, residual_norm=None):
        self.residual_norm = residual_norm
        super().__init__(message)


class SingularJacobianError(ConvergenceError):
    def __init__(self, message, condition):
        self.condition = condition
        super().__init__(f"{message} (condition estimate {condition:.3g})")


class BranchLostError(StirapError):
    """Continuation could not follow the branch past ``last_ttilde``."""

    def __init__(self, message, last_ttilde, partial=None):
        self.last_ttilde = last_ttilde
        self.partial = partial
        super().__init__(f"{message}; last good t~ = {last_ttilde:.6g}")


class NormDriftError(StirapError):
    def __init__(self, drift, t):
        self.drift = drift
        self.t = t
        super().__init__(f"state norm drifted by {drift:.3g} at t = {t:.6g}")
