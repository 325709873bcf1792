"""Exception types raised by the solver."""


class ParameterError(ValueError):
    """Model parameters violate an admissibility bound."""


class DomainError(ValueError):
    """A state (w, m) or dual point lies outside the region where a formula applies."""


class ConvergenceError(RuntimeError):
    """A root finder, iteration, or integrator failed to converge."""


class ShootingError(ConvergenceError):
    """Backward shooting for the free-boundary curve failed.

    The partial trajectory is attached as ``trajectory`` (an (n, 2) array of
    (m, z) pairs) so callers can dump it for inspection.
    """

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class FormSwitch(ArithmeticError):
    """The requested form of the free-boundary ODE is ill-conditioned here.

    Raised by ``ode_rhs`` when the denominator vanishes (use the Abel form) and
    by ``abel_rhs`` when the numerator vanishes (use the z-form).
    """


class SimulationError(RuntimeError):
    """Too many Monte Carlo paths produced non-finite wealth."""
