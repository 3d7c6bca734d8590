"""Exception hierarchy.

Configuration problems derive from :class:`ConfigError`; everything raised by a
numerical routine derives from :class:`NumericalError`. The CLI maps the two
families to distinct exit codes.
"""


class EngineError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(EngineError, ValueError):
    """Invalid user input (profile spec, parameters, run configuration)."""


class PowerOutOfRange(ConfigError):
    """Requested power lies outside ``[0, P*)``."""


class NumericalError(EngineError, ArithmeticError):
    """A numerical routine failed to deliver a result at the requested accuracy."""


class NonConvergent(NumericalError):
    """Quadrature refinement did not settle within ``max_levels``."""


class BracketFailure(NumericalError):
    """No sign change of the multiplier equation could be bracketed."""


class DegenerateProfile(NumericalError):
    """The profile has (numerically) no fluctuations in sqrt(T)."""


class StepFailure(NumericalError):
    """The adaptive step controller underflowed."""


class PositivityLoss(StepFailure):
    """A covariance state lost positive definiteness and step halving did not help."""


class NoConvergence(NumericalError):
    """Periodic-orbit search exhausted its cycle budget."""


class NotPeriodic(NumericalError):
    """A trajectory handed to cycle post-processing does not close on itself."""


class NotCarnotProfile(ConfigError):
    """The operation needs a two-level piecewise-constant temperature profile."""


class DegenerateCycle(NumericalError):
    """The cycle exchanges no net heat with the hot bath (e.g. T_h == T_c)."""


class UnstableStep(NumericalError):
    """Stochastic simulation blew up; the time step is too large."""
