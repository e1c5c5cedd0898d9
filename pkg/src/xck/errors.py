"""Exception hierarchy shared by the kinetics engine and the CLI."""


class XckError(Exception):
    """Base class for all errors raised by this package."""


class WindowMismatchError(XckError, ValueError):
    """Two lattice objects live on different windows."""


class NegativeDensityError(XckError, ValueError):
    """A density entry is below the negativity tolerance."""


class KernelError(XckError, ValueError):
    """Invalid kernel parameters, certificates or specs."""


class KernelPositivityError(KernelError):
    """A kernel value vanished where strict positivity is required."""


class EmptyFugacityIntervalError(XckError):
    """The admissible fugacity interval of a kernel is empty."""


class LimitNotCauchyError(XckError):
    """A ratio sequence has not settled at the requested probe depth."""


class PartitionDivergenceError(XckError):
    """The partition series does not converge within the index budget."""


class SupercriticalChargeError(XckError):
    """The requested charge lies outside the bracketed charge interval."""


class IntegrationError(XckError, RuntimeError):
    """Time integration could not proceed."""


class StepSizeUnderflowError(IntegrationError):
    """Step halving exhausted while rejecting negative states."""


class NonFiniteStateError(IntegrationError):
    """NaN or Inf appeared in the state."""


class PreconditionError(XckError, ValueError):
    """An operation was called outside its documented preconditions."""


class ConfigError(XckError, ValueError):
    """Scenario configuration could not be parsed or validated."""
