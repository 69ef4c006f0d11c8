"""Exception hierarchy shared by all modules."""


class BDError(Exception):
    """Base class for errors raised by this package."""


class ModelError(BDError, ValueError):
    """Invalid coefficient model or model specification."""


class InvalidIndex(BDError, IndexError):
    pass


class IndexBeyondTable(InvalidIndex):
    """Tabulated coefficients requested past the table with no tail rule."""


class HypothesisViolation(ModelError):
    pass


class CriticalZ(ModelError):
    """The critical concentration z = z_s is outside the supported range."""


class NoNucleus(BDError):
    """No critical size brackets z.

    ``n_star`` is 1 when z is above every ratio b_i/a_i, otherwise None.
    """

    def __init__(self, message, n_star=None):
        super().__init__(message)
        self.n_star = n_star


class NonMonotone(BDError):
    pass


class SubcriticalRegime(BDError):
    """A quantity that only exists for z > z_s was requested with z < z_s."""


class SubcriticalRequired(BDError):
    """A quantity that only exists for z < z_s was requested with z > z_s."""


class NoConvergence(BDError):
    pass


class ScaleExceeded(BDError):
    pass


class TruncationDominates(BDError):
    pass


class TooFewSurvivors(BDError):
    pass


class AllExitedSimultaneously(BDError):
    pass


class IncompatibleSupports(BDError, ValueError):
    pass


class WindowTooShort(BDError, ValueError):
    pass


class InsufficientSamples(BDError, ValueError):
    pass


class CensoredSamplesPresent(BDError, ValueError):
    pass


class ConfigError(BDError, ValueError):
    pass
