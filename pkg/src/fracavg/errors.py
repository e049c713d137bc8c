"""Exception hierarchy shared by the numerical modules and the CLI."""

from __future__ import annotations


class FracAvgError(Exception):
    """Base class for all errors raised by :mod:`fracavg`."""


class NumericalDomainError(FracAvgError, ValueError):
    """An argument lies outside the domain where a routine is defined."""


class MLDomainError(NumericalDomainError):
    """Mittag-Leffler argument exceeds the configured series domain bound."""


class MLConvergenceError(FracAvgError, ArithmeticError):
    """The Mittag-Leffler series hit its term cap before the stopping test fired."""


class SingularGramianError(FracAvgError):
    """The averaged Gramian is not invertible at the configured tolerance."""


class CGBreakdownError(FracAvgError, ArithmeticError):
    """Conjugate gradient met a non-positive curvature ``p^T G p``."""


class EnsembleError(FracAvgError, ValueError):
    """Invalid ensemble or distribution specification."""


class ConfigError(FracAvgError, ValueError):
    """A run configuration could not be parsed or validated."""
