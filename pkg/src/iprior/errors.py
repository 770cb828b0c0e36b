"""Exception types shared across the package.

The CLI maps these onto its exit codes, so raising the right type here is
part of the user-facing contract, not an implementation detail.
"""


class IpriorError(Exception):
    """Base class for all package errors."""


class ConfigError(IpriorError):
    """Run configuration is malformed or references unknown names."""


class DataSchemaError(IpriorError):
    """A CSV file does not match the declared column schema."""


class DataMismatchError(IpriorError):
    """Prediction-time data is incompatible with the fitted model."""


class NumericalFailure(IpriorError):
    """A likelihood or solve produced non-finite values.

    Carries enough state to reproduce the failure instead of papering
    over it with clamps.
    """

    def __init__(self, message, lam=None, psi=None, n=None):
        detail = message
        if lam is not None:
            detail += f" [lambda={list(lam)!r}, psi={psi!r}, n={n!r}]"
        super().__init__(detail)
        self.lam = None if lam is None else list(lam)
        self.psi = psi
        self.n = n


class FitError(IpriorError):
    """Every restart of an estimation run failed."""
