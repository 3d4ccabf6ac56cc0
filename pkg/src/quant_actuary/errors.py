"""Exception hierarchy shared by all quant_actuary modules."""


class QuantActuaryError(Exception):
    """Base class for every error raised by this package."""


class UsageError(QuantActuaryError, ValueError):
    """Invalid arguments: bad qubit index, wrong parameter count, out-of-range constant."""


class CapacityError(QuantActuaryError):
    """A register or enumeration exceeds its configured size cap."""


class ValidationError(QuantActuaryError, ValueError):
    """Input data violates a documented precondition (normalization, zero matrix, ...)."""


class CalibrationError(QuantActuaryError):
    """Estimated readout confusion matrix is singular or not diagonally dominant."""


class NumericalError(QuantActuaryError, ArithmeticError):
    """Non-finite objective, quadrature or iteration failure."""


class IngestionError(QuantActuaryError, ValueError):
    """Malformed mortality input file."""


class AllShotsExcluded(QuantActuaryError):
    """Postselection discarded every shot; callers may resample."""
