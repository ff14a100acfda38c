"""Exception hierarchy shared across the toolkit.

Two branches matter for the CLI exit-code contract: DataFormatError (bad or
inconsistent inputs, exit code 2) and NumericError (solver or arithmetic
failure, exit code 3).
"""


class ResmemError(Exception):
    """Base class for all toolkit errors."""


class DataFormatError(ResmemError):
    """A file or in-memory structure violates its declared format."""


class NumericError(ResmemError):
    """A numeric computation failed (divergence, singularity, infeasibility)."""


# -- file / dataset errors ---------------------------------------------------

class BadMagic(DataFormatError):
    pass


class VersionUnsupported(DataFormatError):
    pass


class ShapeMismatch(DataFormatError):
    pass


class NonFiniteValue(DataFormatError):
    pass


class EmptySplit(DataFormatError):
    pass


# -- hyperparameter / model errors --------------------------------------------

class NonPositiveTemperature(DataFormatError):
    pass


class NonPositiveSigma(DataFormatError):
    pass


class EmptyMatrix(DataFormatError):
    pass


class TemperatureMismatch(DataFormatError):
    pass


# -- numeric failures ----------------------------------------------------------

class NonFiniteLoss(NumericError):
    pass


class SingularSystem(NumericError):
    pass


class NonPositiveMean(NumericError):
    pass


class NoFeasiblePoint(NumericError):
    pass
