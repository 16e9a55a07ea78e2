"""Exception hierarchy shared across the package."""


class AnalogyLabError(Exception):
    pass


class ValidationError(AnalogyLabError, ValueError):
    """Bad configuration or arguments."""


class ShapeError(ValidationError):
    pass


class DegeneratePair(AnalogyLabError, ArithmeticError):
    """Two features are too close for their difference to be normalised."""


class NumericalError(AnalogyLabError, ArithmeticError):
    """A loss or gradient became non-finite."""


class ExhaustionError(AnalogyLabError):
    """No admissible sample exists (empty support or pool too small)."""


class FormatError(AnalogyLabError):
    """Base class for binary file problems."""


class BadMagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass
