"""Exception types shared across the toolkit.

``DepthHintsError`` covers bad inputs, bad files, and bad configuration
(CLI exit code 2). ``NumericalError`` covers non-finite values arising
during computation, e.g. a diverged training loss (CLI exit code 3).
"""


class DepthHintsError(Exception):
    """Invalid input, file, or configuration."""


class FormatError(DepthHintsError):
    """A file does not conform to its declared on-disk format."""


class NumericalError(DepthHintsError):
    """A computation produced a non-finite value."""
