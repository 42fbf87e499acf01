class FormatError(ValueError):
    """Malformed or inconsistent on-disk data."""


class TruncatedPayloadError(FormatError):
    """File ended before the declared payload."""


class CalibrationError(ValueError):
    """A fit could not be carried out; ``diagnostics`` says why."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
