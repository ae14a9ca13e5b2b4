class FreqCertError(Exception):
    """Base class for errors raised by this package."""


class ParseError(FreqCertError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DegenerateCloudError(FreqCertError, ValueError):
    pass


class InsufficientBandSupport(FreqCertError, ValueError):
    code = "insufficient_band_support"

    def __init__(self, band, available, needed):
        self.band = band
        self.available = available
        self.needed = needed
        super().__init__(
            f"{self.code}: band {band} has {available} points with nonzero weight, "
            f"{needed} required"
        )


class EigenSolverError(FreqCertError, RuntimeError):
    pass


class ConfigError(FreqCertError, ValueError):
    pass
