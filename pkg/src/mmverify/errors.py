"""Exception hierarchy shared by the pipeline stages."""


class MMVerifyError(Exception):
    """Base class for every error raised by this package."""


class GatewayError(MMVerifyError):
    pass


class TransportError(GatewayError):
    """Network failure that persisted through the retry budget."""


class RateLimited(GatewayError):
    """The provider kept rate limiting until the retry budget ran out."""


class FixtureMissing(GatewayError):
    """Replay mode found no recording for a request digest."""


class MalformedResponse(GatewayError):
    """The provider answered with a payload that could not be decoded."""


class OfflineViolation(MMVerifyError):
    """A network call was attempted while running offline."""


class ParseFailure(MMVerifyError):
    """Model output could not be parsed, even after a repair attempt."""


class ProviderUnavailable(MMVerifyError):
    """A search provider failed for every query it was given."""


class ProviderTimeout(ProviderUnavailable):
    pass


class FetchFailure(MMVerifyError):
    """A page could not be fetched or is not HTML."""


class ConfigError(MMVerifyError):
    pass


class MalformedRecord(MMVerifyError):
    """A dataset line that cannot become a post; ``reason`` is a short code."""

    def __init__(self, reason: str, message: str = ""):
        super().__init__(message or reason)
        self.reason = reason


class FileUnreadable(MMVerifyError):
    pass


class LengthMismatch(MMVerifyError, ValueError):
    pass


class IdSetMismatch(MMVerifyError, ValueError):
    pass
