"""Exception hierarchy shared by the pipeline stages."""


class ReviewPulseError(Exception):
    pass


# ingest
class TokenRequired(ReviewPulseError):
    pass


class FixtureError(ReviewPulseError):
    pass


class FixtureMissing(FixtureError):
    def __init__(self, key: str):
        super().__init__(f"no recorded fixture for {key!r}")
        self.key = key


class RateLimitExhausted(ReviewPulseError):
    pass


class RepoNotFound(ReviewPulseError):
    pass


class PRNotFound(ReviewPulseError):
    pass


class DecodeError(ReviewPulseError):
    def __init__(self, key: str, message: str = ""):
        super().__init__(message or f"malformed payload: missing or invalid {key!r}")
        self.key = key


class UnsupportedContent(ReviewPulseError):
    pass


class CompareError(ReviewPulseError):
    pass


class InvalidPath(ReviewPulseError):
    pass


class HTTPError(ReviewPulseError):
    def __init__(self, status: int, key: str):
        super().__init__(f"HTTP {status} for {key}")
        self.status = status
        self.key = key


# reconstruct
class HunkParseError(ReviewPulseError):
    pass


class SliceError(ReviewPulseError):
    pass


class ApproximationError(ReviewPulseError):
    pass


class ReconstructionError(ReviewPulseError):
    pass


# addressing
class BackendFormatError(ReviewPulseError):
    pass


class BackendUnavailable(ReviewPulseError):
    pass


# features / model / stats
class FeatureError(ReviewPulseError):
    pass


class SplitError(ReviewPulseError):
    pass


class OracleTooLarge(ReviewPulseError):
    pass


class StageError(ReviewPulseError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
