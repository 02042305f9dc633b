"""Exception types shared across the pipeline."""


class ChargeError(Exception):
    """Base class for all toolkit errors."""


# -- corpus --------------------------------------------------------------

class EmptyBundle(ChargeError):
    """Document bundle has no text and no charts."""


class UnreadableImage(ChargeError):
    """Chart image handle cannot be resolved."""


class DuplicateDocument(ChargeError):
    """A document with the same id already exists in the corpus."""


# -- providers -----------------------------------------------------------

class ProviderError(ChargeError):
    """Base class for provider-level failures."""


class BackendUnavailable(ProviderError):
    """Backend cannot serve the request (down, or no scripted response)."""


class RateLimited(ProviderError):
    """Backend kept rate-limiting after bounded retries."""


class TemplateSlotMissing(ProviderError):
    """A template placeholder has no value in the request slots."""


class UnknownTemplate(ProviderError):
    """No template file for the requested template id."""


class StructuredParseError(ProviderError):
    """Response could not be parsed as the expected JSON structure."""


# -- qa generation -------------------------------------------------------

class UnknownKeypoint(ChargeError):
    """Keypoint id not present in the index."""


class PoolExhausted(ChargeError):
    """No more valid keypoint combinations for a category."""

    def __init__(self, category: str, message: str = ""):
        self.category = category
        super().__init__(message or f"pool exhausted for category {category}")


# -- retrieval -----------------------------------------------------------

class DimensionMismatch(ChargeError):
    """Vectors of different dimensions offered to one store."""


class UnknownRef(ChargeError):
    """Reference id not present in the index."""


class EmptyIndex(ChargeError):
    """Search over an index with no entries."""


# -- review --------------------------------------------------------------

class RosterTooSmall(ChargeError):
    """Fewer than three reviewers available."""


class NoSuchAssignment(ChargeError):
    """Decision submitted without a matching open assignment."""


class AlreadySubmitted(ChargeError):
    """A decision for this (item, reviewer) pair already exists."""


class MissingRejectReason(ChargeError):
    """Reject verdict submitted without a reason."""


class IncompleteReviews(ChargeError):
    """finalize called while assignments are still open."""


class InsufficientDecisions(ChargeError):
    """Agreement statistic requested with no fully-reviewed items."""


class DegenerateAgreement(ChargeError):
    """Expected agreement is 1 but observed agreement is not."""


# -- cli -----------------------------------------------------------------

class ConfigInvalid(ChargeError):
    """Pipeline configuration failed validation."""


class MissingStageInput(ChargeError):
    """A stage was run before the stage that produces its input."""

    def __init__(self, path: str):
        self.path = path
        super().__init__(f"missing stage input: {path}")
