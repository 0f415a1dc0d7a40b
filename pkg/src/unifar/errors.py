"""Exception hierarchy shared across the package."""


class UnifarError(Exception):
    """Base class for all errors raised by this package."""


# ---------------------------------------------------------------- encoding

class EmptyInput(UnifarError):
    """No non-empty sentence could be produced from the raw input."""


class TitleOverflow(UnifarError):
    """The title alone exceeds the encoder's maximum sequence length."""


class EncoderFailure(UnifarError):
    """The base encoder backend failed; the original error is chained."""


class EmptyBoundary(UnifarError):
    """A sentence span contains zero tokens and cannot be pooled."""


# --------------------------------------------------------------- retrieval

class ZeroVector(UnifarError):
    """Cosine similarity was requested on an all-zero embedding."""


class FacetOutOfRange(UnifarError):
    """A facet index is outside [0, n_facet)."""


class DuplicateId(UnifarError):
    """Two candidates with the same id were added to an index."""


class ShapeMismatch(UnifarError):
    """Array shapes are inconsistent with the index or each other."""


# ---------------------------------------------------------------- training

class NoPositives(UnifarError):
    """A contrastive batch has no positive embeddings."""


class MissingQuestion(UnifarError):
    """The FTU carries no question for the requested facet."""


class BranchMismatch(UnifarError):
    """Attention alignment requires a sentence-branch map."""


class UnknownLabel(UnifarError):
    """A sentence label is not one of the configured facet names."""


class NonFiniteLoss(UnifarError):
    """Training produced a NaN/inf loss; carries the offending FTU id."""

    def __init__(self, message: str, ftu_id: str | None = None):
        super().__init__(message)
        self.ftu_id = ftu_id


# ------------------------------------------------------- data construction

class PosNegConflict(UnifarError):
    """A document appears as both positive and negative for one (query, facet)."""

    def __init__(self, message: str, offending_ids: tuple[str, ...] = ()):
        super().__init__(message)
        self.offending_ids = offending_ids


class ParseError(UnifarError):
    """An LLM response could not be parsed or aligned after all retries."""


class CategoryError(UnifarError):
    """An LLM label is outside the facet schema."""


class EmptyFacetText(UnifarError):
    """The query document has no sentences labeled with the requested facet."""


class ValidationError(UnifarError):
    """An FTU violates its invariants; carries the offending field path."""

    def __init__(self, message: str, field_path: str = ""):
        super().__init__(f"{field_path}: {message}" if field_path else message)
        self.field_path = field_path


# --------------------------------------------------------------- evaluation

class NoRelevant(UnifarError):
    """A query has no relevant candidates; it is excluded from macro averages."""


class MissingCandidate(UnifarError):
    """A query's candidate pool references ids absent from the index."""

    def __init__(self, message: str, missing_ids: tuple[str, ...] = ()):
        super().__init__(message)
        self.missing_ids = missing_ids
