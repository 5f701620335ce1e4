"""Exception types shared across the package.

Every error carries a stable machine-readable ``code`` so the service layer
can map failures onto HTTP responses without string matching.
"""

from __future__ import annotations


class ConceptLinkError(Exception):
    """Base class for all errors raised by this package."""

    code = "error"


class MalformedRow(ConceptLinkError):
    """A delimited input file contains a row that cannot be parsed."""

    code = "malformed_row"

    def __init__(self, path: str, row: int, reason: str):
        super().__init__(f"{path}: row {row}: {reason}")
        self.path = path
        self.row = row
        self.reason = reason


class DuplicateConcept(ConceptLinkError):
    """Two concept rows share an identifier that must be unique."""

    code = "duplicate_concept"

    def __init__(self, path: str, row: int, reason: str):
        super().__init__(f"{path}: row {row}: {reason}")
        self.path = path
        self.row = row
        self.reason = reason


class DanglingReference(ConceptLinkError):
    """A synonym, parent or relationship points at a missing concept."""

    code = "dangling_reference"


class NotFound(ConceptLinkError):
    """Lookup by identifier or code matched nothing."""

    code = "not_found"


class ProviderFailure(ConceptLinkError):
    """An embedding or completion provider failed or answered malformed data."""

    code = "provider_failure"


class InvalidEntry(ConceptLinkError):
    """A data-dictionary entry is unusable, e.g. its label is empty."""

    code = "invalid_entry"


class DecompositionFailure(ConceptLinkError):
    """The model never produced a parseable decomposition within the retry budget."""

    code = "decomposition_failure"


class OutOfRange(ConceptLinkError):
    """A relevance score falls outside the 1..10 scale."""

    code = "out_of_range"


class MissingRanking(ConceptLinkError):
    """Evaluation needs ranked candidates but the results carry no trace."""

    code = "missing_ranking"


class LengthMismatch(ConceptLinkError):
    """Paired sequences that must align have different lengths."""

    code = "length_mismatch"


class NotPending(ConceptLinkError):
    """A review decision was applied to an entry that is already final."""

    code = "not_pending"


class UnknownReview(ConceptLinkError):
    """No review entry exists under the given identifier."""

    code = "unknown_review"


class InvalidConcept(ConceptLinkError):
    """A reviewer-supplied concept does not exist in the vocabulary store."""

    code = "invalid_concept"


class InvalidRules(ConceptLinkError):
    """A linking-rules document is malformed or names unknown vocabularies."""

    code = "invalid_rules"


class BadPayload(ConceptLinkError):
    """A service request body failed validation."""

    code = "bad_payload"
