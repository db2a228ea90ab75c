"""Exception taxonomy shared across the package."""

from __future__ import annotations


class PromptCalError(Exception):
    """Base class for all errors raised by this package."""


# --- gateway ---------------------------------------------------------------

class BackendUnavailable(PromptCalError):
    """Transport-level failure that persisted through the retry schedule."""


class RequestRejected(PromptCalError):
    """The backend (or request validation) rejected the request; not retried."""


class ScriptExhausted(PromptCalError):
    """A strict mock script had no response left for a request."""


class BatchRequestError(PromptCalError):
    """A batched dispatch failed; carries the index of the failing request."""

    def __init__(self, index: int, cause: Exception):
        super().__init__(f"request {index} failed: {cause}")
        self.index = index
        self.cause = cause


class BudgetExceeded(PromptCalError):
    """The usage ledger crossed a configured limit; no further calls allowed."""


# --- dataset ---------------------------------------------------------------

class InvalidRecord(PromptCalError):
    """A record violates its invariants (e.g. empty text)."""


class InvalidQuery(PromptCalError):
    """A semantic query was malformed (e.g. empty query list)."""


class CorruptDataset(PromptCalError):
    """A persisted dataset failed to parse; carries the 1-based line number."""

    def __init__(self, line_number: int, detail: str):
        super().__init__(f"line {line_number}: {detail}")
        self.line_number = line_number


# --- estimation ------------------------------------------------------------

class ParseError(PromptCalError):
    """A model answer did not follow the required output grammar."""


class EstimationParseError(ParseError):
    """A chunk stayed unparseable after the reprompt retry."""

    def __init__(self, chunk_index: int, raw_text: str):
        super().__init__(f"chunk {chunk_index} unparseable after retry: {raw_text!r}")
        self.chunk_index = chunk_index
        self.raw_text = raw_text


class AnnotationCancelled(PromptCalError):
    """A human annotation batch was cancelled before completion."""


# --- evaluation ------------------------------------------------------------

class IncompleteRecord(PromptCalError):
    """A record is missing a field required by the operation; carries the id."""

    def __init__(self, record_id: int, field: str):
        super().__init__(f"record {record_id} missing {field}")
        self.record_id = record_id
        self.field = field


# --- synthesis / prompt generation ------------------------------------------

class TemplateError(PromptCalError):
    """A template placeholder could not be resolved."""


class SynthesisParseError(ParseError):
    """No samples could be parsed from a generator answer."""


class PromptParseError(ParseError):
    """A proposed prompt could not be extracted from a generator answer."""


# --- configuration / orchestration ------------------------------------------

class ConfigError(PromptCalError):
    """A configuration value is missing, unknown, or violates an invariant."""


class StaleCheckpoint(PromptCalError):
    """A checkpoint does not match the configuration it is resumed under."""


class RunInterrupted(PromptCalError):
    """A run was interrupted after writing a checkpoint (test/ops hook)."""

    def __init__(self, checkpoint_path: str):
        super().__init__(f"interrupted; checkpoint at {checkpoint_path}")
        self.checkpoint_path = checkpoint_path


# --- annotation service ------------------------------------------------------

class UnknownBatch(PromptCalError):
    """No batch with the given id exists (HTTP 404 equivalent)."""


class LabelRejected(PromptCalError):
    """A submitted label is outside the batch schema (HTTP 422 equivalent)."""


class BatchConflict(PromptCalError):
    """Submission conflicts with a completed batch (HTTP 409 equivalent)."""
