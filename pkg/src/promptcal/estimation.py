"""Label production for batches of records.

Three estimator kinds: an LLM estimator (used both as predictor and as
annotator), a human estimator that blocks on the annotation service, and a
batch estimator that fuses several LLM estimators through an aggregation
rule. LLM estimation packs several samples into one request (prompt
batching) and dispatches chunks in parallel.
"""

from __future__ import annotations

import re
import time
from collections import Counter
from dataclasses import dataclass, field

from .dataset import Record
from .errors import AnnotationCancelled, ConfigError, EstimationParseError, ParseError
from .gateway import ChatMessage, ChatRequest, Gateway, make_request
from .labels import Label, LabelSchema
from .templates import TemplateSet

REPROMPT_REMINDER = "Answer strictly in the format `<index>: <label>`."

# Canonical form "<index>: <label>"; the separator may be any light punctuation
# or plain whitespace.
_PUNCT_LINE_RE = re.compile(r"^\s*(\d+)\s*[:.)\-]\s*(.+?)\s*$")
_SPACE_LINE_RE = re.compile(r"^\s*(\d+)\s+(.+?)\s*$")


@dataclass(frozen=True)
class AggregationPolicy:
    rule: str  # any_positive | majority | unanimous
    positive_label: Label | None = None

    def __post_init__(self) -> None:
        if self.rule not in ("any_positive", "majority", "unanimous"):
            raise ConfigError(f"unknown aggregation rule {self.rule!r}")
        if self.rule in ("any_positive", "unanimous") and self.positive_label is None:
            raise ConfigError(f"{self.rule} aggregation requires positive_label")


@dataclass
class EstimatorSpec:
    kind: str  # llm | human | batch_aggregate
    role: str  # predictor | annotator
    label_schema: LabelSchema
    prompt_text: str = ""
    task_description: str = ""
    model_id: str = "mock-model"
    temperature: float | None = None
    max_tokens: int = 1024
    prompt_batch_size: int = 5
    parallelism: int = 1
    members: list["EstimatorSpec"] = field(default_factory=list)
    aggregation: AggregationPolicy | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("llm", "human", "batch_aggregate"):
            raise ConfigError(f"unknown estimator kind {self.kind!r}")
        if self.role not in ("predictor", "annotator"):
            raise ConfigError(f"unknown estimator role {self.role!r}")
        if self.prompt_batch_size < 1 or self.parallelism < 1:
            raise ConfigError("prompt_batch_size and parallelism must be >= 1")
        if self.kind == "llm" and not self.prompt_text:
            raise ConfigError("llm estimator requires prompt_text")
        if self.kind == "batch_aggregate":
            if len(self.members) < 2:
                raise ConfigError("batch_aggregate estimator needs at least 2 members")
            if any(m.label_schema != self.label_schema for m in self.members):
                raise ConfigError("batch_aggregate members must share one label schema")
            if self.aggregation is None:
                raise ConfigError("batch_aggregate estimator requires an aggregation policy")

    @property
    def record_field(self) -> str:
        return "annotation" if self.role == "annotator" else "prediction"


@dataclass
class AnnotationBatch:
    batch_id: str
    records: list[tuple[int, str]]  # (record id, text)
    label_schema: LabelSchema
    task_description: str
    status: str = "pending"  # pending | completed | cancelled
    submitted_labels: dict[int, Label] = field(default_factory=dict)


# --- batched output grammar -----------------------------------------------------

def parse_batched_output(text: str, expected_n: int, schema: LabelSchema) -> list[Label]:
    """Parse `<index>: <label>` lines into exactly expected_n labels.

    Lines that do not start with an index are ignored (LLM preamble); every
    index 1..expected_n must appear exactly once with a label in the schema.
    """
    if expected_n < 1:
        raise ValueError("expected_n must be >= 1")
    found: dict[int, Label] = {}
    for line in text.splitlines():
        match = _PUNCT_LINE_RE.match(line) or _SPACE_LINE_RE.match(line)
        if match is None:
            continue
        index = int(match.group(1))
        if index < 1 or index > expected_n:
            raise ParseError(f"index {index} out of range 1..{expected_n} in line {line!r}")
        if index in found:
            raise ParseError(f"duplicate index {index} in line {line!r}")
        try:
            found[index] = schema.parse(match.group(2))
        except ValueError as exc:
            raise ParseError(f"bad label in line {line!r}: {exc}") from exc
    if not found and expected_n == 1:
        # A single sample often comes back as a bare label without an index.
        try:
            return [schema.parse(text)]
        except ValueError as exc:
            raise ParseError(f"bad label in output {text!r}: {exc}") from exc
    missing = [i for i in range(1, expected_n + 1) if i not in found]
    if missing:
        raise ParseError(f"missing indices {missing} in output {text!r}")
    return [found[i] for i in range(1, expected_n + 1)]


def render_batched_labels(labels: list[Label]) -> str:
    """Canonical renderer; parse_batched_output round-trips its output."""
    return "\n".join(f"{i}: {label}" for i, label in enumerate(labels, start=1))


# --- aggregation -------------------------------------------------------------------

def _binary_complement(schema: LabelSchema, positive: Label) -> Label:
    labels = schema.ordered()
    if len(labels) != 2:
        raise ConfigError("this aggregation rule requires a binary label schema")
    return labels[0] if labels[1] == positive else labels[1]


def aggregate(labels_per_member: list[Label], policy: AggregationPolicy, schema: LabelSchema) -> Label:
    """Fuse member votes into one label.

    any_positive is a logical OR on the positive label; majority picks the
    most frequent label with ties broken by schema declaration order;
    unanimous requires every member to agree on the positive label.
    """
    if len(labels_per_member) < 2:
        raise ConfigError("aggregation needs at least 2 member labels")
    if policy.rule == "any_positive":
        positive = policy.positive_label
        complement = _binary_complement(schema, positive)
        return positive if any(l == positive for l in labels_per_member) else complement
    if policy.rule == "unanimous":
        positive = policy.positive_label
        complement = _binary_complement(schema, positive)
        return positive if all(l == positive for l in labels_per_member) else complement
    counts = Counter(labels_per_member)
    best_count = max(counts.values())
    for label in schema.ordered():
        if counts.get(label, 0) == best_count:
            return label
    raise ParseError("member labels outside schema")  # unreachable for valid input


# --- LLM estimation -----------------------------------------------------------------

def _format_instruction(schema: LabelSchema) -> str:
    return (
        "Answer with exactly one line per sample, in the format '<index>: <label>'.\n"
        f"Valid labels: {schema.display()}."
    )


def render_estimation_request(spec: EstimatorSpec, chunk: list[Record], templates: TemplateSet) -> ChatRequest:
    samples = "\n".join(f"{i}. {r.text}" for i, r in enumerate(chunk, start=1))
    user = templates.render(
        "estimation",
        task_description=spec.task_description or "(no task description)",
        samples=samples,
        format=_format_instruction(spec.label_schema),
    )
    return make_request(
        role_tag=spec.role,
        messages=[ChatMessage("system", spec.prompt_text), ChatMessage("user", user)],
        model_id=spec.model_id,
        temperature=spec.temperature,
        max_tokens=spec.max_tokens,
    )


def _reprompt(request: ChatRequest, raw: str) -> ChatRequest:
    messages = list(request.messages) + [
        ChatMessage("assistant", raw if raw.strip() else "(empty)"),
        ChatMessage("user", REPROMPT_REMINDER),
    ]
    return ChatRequest(
        messages=tuple(messages),
        model_id=request.model_id,
        role_tag=request.role_tag,
        temperature=request.temperature,
        max_tokens=request.max_tokens,
        seed=request.seed,
    )


def _estimate_llm(spec: EstimatorSpec, records: list[Record], gateway: Gateway, templates: TemplateSet) -> dict[int, Label]:
    chunks = [
        records[i : i + spec.prompt_batch_size]
        for i in range(0, len(records), spec.prompt_batch_size)
    ]
    requests = [render_estimation_request(spec, chunk, templates) for chunk in chunks]
    responses = gateway.complete_many(requests, parallelism=spec.parallelism)
    result: dict[int, Label] = {}
    for chunk_index, (chunk, request, response) in enumerate(zip(chunks, requests, responses)):
        try:
            labels = parse_batched_output(response.content, len(chunk), spec.label_schema)
        except ParseError:
            retry = gateway.complete(_reprompt(request, response.content))
            try:
                labels = parse_batched_output(retry.content, len(chunk), spec.label_schema)
            except ParseError:
                raise EstimationParseError(chunk_index, retry.content) from None
        for record, label in zip(chunk, labels):
            result[record.id] = label
    return result


# --- human estimation -----------------------------------------------------------------

def human_annotate(batch: AnnotationBatch, service, poll_interval: float = 2.0) -> dict[int, Label]:
    """Publish a batch and block until every record is labeled.

    `service` is any handle exposing publish/get_batch with the annotation
    service semantics (the in-process state or the HTTP client).
    """
    batch_id = service.publish(batch)
    while True:
        current = service.get_batch(batch_id)
        if current.status == "cancelled":
            raise AnnotationCancelled(f"batch {batch_id} was cancelled")
        if current.status == "completed":
            return dict(current.submitted_labels)
        time.sleep(poll_interval)


# --- entry point ---------------------------------------------------------------------

def estimate_batch(
    spec: EstimatorSpec,
    records: list[Record],
    gateway: Gateway | None = None,
    templates: TemplateSet | None = None,
    service=None,
    poll_interval: float = 2.0,
) -> dict[int, Label]:
    """Produce a label for every record, keyed by record id."""
    if not records:
        raise ValueError("estimate_batch needs at least one record")
    for record in records:
        if not record.text:
            raise ValueError(f"record {record.id} has empty text")

    if spec.kind == "llm":
        if gateway is None:
            raise ConfigError("llm estimator requires a gateway")
        return _estimate_llm(spec, records, gateway, templates or TemplateSet())

    if spec.kind == "human":
        if service is None:
            raise ConfigError("human estimator requires an annotation service handle")
        batch = AnnotationBatch(
            batch_id="",
            records=[(r.id, r.text) for r in records],
            label_schema=spec.label_schema,
            task_description=spec.task_description,
        )
        return human_annotate(batch, service, poll_interval=poll_interval)

    # batch_aggregate: run each member, then fuse per record.
    member_maps = [
        estimate_batch(member, records, gateway=gateway, templates=templates, service=service)
        for member in spec.members
    ]
    fused: dict[int, Label] = {}
    for record in records:
        votes = [m[record.id] for m in member_maps]
        fused[record.id] = aggregate(votes, spec.aggregation, spec.label_schema)
    return fused
