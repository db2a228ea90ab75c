"""Sample-generator meta-prompts and parsing of generated samples.

Iteration 0 asks for a balanced, diverse batch of challenging samples from
the task description alone (plus user seeds when present). Later iterations
extend the request with recent prompts and the samples that confused them,
and with real samples whose style must be preserved. In ranking mode the
quota targets only the top two ranks, where the interesting boundary lives.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .dataset import Record
from .errors import SynthesisParseError
from .gateway import ChatRequest, ChatMessage, make_request
from .labels import Label, LabelSchema
from .templates import TemplateSet

SYNTHESIS_REMINDER = (
    "Answer strictly as numbered lines, one sample per line, "
    "formatted as '<index>. <sample text>'."
)

_ITEM_RE = re.compile(r"^\s*(\d+)[.):]\s+(.*)$")
_LABEL_SUFFIX_RE = re.compile(r"\s*\|\|\s*label:\s*(.+?)\s*$")


@dataclass
class SynthesisContext:
    iteration: int
    task_description: str
    current_prompt: str
    label_schema: LabelSchema
    samples_per_iteration: int
    history: list[tuple[str, list[tuple[str, Label, Label]]]] = field(default_factory=list)
    style_context: list[Record] = field(default_factory=list)
    boundary_targets: list[Label] | None = None
    seed_examples: list[tuple[str, Label | None]] = field(default_factory=list)
    model_id: str = "mock-model"

    def __post_init__(self) -> None:
        if self.iteration < 0:
            raise ValueError("iteration must be >= 0")
        if self.iteration == 0 and self.history:
            raise ValueError("iteration 0 has no history")
        if self.samples_per_iteration < 1:
            raise ValueError("samples_per_iteration must be >= 1")

    def quota_targets(self) -> list[Label]:
        return list(self.boundary_targets) if self.boundary_targets else self.label_schema.ordered()


@dataclass(frozen=True)
class GeneratedSampleSet:
    texts: tuple[str, ...]
    intended_labels: tuple | None = None  # advisory; never used as ground truth


# --- quota planning -----------------------------------------------------------

def plan_class_quota(n: int, targets: list[Label]) -> dict:
    """Split n as evenly as possible; the remainder goes to earlier labels."""
    if not targets:
        raise ValueError("quota targets must be non-empty")
    base, remainder = divmod(n, len(targets))
    return {label: base + (1 if i < remainder else 0) for i, label in enumerate(targets)}


def render_quotas(quotas: dict) -> str:
    return "\n".join(
        f"- {count} samples where the correct label is '{label}'"
        for label, count in quotas.items()
    )


def _format_instruction(total: int) -> str:
    return (
        f"Output exactly {total} numbered lines, one sample per line, "
        "formatted as '<index>. <sample text>'. Do not add anything else."
    )


# --- request building ----------------------------------------------------------

def _render_seed_examples(seed_examples: list[tuple[str, Label | None]]) -> str:
    if not seed_examples:
        return ""
    lines = ["", "Examples provided by the user:"]
    for text, label in seed_examples:
        if label is not None:
            lines.append(f"- {text} (label: {label})")
        else:
            lines.append(f"- {text}")
    return "\n".join(lines) + "\n"


def _render_history(history: list[tuple[str, list[tuple[str, Label, Label]]]]) -> str:
    blocks = []
    for prompt, confusing in history:
        lines = [f"Prompt tried:\n---\n{prompt}\n---"]
        if confusing:
            lines.append("Samples that confused this prompt:")
            for text, annotation, prediction in confusing:
                lines.append(f"- {text} (correct: {annotation}, predicted: {prediction})")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


def _render_style(style_context: list[Record]) -> str:
    if not style_context:
        return ""
    lines = [
        "",
        "Here are realistic samples from the dataset. Preserve their style in",
        "every sample you generate:",
    ]
    for record in style_context:
        lines.append(f"- {record.text}")
    return "\n".join(lines) + "\n"


def build_initial_request(ctx: SynthesisContext, templates: TemplateSet | None = None) -> ChatRequest:
    """The iteration-0 generator request (zero-shot or with user seeds)."""
    if ctx.iteration != 0:
        raise ValueError("build_initial_request requires iteration 0")
    templates = templates or TemplateSet()
    n = ctx.samples_per_iteration
    user = templates.render(
        "synthesis_initial",
        task_description=ctx.task_description,
        quotas=render_quotas(plan_class_quota(n, ctx.quota_targets())),
        examples=_render_seed_examples(ctx.seed_examples),
        format=_format_instruction(n),
    )
    return make_request("sample_gen", [ChatMessage("user", user)], model_id=ctx.model_id)


def build_step_request(ctx: SynthesisContext, templates: TemplateSet | None = None) -> ChatRequest:
    """The iteration>0 generator request with adversarial history and style context."""
    if ctx.iteration < 1:
        raise ValueError("build_step_request requires iteration >= 1")
    templates = templates or TemplateSet()
    n = ctx.samples_per_iteration
    user = templates.render(
        "synthesis_step",
        task_description=ctx.task_description,
        quotas=render_quotas(plan_class_quota(n, ctx.quota_targets())),
        history=_render_history(ctx.history),
        style_samples=_render_style(ctx.style_context),
        format=_format_instruction(n),
    )
    return make_request("sample_gen", [ChatMessage("user", user)], model_id=ctx.model_id)


# --- output parsing ----------------------------------------------------------------

def parse_samples(text: str, n: int, schema: LabelSchema) -> GeneratedSampleSet:
    """Parse numbered samples; fewer than n is tolerated, more are truncated.

    An item may claim its own label with a `|| label: <label>` suffix; the
    claim is recorded as advisory and never used as ground truth.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    items: list[str] = []
    current: list[str] | None = None
    for line in text.splitlines():
        match = _ITEM_RE.match(line)
        if match is not None:
            if current is not None:
                items.append("\n".join(current).strip())
            current = [match.group(2)]
        elif current is not None and line.strip():
            current.append(line.strip())
    if current is not None:
        items.append("\n".join(current).strip())
    items = [item for item in items if item][:n]
    if not items:
        raise SynthesisParseError(f"no samples found in output {text[:200]!r}")

    texts: list[str] = []
    labels: list[Label | None] = []
    for item in items:
        label: Label | None = None
        suffix = _LABEL_SUFFIX_RE.search(item)
        if suffix is not None:
            try:
                label = schema.parse(suffix.group(1))
                item = item[: suffix.start()].strip()
            except ValueError:
                label = None  # advisory claim unreadable; keep the raw text
        texts.append(item)
        labels.append(label)
    return GeneratedSampleSet(
        texts=tuple(texts),
        intended_labels=tuple(labels) if any(l is not None for l in labels) else None,
    )


def render_samples(sample_set: GeneratedSampleSet) -> str:
    """Canonical renderer; parse_samples round-trips its output."""
    lines = []
    labels = sample_set.intended_labels or (None,) * len(sample_set.texts)
    for i, (text, label) in enumerate(zip(sample_set.texts, labels), start=1):
        if label is not None:
            lines.append(f"{i}. {text} || label: {label}")
        else:
            lines.append(f"{i}. {text}")
    return "\n".join(lines)
