"""Prompt-candidate history and the prompt-generator meta-prompt."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import PromptParseError
from .evaluation import EvalReport
from .gateway import ChatMessage, ChatRequest, make_request
from .templates import TemplateSet

_FENCE_RE = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)


@dataclass
class PromptCandidate:
    text: str
    score: float
    iteration: int
    report: EvalReport | None = None


@dataclass
class History:
    """Append-only candidate history with a rendering window."""

    window: int = 7
    candidates: list[PromptCandidate] = field(default_factory=list)

    def append(self, candidate: PromptCandidate) -> None:
        if self.candidates and candidate.iteration <= self.candidates[-1].iteration:
            raise ValueError("candidate iterations must be strictly increasing")
        self.candidates.append(candidate)

    def __len__(self) -> int:
        return len(self.candidates)

    def scores(self) -> list[float]:
        return [c.score for c in self.candidates]

    def recent(self) -> list[PromptCandidate]:
        return self.candidates[-self.window :]


def best(history: History) -> PromptCandidate:
    """Highest score; ties go to the earliest iteration."""
    if not history.candidates:
        raise ValueError("history is empty")
    return max(history.candidates, key=lambda c: (c.score, -c.iteration))


def render_history(history: History) -> str:
    """The last `window` candidates, sorted ascending by score (best last)."""
    shown = sorted(history.recent(), key=lambda c: c.score)
    blocks = []
    for candidate in shown:
        blocks.append(f"Score {candidate.score:.4f}:\n{candidate.text}")
    return "\n\n".join(blocks)


def build_prompt_gen_request(
    history: History,
    analysis: str,
    task_description: str,
    templates: TemplateSet | None = None,
    model_id: str = "mock-model",
) -> ChatRequest:
    if not history.candidates:
        raise ValueError("cannot build a prompt-generator request from an empty history")
    if not analysis:
        raise ValueError("analysis text is required (use the sentinel when ablated)")
    templates = templates or TemplateSet()
    user = templates.render(
        "prompt_gen",
        task_description=task_description,
        history=render_history(history),
        analysis=analysis,
    )
    return make_request("prompt_gen", [ChatMessage("user", user)], model_id=model_id)


def parse_new_prompt(text: str) -> str:
    """First fenced block if present, the whole trimmed text otherwise."""
    match = _FENCE_RE.search(text)
    extracted = match.group(1).strip() if match else text.strip()
    if not extracted:
        raise PromptParseError("proposed prompt is empty")
    return extracted
