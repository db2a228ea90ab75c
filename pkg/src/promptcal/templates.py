"""Meta-prompt template loading and rendering.

Templates are plain text files with {name} placeholders, editable without
touching code. Rendering is a single pass over the file, so placeholder-like
text inside substituted values is left alone.
"""

from __future__ import annotations

import re
from importlib import resources
from pathlib import Path

from .errors import TemplateError

_PLACEHOLDER_RE = re.compile(r"\{([a-z_]+)\}")

TEMPLATE_NAMES = (
    "estimation",
    "analyzer",
    "synthesis_initial",
    "synthesis_step",
    "prompt_gen",
    "ranker_task_description",
    "ranker_prompt",
    "eval_inputs",
)


def default_template_dir() -> Path:
    return Path(str(resources.files("promptcal").joinpath("templates")))


class TemplateSet:
    """Loads named templates from a directory, falling back to the built-ins."""

    def __init__(self, directory: str | Path | None = None):
        self._dir = Path(directory) if directory else None
        self._builtin = default_template_dir()
        self._cache: dict[str, str] = {}

    def raw(self, name: str) -> str:
        if name in self._cache:
            return self._cache[name]
        candidates = []
        if self._dir is not None:
            candidates.append(self._dir / f"{name}.txt")
        candidates.append(self._builtin / f"{name}.txt")
        for path in candidates:
            if path.is_file():
                text = path.read_text(encoding="utf-8")
                self._cache[name] = text
                return text
        raise TemplateError(f"template {name!r} not found under {candidates}")

    def render(self, name: str, **values: str) -> str:
        template = self.raw(name)
        missing: list[str] = []

        def substitute(match: re.Match) -> str:
            key = match.group(1)
            if key not in values:
                missing.append(key)
                return match.group(0)
            return str(values[key])

        rendered = _PLACEHOLDER_RE.sub(substitute, template)
        if missing:
            raise TemplateError(f"template {name!r} has unresolved placeholders: {sorted(set(missing))}")
        return rendered
