"""Prompt templates stored as versioned text files with YAML front matter."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import yaml

from .gateway import TEMPLATE_IDS

DEFAULT_TEMPLATE_DIR = Path(__file__).with_name("templates")

_PLACEHOLDER = re.compile(r"\{([a-z_]+)\}")
_FRONT_MATTER = re.compile(r"\A---\n(.*?)\n---\n", re.S)


class TemplateError(ValueError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    version: int
    body: str
    required_placeholders: frozenset[str]

    @property
    def placeholders(self) -> set[str]:
        return set(_PLACEHOLDER.findall(self.body))

    def render(self, **values: str) -> str:
        missing = self.required_placeholders - values.keys()
        if missing:
            raise TemplateError(f"{self.template_id}: unbound placeholders {sorted(missing)}")
        unresolved = self.placeholders - values.keys()
        if unresolved:
            raise TemplateError(f"{self.template_id}: unbound placeholders {sorted(unresolved)}")
        # single pass, so placeholder-looking text inside values is left alone
        return _PLACEHOLDER.sub(lambda m: str(values[m.group(1)]), self.body)


def parse_template(text: str, template_id: Optional[str] = None) -> PromptTemplate:
    m = _FRONT_MATTER.match(text)
    if not m:
        raise TemplateError("template file lacks front matter")
    meta = yaml.safe_load(m.group(1)) or {}
    tid = meta.get("template_id", template_id)
    if tid not in TEMPLATE_IDS:
        raise TemplateError(f"unregistered template id {tid!r}")
    body = text[m.end():]
    required = frozenset(meta.get("required_placeholders", ()))
    t = PromptTemplate(tid, int(meta.get("version", 1)), body, required)
    stray = required - t.placeholders
    if stray:
        raise TemplateError(f"{tid}: required placeholders missing from body: {sorted(stray)}")
    return t


class TemplateRegistry:
    def __init__(self, directory: str | Path | None = None):
        self.directory = Path(directory) if directory else DEFAULT_TEMPLATE_DIR
        self._templates: dict[str, PromptTemplate] = {}
        for path in sorted(self.directory.glob("*.txt")):
            t = parse_template(path.read_text(encoding="utf-8"), path.stem)
            self._templates[t.template_id] = t
        missing = set(TEMPLATE_IDS) - self._templates.keys()
        if missing:
            raise TemplateError(f"template directory {self.directory} lacks {sorted(missing)}")

    def __getitem__(self, template_id: str) -> PromptTemplate:
        return self._templates[template_id]

    def render(self, template_id: str, **values: str) -> str:
        return self._templates[template_id].render(**values)

    def ids(self) -> tuple[str, ...]:
        return tuple(sorted(self._templates))
