"""Prompt templates: one UTF-8 file per name, ``{placeholder}`` substitution."""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping

# Only identifier-shaped names are placeholders, so literal JSON examples such
# as {"news": [...]} inside a template need no escaping.
PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


class MissingPlaceholder(KeyError):
    def __init__(self, key: str, template: str = "") -> None:
        super().__init__(key)
        self.key = key
        self.template = template

    def __str__(self) -> str:
        where = f" in template {self.template!r}" if self.template else ""
        return f"no value for placeholder {{{self.key}}}{where}"


class TemplateError(ValueError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    text: str

    @property
    def placeholders(self) -> frozenset[str]:
        return frozenset(PLACEHOLDER.findall(self.text))

    def render(self, context: Mapping[str, Any]) -> str:
        missing = sorted(self.placeholders - set(context))
        if missing:
            raise MissingPlaceholder(missing[0], self.name)
        # single pass: substituted values are never re-scanned
        return PLACEHOLDER.sub(lambda m: str(context[m.group(1)]), self.text)

    def require(self, names: Iterable[str]) -> None:
        absent = sorted(set(names) - self.placeholders)
        if absent:
            raise TemplateError(f"template {self.name!r} lacks placeholders {absent}")


def render_prompt(template: PromptTemplate, context: Mapping[str, Any]) -> str:
    return template.render(context)


def builtin_dir() -> Path:
    return Path(str(resources.files("finrpt") / "templates"))


def load_template(name: str, directory: str | Path | None = None) -> PromptTemplate:
    """Read ``<directory>/<name>.txt``; falls back to the packaged copy when a
    user directory does not override that name."""
    for base in ([Path(directory)] if directory else []) + [builtin_dir()]:
        path = base / f"{name}.txt"
        if path.is_file():
            return PromptTemplate(name, path.read_text(encoding="utf-8"))
    raise TemplateError(f"no template named {name!r}")
