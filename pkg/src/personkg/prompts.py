"""Extraction prompt templates (builtin zh/en plus user-supplied files)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path

log = logging.getLogger(__name__)

TEXT_SLOT = "{{character_text}}"
SCHEMA_SLOT = "{{schema_block}}"
DELIMITER = "******"


class PromptFrameError(ValueError):
    """The character text would break the delimited frame."""


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    preamble: str
    schema_block: str
    language: str = "zh"
    delimiter: str = DELIMITER
    think_suffix: str | None = None
    body: str | None = None  # user templates: full text with slots
    source: str = "builtin"

    def with_think_suffix(self, suffix: str | None) -> "PromptTemplate":
        return replace(self, think_suffix=suffix or None)


@dataclass(frozen=True)
class TemplateDescriptor:
    name: str
    language: str
    source: str


def render_prompt(template: PromptTemplate, character_text: str) -> str:
    """Frame the character text between delimiter lines and append the JSON schema.

    The opening delimiter line keeps the trailing space it has in the
    reference prompt; each delimiter sits on its own line.
    """
    if template.delimiter in character_text:
        raise PromptFrameError(f"character text contains the delimiter {template.delimiter!r}")
    if template.body is not None:
        text = template.body.replace(SCHEMA_SLOT, template.schema_block).replace(TEXT_SLOT, character_text)
    else:
        d = template.delimiter
        text = f"{template.preamble}\n{d} \n{character_text}\n{d}\n{template.schema_block}"
    if template.think_suffix:
        text = f"{text.rstrip(chr(10))}\n{template.think_suffix}"
    return text


def _parse_builtin(name: str, language: str) -> PromptTemplate:
    raw = resources.files("personkg.data").joinpath(f"prompt_{language}.txt").read_text(encoding="utf-8")
    frame = f"\n{DELIMITER} \n{TEXT_SLOT}\n{DELIMITER}\n"
    preamble, schema_block = raw.split(frame)
    return PromptTemplate(name, preamble, schema_block, language)


@lru_cache(maxsize=None)
def builtin_template(language: str = "zh") -> PromptTemplate:
    if language not in ("zh", "en"):
        raise KeyError(f"no builtin template for language {language!r}")
    return _parse_builtin(f"builtin-{language}", language)


def load_user_template(path: str | Path) -> PromptTemplate:
    """Read a plain-text template; ``name.en.txt`` selects the English schema block."""
    path = Path(path)
    body = path.read_text(encoding="utf-8")
    if TEXT_SLOT not in body:
        raise ValueError(f"{path}: template has no {TEXT_SLOT} placeholder")
    language = "en" if path.name.endswith(".en.txt") else "zh"
    name = path.name.removesuffix(".txt").removesuffix(".en")
    schema_block = builtin_template(language).schema_block
    return PromptTemplate(name, "", schema_block, language, body=body, source=str(path))


def _user_templates(templates_dir: str | Path | None) -> list[PromptTemplate]:
    if templates_dir is None or not Path(templates_dir).is_dir():
        return []
    found = []
    for path in sorted(Path(templates_dir).glob("*.txt")):
        try:
            found.append(load_user_template(path))
        except (OSError, UnicodeDecodeError, ValueError) as exc:
            log.warning("skipping template %s: %s", path, exc)
    return found


def list_templates(templates_dir: str | Path | None = None) -> list[TemplateDescriptor]:
    templates = [builtin_template("zh"), builtin_template("en")] + _user_templates(templates_dir)
    return [TemplateDescriptor(t.name, t.language, t.source) for t in templates]


def get_template(name: str = "zh", templates_dir: str | Path | None = None,
                 think_suffix: str | None = None) -> PromptTemplate:
    """Look a template up by name: "zh", "en", "builtin-zh", or a user template name."""
    if name in ("zh", "en"):
        template = builtin_template(name)
    elif name in ("builtin-zh", "builtin-en"):
        template = builtin_template(name[-2:])
    else:
        matches = [t for t in _user_templates(templates_dir) if t.name == name]
        if not matches:
            raise KeyError(f"unknown template {name!r}")
        template = matches[0]
    return template.with_think_suffix(think_suffix)
