"""Prompt preamble scheme, builtin templates, and structured-output validation.

Templates carry six fixed sections rendered in canonical order. Placeholders
use double braces ({{name}}) and live in the input-context section only.
Provider responses come back as one JSON object, optionally fenced; nothing
reaches the domain model except through validate_output.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from typing import Any, Mapping, Optional

from .errors import MissingBinding, SchemaError, UnknownBinding
from .model import EngineConfig

SECTION_ORDER = (
    "Role",
    "Input Context",
    "Overall Rules",
    "Output Formatting",
    "Workflow",
    "Example",
)

_PLACEHOLDER = re.compile(r"\{\{([a-zA-Z_][a-zA-Z0-9_]*)\}\}")
_FENCE = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)

TEMPLATE_NAMES = (
    "topicSumGen",
    "themeGen",
    "keywordGen",
    "blockDistillGen",
    "inspirationPopupGen",
    "jokeDraftGen",
)


@dataclass(frozen=True, slots=True)
class PromptTemplate:
    name: str
    role: str
    input_context: str
    overall_rules: str
    output_formatting: str
    workflow: str
    example: str

    def __post_init__(self):
        for section, text in zip(SECTION_ORDER, self.sections()):
            if not text.strip():
                raise ValueError(f"template {self.name}: section {section} is empty")

    def sections(self) -> tuple[str, ...]:
        return (
            self.role,
            self.input_context,
            self.overall_rules,
            self.output_formatting,
            self.workflow,
            self.example,
        )

    @property
    def placeholders(self) -> frozenset[str]:
        return frozenset(_PLACEHOLDER.findall(self.input_context))


@dataclass(frozen=True, slots=True)
class SchemaField:
    name: str
    kind: str  # text | text-list | record-list
    required: bool = True
    nonempty: bool = True
    exact_count: Optional[int] = None
    item_fields: tuple[str, ...] = ()
    unique_by: Optional[str] = None


@dataclass(frozen=True, slots=True)
class OutputSchema:
    name: str
    fields: tuple[SchemaField, ...]

    def __post_init__(self):
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            raise ValueError(f"schema {self.name}: duplicate field names")


@dataclass(frozen=True, slots=True)
class RenderedPrompt:
    template_name: str
    text: str
    bindings: tuple[tuple[str, str], ...] = ()


def assemble_prompt(template: PromptTemplate, bindings: Mapping[str, str]) -> RenderedPrompt:
    """Render the six sections in canonical order; byte-stable for equal inputs."""
    declared = template.placeholders
    for name in bindings:
        if name not in declared:
            raise UnknownBinding(name)
    for name in sorted(declared):
        if name not in bindings:
            raise MissingBinding(name)

    def fill(text: str) -> str:
        return _PLACEHOLDER.sub(lambda m: bindings[m.group(1)], text)

    parts = []
    for header, body in zip(SECTION_ORDER, template.sections()):
        rendered = fill(body) if header == "Input Context" else body
        parts.append(f"[{header}]\n{rendered.strip()}\n")
    return RenderedPrompt(
        template_name=template.name,
        text="\n".join(parts),
        bindings=tuple(sorted(bindings.items())),
    )


# -- structured output ---------------------------------------------------------

def extract_object(raw: str) -> dict:
    """Pull the single structured record out of a provider response.

    Rule (fixed, documented in the README): try each fenced block in order of
    appearance and take the first that parses as a JSON object; if none
    qualifies, parse the whole trimmed text. Anything else is Unparseable.
    """
    for match in _FENCE.finditer(raw):
        try:
            candidate = json.loads(match.group(1))
        except json.JSONDecodeError:
            continue
        if isinstance(candidate, dict):
            return candidate
    try:
        candidate = json.loads(raw.strip())
    except json.JSONDecodeError:
        raise SchemaError("Unparseable")
    if not isinstance(candidate, dict):
        raise SchemaError("Unparseable")
    return candidate


def _check_text(field_: SchemaField, value: Any) -> str:
    if not isinstance(value, str):
        raise SchemaError("ConstraintViolated", field_.name, "must be text")
    if field_.nonempty and not value.strip():
        raise SchemaError("ConstraintViolated", field_.name, "must be nonempty")
    return value


def _check_text_list(field_: SchemaField, value: Any) -> list[str]:
    if not isinstance(value, list) or any(not isinstance(v, str) for v in value):
        raise SchemaError("ConstraintViolated", field_.name, "must be a list of text")
    if field_.nonempty and (not value or any(not v.strip() for v in value)):
        raise SchemaError("ConstraintViolated", field_.name, "must be a nonempty list of nonempty text")
    if field_.exact_count is not None and len(value) != field_.exact_count:
        raise SchemaError("ConstraintViolated", field_.name, f"must contain exactly {field_.exact_count} items")
    return value


def _check_record_list(field_: SchemaField, value: Any) -> list[dict]:
    if not isinstance(value, list) or any(not isinstance(v, dict) for v in value):
        raise SchemaError("ConstraintViolated", field_.name, "must be a list of records")
    if field_.nonempty and not value:
        raise SchemaError("ConstraintViolated", field_.name, "must be nonempty")
    if field_.exact_count is not None and len(value) != field_.exact_count:
        raise SchemaError("ConstraintViolated", field_.name, f"must contain exactly {field_.exact_count} items")
    cleaned = []
    for record in value:
        row = {}
        for sub in field_.item_fields:
            if sub not in record:
                raise SchemaError("MissingField", f"{field_.name}.{sub}")
            if not isinstance(record[sub], str) or not record[sub].strip():
                raise SchemaError("ConstraintViolated", f"{field_.name}.{sub}", "must be nonempty text")
            row[sub] = record[sub]
        cleaned.append(row)
    if field_.unique_by is not None:
        keys = [r[field_.unique_by] for r in cleaned]
        if len(set(keys)) != len(keys):
            raise SchemaError("ConstraintViolated", field_.name, f"{field_.unique_by} values must be unique")
    return cleaned


def validate_output(raw: str, schema: OutputSchema) -> dict:
    """Validate a raw provider response against ``schema``.

    Returns the typed record restricted to schema fields; raises SchemaError
    naming the first violated field or constraint.
    """
    data = extract_object(raw)
    record: dict[str, Any] = {}
    for field_ in schema.fields:
        if field_.name not in data:
            if field_.required:
                raise SchemaError("MissingField", field_.name)
            continue
        value = data[field_.name]
        if field_.kind == "text":
            record[field_.name] = _check_text(field_, value)
        elif field_.kind == "text-list":
            record[field_.name] = _check_text_list(field_, value)
        elif field_.kind == "record-list":
            record[field_.name] = _check_record_list(field_, value)
        else:
            raise ValueError(f"schema {schema.name}: unknown kind {field_.kind}")
    return record


# -- schemas for the builtin pipeline stages -----------------------------------

def topic_summary_schema() -> OutputSchema:
    return OutputSchema(
        "topicSummary",
        (
            SchemaField("theme", "text"),
            SchemaField("audience", "text"),
            SchemaField("style", "text"),
            SchemaField("techniques", "text-list", nonempty=False),
            SchemaField("summary", "text"),
        ),
    )


def theme_schema(count: int) -> OutputSchema:
    return OutputSchema(
        "themeList",
        (
            SchemaField(
                "themes",
                "record-list",
                exact_count=count,
                item_fields=("label", "rationale"),
                unique_by="label",
            ),
        ),
    )


def keyword_schema() -> OutputSchema:
    return OutputSchema("keywordList", (SchemaField("keywords", "text-list"),))


def block_schema(count: int) -> OutputSchema:
    return OutputSchema("blockList", (SchemaField("blocks", "text-list", exact_count=count),))


def echo_schema() -> OutputSchema:
    return OutputSchema("echoSummary", (SchemaField("echo", "text"),))


def joke_draft_schema() -> OutputSchema:
    return OutputSchema(
        "jokeDraft",
        (
            SchemaField("title", "text"),
            SchemaField("setup", "text"),
            SchemaField("punchline", "text"),
        ),
    )


# -- template bundle loading -----------------------------------------------------

def parse_template_bundle(name: str, text: str) -> PromptTemplate:
    """Parse the plain-text bundle format: six sections, each introduced by a
    line consisting of its bracketed header."""
    sections: dict[str, list[str]] = {}
    current: Optional[str] = None
    for line in text.splitlines():
        stripped = line.strip()
        if stripped.startswith("[") and stripped.endswith("]") and stripped[1:-1] in SECTION_ORDER:
            current = stripped[1:-1]
            sections[current] = []
            continue
        if current is not None:
            sections[current].append(line)
    missing = [s for s in SECTION_ORDER if s not in sections]
    if missing:
        raise ValueError(f"template {name}: missing sections {missing}")
    body = {k: "\n".join(v).strip() for k, v in sections.items()}
    return PromptTemplate(
        name=name,
        role=body["Role"],
        input_context=body["Input Context"],
        overall_rules=body["Overall Rules"],
        output_formatting=body["Output Formatting"],
        workflow=body["Workflow"],
        example=body["Example"],
    )


_cache: dict[str, dict[str, PromptTemplate]] = {}


def load_templates(language: str = "en") -> dict[str, PromptTemplate]:
    """Load the shipped template bundle for ``language`` (falls back to en)."""
    lang = language if language in ("en", "zh") else "en"
    if lang in _cache:
        return _cache[lang]
    loaded = {}
    base = resources.files("jokeasy").joinpath("templates", lang)
    for name in TEMPLATE_NAMES:
        text = base.joinpath(f"{name}.txt").read_text(encoding="utf-8")
        loaded[name] = parse_template_bundle(name, text)
    _cache[lang] = loaded
    return loaded


def load_template_file(name: str, path) -> PromptTemplate:
    """Load one template from an external bundle file (prompt iteration
    without a rebuild)."""
    from pathlib import Path

    return parse_template_bundle(name, Path(path).read_text(encoding="utf-8"))


def builtin_templates(
    config: EngineConfig | None = None,
    language: str | None = None,
) -> dict[str, tuple[PromptTemplate, OutputSchema]]:
    """The six pipeline templates paired with their output schemas.

    Count constraints follow the supplied config (defaults otherwise).
    """
    cfg = config or EngineConfig()
    templates = load_templates(language or cfg.content_language)
    schemas = {
        "topicSumGen": topic_summary_schema(),
        "themeGen": theme_schema(cfg.theme_count),
        "keywordGen": keyword_schema(),
        "blockDistillGen": block_schema(cfg.blocks_per_pool),
        "inspirationPopupGen": echo_schema(),
        "jokeDraftGen": joke_draft_schema(),
    }
    return {name: (templates[name], schemas[name]) for name in TEMPLATE_NAMES}
