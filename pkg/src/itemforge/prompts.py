"""Prompt templates with named placeholders, loaded from editable text files.

Placeholders look like ``{source_document}``: a lone lowercase identifier
in braces. Braces that are part of JSON examples in the template text
(``{"passage": ...}``) never match that shape and pass through untouched.
A custom template directory overrides individual files; anything missing
there falls back to the packaged defaults.
"""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Mapping, Sequence

from .core import OPTION_LABELS, FeatureConstraintSet, Item
from .errors import ConfigError

DEFAULT_TEMPLATE_DIR = Path(__file__).parent / "templates"

TEMPLATE_NAMES = (
    "drafter_passage",
    "drafter_options",
    "planner_passage",
    "planner_options",
    "editor_passage",
    "editor_options",
    "reworder_suggest",
    "reworder_replace",
    "refiner",
    "baseline_feature",
    "baseline_level",
    "judge_factuality",
    "judge_evidence_scope",
    "judge_transformation",
    "judge_neutrality",
    "judge_difficulty",
    "judge_validity",
)

_PLACEHOLDER = re.compile(r"\{([a-z][a-z0-9_]*)\}")


class TemplateSet:
    """All prompt templates for one run, resolved against an override dir."""

    def __init__(self, texts: Mapping[str, str]):
        missing = [name for name in TEMPLATE_NAMES if name not in texts]
        if missing:
            raise ConfigError(f"missing templates: {', '.join(missing)}")
        self._texts = dict(texts)

    @classmethod
    def load(cls, override_dir=None) -> "TemplateSet":
        texts = {}
        for name in TEMPLATE_NAMES:
            path = DEFAULT_TEMPLATE_DIR / f"{name}.txt"
            if override_dir is not None:
                candidate = Path(override_dir) / f"{name}.txt"
                if candidate.is_file():
                    path = candidate
            if not path.is_file():
                raise ConfigError(f"template file not found: {path}")
            texts[name] = path.read_text(encoding="utf-8")
        return cls(texts)

    def text(self, name: str) -> str:
        return self._texts[name]

    def placeholders(self, name: str) -> set[str]:
        return set(_PLACEHOLDER.findall(self._texts[name]))

    def render(self, name: str, **fields) -> str:
        template = self._texts[name]
        needed = self.placeholders(name)
        missing = needed - fields.keys()
        if missing:
            raise ConfigError(
                f"template {name!r} is missing values for: {', '.join(sorted(missing))}"
            )

        def _sub(match: re.Match) -> str:
            return str(fields[match.group(1)])

        return _PLACEHOLDER.sub(_sub, template)


_DEFAULT_SET: TemplateSet | None = None


def default_templates() -> TemplateSet:
    global _DEFAULT_SET
    if _DEFAULT_SET is None:
        _DEFAULT_SET = TemplateSet.load()
    return _DEFAULT_SET


def render_sentences(sentences: Sequence[str]) -> str:
    """Numbered sentence list: ``(1) First sentence.``"""
    return "\n".join(f"({i}) {s}" for i, s in enumerate(sentences, start=1))


def render_options(options: Sequence[str]) -> str:
    """Lettered option list: ``A. statement``"""
    return "\n".join(f"{OPTION_LABELS[i]}. {text}" for i, text in enumerate(options))


def render_option_constraints(cs: FeatureConstraintSet) -> str:
    lines = []
    for i, opt in enumerate(cs.options):
        lines.append(
            f"Option {OPTION_LABELS[i]}: factuality = {opt.factuality.label}, "
            f"reasoning complexity = {opt.reasoning.label}"
        )
    return "\n".join(lines)


def render_item(item: Item) -> str:
    return f"Passage:\n{item.passage}\n\nQuestion: {item.stem}\n{render_options(item.options)}"


def render_json(data) -> str:
    return json.dumps(data, indent=2, ensure_ascii=False)


def parse_option_ref(value) -> int | None:
    """Parse a model-provided option reference ("B", "option c", 2) to a 0-based index."""
    if value is None:
        return None
    if isinstance(value, bool):
        return None
    if isinstance(value, int):
        return value - 1 if 1 <= value <= len(OPTION_LABELS) else None
    if isinstance(value, str):
        text = value.strip().upper()
        if text.startswith("OPTION"):
            text = text[len("OPTION"):].strip()
        if text in OPTION_LABELS:
            return OPTION_LABELS.index(text)
        if text.isdigit():
            num = int(text)
            return num - 1 if 1 <= num <= len(OPTION_LABELS) else None
    return None
