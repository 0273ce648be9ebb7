"""CEFR vocabulary database: loading, normalization, lookup, profiling.

The lexicon file is UTF-8, one record per line, tab-separated
``word<TAB>level`` with level in {A1,A2,B1,B2,C1,C2}; ``#`` starts a
comment line. An optional lemma file (``surface<TAB>lemma``) maps surface
forms onto lexicon keys. Both structures are immutable after load.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .core import CefrBand, WordLevel
from .errors import DataError

logger = logging.getLogger(__name__)


def normalize_token(token: str, lemma_map: Optional[Mapping[str, str]] = None) -> str:
    """Lowercase and strip leading/trailing punctuation; keep internal apostrophes.

    Returns "" for punctuation-only tokens, which callers treat as
    non-words. The lemma map, when given, is applied after normalization.
    """
    text = token.lower()
    start, end = 0, len(text)
    while start < end and not text[start].isalnum():
        start += 1
    while end > start and not text[end - 1].isalnum():
        end -= 1
    key = text[start:end]
    if lemma_map and key in lemma_map:
        key = lemma_map[key]
    return key


@dataclass(frozen=True)
class Lexicon:
    """Immutable word-level database keyed by normalized word forms."""

    entries: Mapping[str, WordLevel]
    lemma_map: Mapping[str, str] = field(default_factory=dict)
    source_digest: str = ""

    def __len__(self) -> int:
        return len(self.entries)

    def lookup(self, token: str) -> Optional[WordLevel]:
        """Level of a raw token after normalization and lemma mapping."""
        key = normalize_token(token, self.lemma_map)
        if not key:
            return None
        return self.entries.get(key)

    def level_of_phrase(self, phrase: str) -> Optional[WordLevel]:
        """Level of a (possibly multi-word) phrase: the max over its words.

        None when any word is missing from the lexicon, so multi-word
        replacement candidates are only eligible when fully covered.
        """
        levels = []
        for word in phrase.split():
            level = self.lookup(word)
            if level is None:
                return None
            levels.append(level)
        return max(levels) if levels else None


def load_lemma_map(path) -> dict[str, str]:
    """Read a ``surface<TAB>lemma`` file into a dict."""
    lemma_map: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected 'surface<TAB>lemma', got {raw!r}")
        surface, lemma = (normalize_token(p) for p in parts)
        if surface:
            lemma_map[surface] = lemma
    return lemma_map


def load_lexicon(path, lemma_path=None) -> Lexicon:
    """Load a lexicon file, resolving duplicate words to the LOWEST level.

    The lowest-level rule is the permissive reading: a word listed at both
    A1 and B1 stays usable in an A-band text. Malformed rows raise with
    their line number; an empty file yields an empty lexicon and a warning.
    """
    path = Path(path)
    try:
        raw_bytes = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read lexicon file {path}: {exc}") from exc

    entries: dict[str, WordLevel] = {}
    duplicates = 0
    for lineno, raw in enumerate(raw_bytes.decode("utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected 'word<TAB>level', got {raw!r}")
        key = normalize_token(parts[0])
        if not key:
            raise DataError(f"{path}:{lineno}: empty word after normalization")
        try:
            level = WordLevel.from_json(parts[1].strip())
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        if key in entries:
            duplicates += 1
            entries[key] = min(entries[key], level)
        else:
            entries[key] = level

    digest_input = raw_bytes
    lemma_map: dict[str, str] = {}
    if lemma_path is not None:
        lemma_map = load_lemma_map(lemma_path)
        digest_input = raw_bytes + b"\x00" + Path(lemma_path).read_bytes()

    if not entries:
        logger.warning("lexicon %s is empty", path)
    if duplicates:
        logger.info("lexicon %s: %d duplicate rows resolved to lowest level", path, duplicates)
    return Lexicon(
        entries=entries,
        lemma_map=lemma_map,
        source_digest=hashlib.sha256(digest_input).hexdigest(),
    )


@dataclass(frozen=True)
class WordAnnotation:
    """One token's lookup outcome: matched, OOV, or excluded proper noun."""

    token: str
    key: str
    kind: str  # "matched" | "oov" | "proper_noun"
    level: Optional[WordLevel] = None


@dataclass(frozen=True)
class VocabProfile:
    """Per-word levels for a text plus the aggregates the vocab rule needs."""

    per_word: tuple[WordAnnotation, ...]
    max_level: Optional[WordLevel]
    has_target_band_word: bool
    oov_tokens: tuple[str, ...]

    def over_level_words(self, target: CefrBand) -> list[WordAnnotation]:
        return [
            a for a in self.per_word
            if a.kind == "matched" and a.level is not None and a.level.band > target
        ]


def _has_alpha(text: str) -> bool:
    return any(c.isalpha() for c in text)


def profile_text(lex: Lexicon, text: str, target: CefrBand) -> VocabProfile:
    """Tokenize, normalize and look up every word of a text.

    Capitalized tokens missing from the lexicon are classified as proper
    nouns when they are not sentence-initial, and excluded from violation
    accounting; other unknown words are recorded as OOV (warnings, never
    violations). Tokens without alphabetic characters are skipped.
    """
    annotations: list[WordAnnotation] = []
    oov: list[str] = []
    max_level: Optional[WordLevel] = None
    has_target = False

    sentence_initial = True
    for raw in text.split():
        key = normalize_token(raw, lex.lemma_map)
        starts_sentence = sentence_initial
        sentence_initial = raw.rstrip('"\')')[-1:] in {".", "!", "?"}
        if not key or not _has_alpha(key):
            continue
        level = lex.entries.get(key)
        if level is not None:
            annotations.append(WordAnnotation(raw, key, "matched", level))
            if max_level is None or level > max_level:
                max_level = level
            if level.band == target:
                has_target = True
        elif raw[:1].isupper() and not starts_sentence:
            annotations.append(WordAnnotation(raw, key, "proper_noun"))
        else:
            annotations.append(WordAnnotation(raw, key, "oov"))
            oov.append(raw)

    return VocabProfile(
        per_word=tuple(annotations),
        max_level=max_level,
        has_target_band_word=has_target,
        oov_tokens=tuple(oov),
    )


def assign_levels(
    lex: Lexicon, candidates: Mapping[str, Sequence[str]]
) -> dict[str, list[tuple[str, Optional[WordLevel]]]]:
    """Annotate replacement candidates with their lexicon levels.

    Every alternative is annotated, including ones identical to the
    original word; alternatives with no known level come back as None and
    are ineligible for replacement.
    """
    return {
        word: [(alt, lex.level_of_phrase(alt)) for alt in alts]
        for word, alts in candidates.items()
    }
