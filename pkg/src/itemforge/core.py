"""Domain types for constraint-controlled multiple-choice reading items.

Everything here is an immutable value with a canonical JSON form; there is
no I/O in this module. The JSON encoding (lowercase-string enums, field
names as declared) is the wire format used by the CLI and the run store.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Optional

DEFAULT_STEM = "According to the passage, which of the following statements is true?"

OPTION_LABELS = ("A", "B", "C", "D")


def canonical_json(data: Any) -> str:
    """Serialize to the canonical text form used for files and digests."""
    return json.dumps(data, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


class CefrBand(enum.IntEnum):
    """Coarse CEFR vocabulary band; ordering follows difficulty (A < B < C)."""

    A = 1
    B = 2
    C = 3

    def to_json(self) -> str:
        return self.name.lower()

    @classmethod
    def from_json(cls, value: str) -> "CefrBand":
        try:
            return cls[str(value).upper()]
        except KeyError:
            raise ValueError(f"unknown CEFR band: {value!r}") from None


class WordLevel(enum.IntEnum):
    """Fine-grained CEFR word level, two per band."""

    A1 = 1
    A2 = 2
    B1 = 3
    B2 = 4
    C1 = 5
    C2 = 6

    @property
    def band(self) -> CefrBand:
        return CefrBand((int(self) + 1) // 2)

    def to_json(self) -> str:
        return self.name.lower()

    @classmethod
    def from_json(cls, value: str) -> "WordLevel":
        try:
            return cls[str(value).upper()]
        except KeyError:
            raise ValueError(f"unknown word level: {value!r}") from None


def band_of(level: WordLevel) -> CefrBand:
    """Map a word level to its band: A1,A2 -> A; B1,B2 -> B; C1,C2 -> C."""
    return level.band


class LengthKind(enum.IntEnum):
    SHORT = 1
    MEDIUM = 2
    LONG = 3

    def to_json(self) -> str:
        return self.name.lower()

    @classmethod
    def from_json(cls, value: str) -> "LengthKind":
        try:
            return cls[str(value).upper()]
        except KeyError:
            raise ValueError(f"unknown length kind: {value!r}") from None


class LengthScope(enum.Enum):
    PASSAGE_SENTENCES = "passage_sentences"
    AVG_WORDS_PER_SENTENCE = "avg_words_per_sentence"


# Sentence counts per passage band, inclusive on both ends.
PASSAGE_SENTENCE_RANGES = {
    LengthKind.SHORT: (5, 10),
    LengthKind.MEDIUM: (11, 20),
    LengthKind.LONG: (21, 30),
}

# Average words per sentence, half-open (lo, hi]. The short band is
# "10 words or fewer", matching the wording the agents are instructed with.
AVG_WORDS_RANGES = {
    LengthKind.SHORT: (0, 10),
    LengthKind.MEDIUM: (10, 15),
    LengthKind.LONG: (15, 20),
}


@dataclass(frozen=True)
class LengthBand:
    """A target length band within one scope (sentence count or average words)."""

    kind: LengthKind
    scope: LengthScope

    @classmethod
    def passage(cls, kind: LengthKind) -> "LengthBand":
        return cls(kind, LengthScope.PASSAGE_SENTENCES)

    @classmethod
    def avg_words(cls, kind: LengthKind) -> "LengthBand":
        return cls(kind, LengthScope.AVG_WORDS_PER_SENTENCE)

    def contains(self, value) -> bool:
        """Whether a measured value falls inside this band.

        Values outside every band (e.g. a 31-sentence passage) are simply
        out of band: they satisfy no target and are not an error.
        """
        if self.scope is LengthScope.PASSAGE_SENTENCES:
            lo, hi = PASSAGE_SENTENCE_RANGES[self.kind]
            return lo <= value <= hi
        lo, hi = AVG_WORDS_RANGES[self.kind]
        return lo < value <= hi

    def to_json(self) -> dict:
        return {"kind": self.kind.to_json(), "scope": self.scope.value}

    @classmethod
    def from_json(cls, data: dict) -> "LengthBand":
        return cls(LengthKind.from_json(data["kind"]), LengthScope(data["scope"]))


def classify_passage_length(sentence_count: int) -> Optional[LengthKind]:
    """Band of a sentence count, or None when out of every band."""
    for kind, (lo, hi) in PASSAGE_SENTENCE_RANGES.items():
        if lo <= sentence_count <= hi:
            return kind
    return None


def classify_avg_words(avg: Fraction) -> Optional[LengthKind]:
    """Band of an average sentence length, or None when out of every band."""
    for kind, (lo, hi) in AVG_WORDS_RANGES.items():
        if lo < avg <= hi:
            return kind
    return None


class EvidenceScope(enum.Enum):
    SINGLE_SENTENCE = "single_sentence"
    MULTI_SENTENCE = "multi_sentence"
    NONE = "none"


class Transformation(enum.Enum):
    WORD_MATCHING = "word_matching"
    PARAPHRASING = "paraphrasing"
    INFERENCE = "inference"


_SCOPE_LABELS = {
    EvidenceScope.SINGLE_SENTENCE: "single-sentence",
    EvidenceScope.MULTI_SENTENCE: "multi-sentence",
}
_TRANSFORMATION_LABELS = {
    Transformation.WORD_MATCHING: "word matching",
    Transformation.PARAPHRASING: "paraphrasing",
    Transformation.INFERENCE: "inference",
}

NOT_ENOUGH_INFO_LABEL = "not enough information"

# The five admissible reasoning-complexity labels.
REASONING_LABELS = (
    "single-sentence word matching",
    "single-sentence paraphrasing",
    "single-sentence inference",
    "multi-sentence inference",
    NOT_ENOUGH_INFO_LABEL,
)


@dataclass(frozen=True)
class ReasoningComplexity:
    """Evidence scope x transformation, restricted to the five valid labels.

    Scope NONE stands for "not enough information" and carries no
    transformation; multi-sentence evidence only combines with inference.
    """

    evidence_scope: EvidenceScope
    transformation: Optional[Transformation] = None

    def __post_init__(self) -> None:
        if self.evidence_scope is EvidenceScope.NONE:
            if self.transformation is not None:
                raise ValueError(
                    "'not enough information' does not take a transformation"
                )
        elif self.transformation is None:
            raise ValueError("a transformation is required for evidence-based reasoning")
        elif (
            self.evidence_scope is EvidenceScope.MULTI_SENTENCE
            and self.transformation is not Transformation.INFERENCE
        ):
            raise ValueError("multi-sentence evidence only combines with inference")

    @property
    def label(self) -> str:
        if self.evidence_scope is EvidenceScope.NONE:
            return NOT_ENOUGH_INFO_LABEL
        return f"{_SCOPE_LABELS[self.evidence_scope]} {_TRANSFORMATION_LABELS[self.transformation]}"

    @classmethod
    def from_label(cls, label: str) -> "ReasoningComplexity":
        text = " ".join(label.lower().split())
        if text == NOT_ENOUGH_INFO_LABEL:
            return cls(EvidenceScope.NONE)
        for scope, s_label in _SCOPE_LABELS.items():
            for trans, t_label in _TRANSFORMATION_LABELS.items():
                if text == f"{s_label} {t_label}":
                    return cls(scope, trans)
        raise ValueError(f"unknown reasoning label: {label!r}")

    def to_json(self) -> dict:
        return {
            "evidence_scope": self.evidence_scope.value,
            "transformation": self.transformation.value if self.transformation else None,
        }

    @classmethod
    def from_json(cls, data: dict) -> "ReasoningComplexity":
        trans = data.get("transformation")
        return cls(
            EvidenceScope(data["evidence_scope"]),
            Transformation(trans) if trans is not None else None,
        )


class Factuality(enum.Enum):
    TRUE = "true"
    FALSE = "false"
    NOT_GIVEN = "not_given"

    @property
    def label(self) -> str:
        """Judge-facing label ("true", "false", "not given")."""
        return self.value.replace("_", " ")

    def to_json(self) -> str:
        return self.value

    @classmethod
    def from_json(cls, value: str) -> "Factuality":
        try:
            return cls(str(value))
        except ValueError:
            raise ValueError(f"unknown factuality: {value!r}") from None


@dataclass(frozen=True)
class OptionConstraint:
    """Target factuality and reasoning complexity for one option."""

    factuality: Factuality
    reasoning: ReasoningComplexity

    def to_json(self) -> dict:
        return {"factuality": self.factuality.to_json(), "reasoning": self.reasoning.to_json()}

    @classmethod
    def from_json(cls, data: dict) -> "OptionConstraint":
        return cls(
            Factuality.from_json(data["factuality"]),
            ReasoningComplexity.from_json(data["reasoning"]),
        )


@dataclass(frozen=True)
class FeatureConstraintSet:
    """The full target specification for one item.

    Three passage-level targets (vocabulary band, passage length in
    sentences, average sentence length), one factuality/reasoning pair per
    option, and set-level neutrality.
    """

    vocab_band: CefrBand
    passage_length: LengthBand
    sentence_length: LengthBand
    options: tuple[OptionConstraint, ...]
    neutrality_required: bool = True

    def __post_init__(self) -> None:
        if self.passage_length.scope is not LengthScope.PASSAGE_SENTENCES:
            raise ValueError("passage_length must use the passage-sentences scope")
        if self.sentence_length.scope is not LengthScope.AVG_WORDS_PER_SENTENCE:
            raise ValueError("sentence_length must use the average-words scope")
        object.__setattr__(self, "options", tuple(self.options))
        if len(self.options) != 4:
            raise ValueError(f"expected 4 option constraints, got {len(self.options)}")
        true_count = sum(1 for o in self.options if o.factuality is Factuality.TRUE)
        if true_count != 1:
            raise ValueError(f"exactly one option must be the true statement, got {true_count}")
        for i, opt in enumerate(self.options):
            not_given = opt.factuality is Factuality.NOT_GIVEN
            no_evidence = opt.reasoning.evidence_scope is EvidenceScope.NONE
            if not_given != no_evidence:
                raise ValueError(
                    f"option {OPTION_LABELS[i]}: 'not given' factuality and "
                    "'not enough information' reasoning must co-occur"
                )

    def to_json(self) -> dict:
        return {
            "vocab_band": self.vocab_band.to_json(),
            "passage_length": self.passage_length.to_json(),
            "sentence_length": self.sentence_length.to_json(),
            "options": [o.to_json() for o in self.options],
            "neutrality_required": self.neutrality_required,
        }

    @classmethod
    def from_json(cls, data: dict) -> "FeatureConstraintSet":
        return cls(
            vocab_band=CefrBand.from_json(data["vocab_band"]),
            passage_length=LengthBand.from_json(data["passage_length"]),
            sentence_length=LengthBand.from_json(data["sentence_length"]),
            options=tuple(OptionConstraint.from_json(o) for o in data["options"]),
            neutrality_required=bool(data.get("neutrality_required", True)),
        )


def constraint_count(cs: FeatureConstraintSet) -> int:
    """Number of individual constraints in a set.

    Three passage constraints, factuality and reasoning per option, and one
    neutrality constraint: 3 + 2*4 + 1 = 12 for the standard item format.
    Raises ValueError for malformed sets built by bypassing the constructor.
    """
    FeatureConstraintSet.__post_init__(cs)
    return 3 + 2 * len(cs.options) + (1 if cs.neutrality_required else 0)


@dataclass(frozen=True)
class Provenance:
    source_id: str
    level: int
    run_id: str
    passage_unsatisfied: bool = False
    options_unsatisfied: bool = False

    def to_json(self) -> dict:
        return {
            "source_id": self.source_id,
            "level": self.level,
            "run_id": self.run_id,
            "passage_unsatisfied": self.passage_unsatisfied,
            "options_unsatisfied": self.options_unsatisfied,
        }

    @classmethod
    def from_json(cls, data: dict) -> "Provenance":
        return cls(
            source_id=data["source_id"],
            level=int(data["level"]),
            run_id=data["run_id"],
            passage_unsatisfied=bool(data.get("passage_unsatisfied", False)),
            options_unsatisfied=bool(data.get("options_unsatisfied", False)),
        )


@dataclass(frozen=True)
class Item:
    """A finished multiple-choice item: passage, fixed stem, four options."""

    passage: str
    stem: str
    options: tuple[str, ...]
    provenance: Provenance

    def __post_init__(self) -> None:
        object.__setattr__(self, "options", tuple(self.options))
        if len(self.options) != 4:
            raise ValueError(f"expected 4 options, got {len(self.options)}")
        if any(not o.strip() for o in self.options):
            raise ValueError("options must be non-empty")
        if len({o.strip() for o in self.options}) != 4:
            raise ValueError("options must be pairwise distinct")

    def to_json(self) -> dict:
        return {
            "passage": self.passage,
            "stem": self.stem,
            "options": list(self.options),
            "provenance": self.provenance.to_json(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "Item":
        return cls(
            passage=data["passage"],
            stem=data["stem"],
            options=tuple(data["options"]),
            provenance=Provenance.from_json(data["provenance"]),
        )


@dataclass(frozen=True)
class DifficultyPreset:
    """An ordered sequence of constraint sets, easiest first."""

    levels: tuple[FeatureConstraintSet, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "levels", tuple(self.levels))
        if not self.levels:
            raise ValueError("a preset needs at least one level")

    def level(self, number: int) -> FeatureConstraintSet:
        """Constraint set for a 1-based level number."""
        if not 1 <= number <= len(self.levels):
            raise ValueError(f"level {number} out of range 1..{len(self.levels)}")
        return self.levels[number - 1]

    def to_json(self) -> dict:
        return {"levels": [cs.to_json() for cs in self.levels]}

    @classmethod
    def from_json(cls, data: dict) -> "DifficultyPreset":
        return cls(tuple(FeatureConstraintSet.from_json(c) for c in data["levels"]))


class Stage(enum.Enum):
    """The two generation stages; options are produced against a finished passage."""

    PASSAGE = "passage"
    OPTIONS = "options"


@dataclass(frozen=True)
class ItemState:
    """Immutable working state threaded through revision rounds.

    Passage-stage states hold only sentences; options-stage states carry
    the context passage plus the current four options. ``valid`` is False
    for placeholder states created when a draft could not be parsed.
    """

    stage: Stage
    passage_sentences: tuple[str, ...] = ()
    options: tuple[str, ...] = ()
    round_created: int = 0
    valid: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "passage_sentences", tuple(self.passage_sentences))
        object.__setattr__(self, "options", tuple(self.options))
        if self.stage is Stage.PASSAGE and self.options:
            raise ValueError("passage-stage state must not carry options")

    def passage_text(self) -> str:
        return " ".join(self.passage_sentences)

    def to_json(self) -> dict:
        return {
            "stage": self.stage.value,
            "passage_sentences": list(self.passage_sentences),
            "options": list(self.options),
            "round_created": self.round_created,
            "valid": self.valid,
        }

    @classmethod
    def from_json(cls, data: dict) -> "ItemState":
        return cls(
            stage=Stage(data["stage"]),
            passage_sentences=tuple(data["passage_sentences"]),
            options=tuple(data["options"]),
            round_created=int(data["round_created"]),
            valid=bool(data.get("valid", True)),
        )

    def digest(self) -> str:
        return hashlib.sha256(canonical_json(self.to_json()).encode("utf-8")).hexdigest()[:16]
