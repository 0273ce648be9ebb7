"""The evaluator suite: rule-based and judge-based constraint measurements.

Rule-based measurements (lengths, vocabulary) are pure functions of the
text and the lexicon. Semantic measurements (factuality, reasoning
complexity, neutrality) go through an LLM judge with chain-of-thought
prompting and self-consistency voting over an odd number of samples.
Everything is collected into an ErrorReport whose JSON form is embedded
verbatim in agent prompts.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Optional, Sequence

from .backend import Backend, DecodingParams, GenRequest, extract_json_payload
from .core import (
    OPTION_LABELS,
    CefrBand,
    FeatureConstraintSet,
    ItemState,
    LengthBand,
    LengthScope,
    Stage,
    classify_avg_words,
    classify_passage_length,
)
from .errors import BackendError, ParseError
from .lexicon import Lexicon, profile_text
from .prompts import TemplateSet, default_templates, render_options

logger = logging.getLogger(__name__)

# Tokens that end with a terminator but never end a sentence.
ABBREVIATIONS = frozenset({"mr.", "mrs.", "dr.", "st.", "etc.", "e.g.", "i.e.", "vs."})

_TERMINATORS = ".!?"


def split_sentences(text: str) -> list[str]:
    """Deterministic rule-based sentence splitting.

    A sentence breaks after '.', '!' or '?' when followed by whitespace and
    an uppercase letter, unless the terminating token is a known
    abbreviation. Never returns empty sentences.
    """
    sentences: list[str] = []
    start = 0
    i = 0
    n = len(text)
    while i < n:
        if text[i] in _TERMINATORS:
            after = i + 1
            k = after
            while k < n and text[k].isspace():
                k += 1
            if k > after and k < n and text[k].isupper():
                token_start = i
                while token_start > start and not text[token_start - 1].isspace():
                    token_start -= 1
                token = text[token_start : i + 1].lower()
                while token and not token[0].isalnum():
                    token = token[1:]
                if token not in ABBREVIATIONS:
                    segment = text[start : i + 1].strip()
                    if segment:
                        sentences.append(segment)
                    start = k
                    i = k
                    continue
        i += 1
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


def count_words(sentence: str) -> int:
    """Whitespace tokens containing at least one alphanumeric character."""
    return sum(1 for token in sentence.split() if any(c.isalnum() for c in token))


@dataclass(frozen=True)
class Measurement:
    """One constraint's observed value versus its target."""

    feature: str
    observed: Any
    target: Any
    satisfied: bool
    detail: str = ""

    def to_json(self) -> dict:
        return {
            "feature": self.feature,
            "observed": self.observed,
            "target": self.target,
            "satisfied": self.satisfied,
            "detail": self.detail,
        }

    @classmethod
    def from_json(cls, data: dict) -> "Measurement":
        return cls(
            feature=data["feature"],
            observed=data["observed"],
            target=data["target"],
            satisfied=bool(data["satisfied"]),
            detail=data.get("detail", ""),
        )


@dataclass(frozen=True)
class ErrorReport:
    """All measurements for one evaluation round of one candidate."""

    round: int
    measurements: tuple[Measurement, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "measurements", tuple(self.measurements))

    @property
    def violations(self) -> tuple[Measurement, ...]:
        return tuple(m for m in self.measurements if not m.satisfied)

    @property
    def all_satisfied(self) -> bool:
        return not self.violations

    def to_json(self) -> dict:
        return {
            "round": self.round,
            "all_satisfied": self.all_satisfied,
            "measurements": [m.to_json() for m in self.measurements],
            "violations": [m.to_json() for m in self.violations],
        }

    @classmethod
    def from_json(cls, data: dict) -> "ErrorReport":
        return cls(
            round=int(data["round"]),
            measurements=tuple(Measurement.from_json(m) for m in data["measurements"]),
        )


def merge_reports(*reports: ErrorReport) -> ErrorReport:
    """Concatenate stage reports into one item-level report."""
    if not reports:
        raise ValueError("nothing to merge")
    measurements: list[Measurement] = []
    for report in reports:
        measurements.extend(report.measurements)
    return ErrorReport(max(r.round for r in reports), tuple(measurements))


def eval_passage_length(passage: str, target: LengthBand) -> Measurement:
    """Sentence count of a passage against a passage-length band."""
    if target.scope is not LengthScope.PASSAGE_SENTENCES:
        raise ValueError("target must use the passage-sentences scope")
    count = len(split_sentences(passage))
    observed_kind = classify_passage_length(count)
    detail = f"{count} sentences"
    if observed_kind is None:
        detail += " (out of every band)"
    return Measurement(
        feature="passage_length",
        observed=count,
        target=target.kind.to_json(),
        satisfied=target.contains(count),
        detail=detail,
    )


def eval_sentence_length(passage: str, target: LengthBand) -> Measurement:
    """Average words per sentence against a sentence-length band.

    The comparison is exact rational arithmetic, so boundary averages
    (10, 15, 20) classify unambiguously.
    """
    if target.scope is not LengthScope.AVG_WORDS_PER_SENTENCE:
        raise ValueError("target must use the average-words scope")
    sentences = split_sentences(passage)
    if not sentences:
        return Measurement(
            feature="sentence_length",
            observed=None,
            target=target.kind.to_json(),
            satisfied=False,
            detail="no sentences",
        )
    total = sum(count_words(s) for s in sentences)
    avg = Fraction(total, len(sentences))
    observed_kind = classify_avg_words(avg)
    detail = f"{total} words / {len(sentences)} sentences"
    if observed_kind is None:
        detail += " (out of every band)"
    return Measurement(
        feature="sentence_length",
        observed=round(float(avg), 4),
        target=target.kind.to_json(),
        satisfied=target.contains(avg),
        detail=detail,
    )


def eval_vocab(
    text: str, lex: Lexicon, target: CefrBand, feature: str = "vocab"
) -> Measurement:
    """Vocabulary-band check: no word above the target band, and at least
    one word from the target band itself. Unknown words never violate.
    """
    profile = profile_text(lex, text, target)
    over = profile.over_level_words(target)
    satisfied = not over and profile.has_target_band_word
    if over:
        listed = ", ".join(f"{a.key} ({a.level.to_json()})" for a in over)
        detail = f"words above band {target.to_json()}: {listed}"
    elif not profile.has_target_band_word:
        detail = f"no word at target band {target.to_json()}"
    else:
        detail = ""
    if profile.oov_tokens:
        extra = f"unknown words ignored: {', '.join(profile.oov_tokens[:8])}"
        detail = f"{detail}; {extra}" if detail else extra
    return Measurement(
        feature=feature,
        observed=profile.max_level.band.to_json() if profile.max_level else None,
        target=target.to_json(),
        satisfied=satisfied,
        detail=detail,
    )


@dataclass(frozen=True)
class JudgeVerdict:
    """Self-consistency outcome: raw sample labels, modal winner, vote share."""

    samples: tuple[Optional[str], ...]
    winner: str
    vote_share: float
    detail: str = ""


@dataclass(frozen=True)
class JudgeConfig:
    """Backend, decoding, sample count and templates for LLM judging."""

    backend: Backend
    decoding: DecodingParams = DecodingParams()
    samples: int = 5
    templates: TemplateSet = field(default_factory=default_templates)

    def __post_init__(self) -> None:
        if self.samples < 1:
            raise ValueError("judge sample count must be >= 1")
        if self.samples % 2 == 0:
            raise ValueError("judge sample count must be odd to prevent ties")


def _sample_labels(
    judge: JudgeConfig,
    template: str,
    fields: dict,
    allowed: frozenset[str],
    request_prefix: str,
) -> list[Optional[str]]:
    prompt = judge.templates.render(template, **fields)
    labels: list[Optional[str]] = []
    for i in range(judge.samples):
        response = judge.backend.generate(
            GenRequest("", prompt, judge.decoding, f"{request_prefix}-s{i}")
        )
        try:
            payload = extract_json_payload(response.text)
        except ParseError:
            labels.append(None)
            continue
        answer = payload.get("answer")
        label = " ".join(str(answer).lower().split()) if answer is not None else None
        labels.append(label if label in allowed else None)
    return labels


def _majority(samples: Sequence[Optional[str]]) -> tuple[str, float]:
    """Modal label and its share of ALL samples; "unknown" on ties or
    when nothing parsed. Invariant under permutation of the samples.
    """
    parsed = [s for s in samples if s is not None]
    if not parsed:
        return "unknown", 0.0
    counts = Counter(parsed)
    top = max(counts.values())
    winners = [label for label, c in counts.items() if c == top]
    if len(winners) > 1:
        return "unknown", 0.0
    return winners[0], top / len(samples)


_FACTUALITY_LABELS = frozenset({"true", "false", "not given"})
_SCOPE_LABELS = frozenset({"single-sentence", "multi-sentence", "not enough information"})
_TRANSFORMATION_LABELS = frozenset({"word matching", "paraphrasing", "inference"})


def judge_factuality(
    option: str, passage: str, judge: JudgeConfig, request_prefix: str = "factuality"
) -> JudgeVerdict:
    samples = _sample_labels(
        judge,
        "judge_factuality",
        {"passage": passage, "option": option},
        _FACTUALITY_LABELS,
        request_prefix,
    )
    winner, share = _majority(samples)
    return JudgeVerdict(tuple(samples), winner, share)


def judge_reasoning(
    option: str, passage: str, judge: JudgeConfig, request_prefix: str = "reasoning"
) -> JudgeVerdict:
    """Two self-consistency votes (evidence scope, transformation level)
    composed into one of the five reasoning-complexity labels.
    """
    fields = {"passage": passage, "option": option}
    scope_samples = _sample_labels(
        judge, "judge_evidence_scope", fields, _SCOPE_LABELS, f"{request_prefix}-scope"
    )
    trans_samples = _sample_labels(
        judge, "judge_transformation", fields, _TRANSFORMATION_LABELS, f"{request_prefix}-trans"
    )
    scope_winner, scope_share = _majority(scope_samples)
    trans_winner, trans_share = _majority(trans_samples)

    all_samples = tuple(
        [f"scope:{s}" if s else None for s in scope_samples]
        + [f"transformation:{s}" if s else None for s in trans_samples]
    )
    detail = f"scope share {scope_share:.2f}, transformation share {trans_share:.2f}"
    if scope_winner == "not enough information":
        return JudgeVerdict(all_samples, scope_winner, scope_share, detail)
    if scope_winner == "unknown" or trans_winner == "unknown":
        return JudgeVerdict(all_samples, "unknown", 0.0, detail)
    return JudgeVerdict(
        all_samples,
        f"{scope_winner} {trans_winner}",
        min(scope_share, trans_share),
        detail,
    )


def judge_neutrality(
    options: Sequence[str], judge: JudgeConfig, request_prefix: str = "neutrality"
) -> JudgeVerdict:
    """Vote on whether the option set is logically independent.

    Samples that flag dependent pairs contribute their pairs to the
    verdict detail.
    """
    prompt = judge.templates.render("judge_neutrality", options=render_options(options))
    samples: list[Optional[str]] = []
    pairs: set[tuple[str, str]] = set()
    for i in range(judge.samples):
        response = judge.backend.generate(
            GenRequest("", prompt, judge.decoding, f"{request_prefix}-s{i}")
        )
        try:
            payload = extract_json_payload(response.text)
        except ParseError:
            samples.append(None)
            continue
        independent = payload.get("independent")
        if not isinstance(independent, bool):
            samples.append(None)
            continue
        samples.append("independent" if independent else "dependent")
        for pair in payload.get("violating_pairs") or []:
            if isinstance(pair, (list, tuple)) and len(pair) == 2:
                a, b = (str(p).strip().upper() for p in pair)
                if a in OPTION_LABELS and b in OPTION_LABELS and a != b:
                    pairs.add(tuple(sorted((a, b))))
    winner, share = _majority(samples)
    detail = ""
    if winner == "dependent" and pairs:
        detail = "dependent pairs: " + ", ".join(f"{a}-{b}" for a, b in sorted(pairs))
    return JudgeVerdict(tuple(samples), winner, share, detail)


def _judged_measurement(feature: str, target: str, judge_call) -> Measurement:
    """Run one judge-backed measurement; backend failures become soft
    violations so a flaky judge cannot kill the revision loop.
    """
    try:
        verdict = judge_call()
    except BackendError as exc:
        logger.warning("judge unavailable for %s: %s", feature, exc)
        return Measurement(feature, None, target, False, "judge unavailable")
    detail = f"vote share {verdict.vote_share:.2f}"
    if verdict.detail:
        detail += f"; {verdict.detail}"
    return Measurement(feature, verdict.winner, target, verdict.winner == target, detail)


def evaluate_stage(
    state: ItemState,
    cs: FeatureConstraintSet,
    stage: Stage,
    lex: Lexicon,
    judge: Optional[JudgeConfig] = None,
    round_index: int = 0,
) -> ErrorReport:
    """Measure every constraint in scope for a stage.

    Passage stage: vocabulary, passage length, sentence length (3
    measurements, all rule-based). Options stage: factuality, reasoning
    and vocabulary per option plus set-level neutrality (13 measurements),
    ordered deterministically (options in index order, neutrality last).
    """
    if state.stage is not stage:
        raise ValueError(f"state is for stage {state.stage.value}, not {stage.value}")

    measurements: list[Measurement] = []
    if stage is Stage.PASSAGE:
        text = state.passage_text()
        measurements.append(eval_vocab(text, lex, cs.vocab_band))
        measurements.append(eval_passage_length(text, cs.passage_length))
        measurements.append(eval_sentence_length(text, cs.sentence_length))
        return ErrorReport(round_index, tuple(measurements))

    if judge is None:
        raise ValueError("the options stage requires a judge configuration")
    passage = state.passage_text()
    for i, constraint in enumerate(cs.options):
        letter = OPTION_LABELS[i].lower()
        option = state.options[i] if i < len(state.options) else ""
        fact_target = constraint.factuality.label
        reason_target = constraint.reasoning.label
        if not option.strip():
            missing = f"option {OPTION_LABELS[i]} is missing"
            measurements.append(
                Measurement(f"option_{letter}_factuality", None, fact_target, False, missing)
            )
            measurements.append(
                Measurement(f"option_{letter}_reasoning", None, reason_target, False, missing)
            )
        else:
            measurements.append(
                _judged_measurement(
                    f"option_{letter}_factuality",
                    fact_target,
                    lambda opt=option: judge_factuality(
                        opt, passage, judge, f"r{round_index}-opt{letter}-fact"
                    ),
                )
            )
            measurements.append(
                _judged_measurement(
                    f"option_{letter}_reasoning",
                    reason_target,
                    lambda opt=option: judge_reasoning(
                        opt, passage, judge, f"r{round_index}-opt{letter}-reason"
                    ),
                )
            )
        measurements.append(
            eval_vocab(option, lex, cs.vocab_band, feature=f"option_{letter}_vocab")
        )
    if cs.neutrality_required:
        measurements.append(
            _judged_measurement(
                "neutrality",
                "independent",
                lambda: judge_neutrality(state.options, judge, f"r{round_index}-neutrality"),
            )
        )
    return ErrorReport(round_index, tuple(measurements))
