"""Constraint-satisfaction and difficulty-alignment metrics.

Success and achievement ratio read evaluation reports; the difficulty
alignment score (DAS) aggregates symmetric forward/reversed pairwise
judge comparisons into [-1, 1]; the human variant weights three
annotators' direction judgments by their perceived-gap category.
"""

from __future__ import annotations

import csv
import enum
import logging
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .backend import FORMAT_REMINDER, GenRequest, extract_json_payload
from .core import Item
from .errors import ParseError
from .evaluation import ErrorReport, JudgeConfig
from .prompts import render_item

logger = logging.getLogger(__name__)


def success(report: ErrorReport) -> bool:
    """An item succeeds only when every measured constraint holds."""
    if not report.measurements:
        raise ValueError("empty report")
    return report.all_satisfied


def achievement_ratio(report: ErrorReport) -> float:
    """Percentage of satisfied constraints in a report."""
    total = len(report.measurements)
    if total == 0:
        raise ValueError("empty report")
    satisfied = sum(1 for m in report.measurements if m.satisfied)
    return 100.0 * satisfied / total


def success_ratio(reports: Sequence[ErrorReport]) -> float:
    """Percentage of reports with every constraint satisfied."""
    if not reports:
        raise ValueError("no reports")
    return 100.0 * sum(1 for r in reports if success(r)) / len(reports)


def mean_achievement_ratio(reports: Sequence[ErrorReport]) -> float:
    if not reports:
        raise ValueError("no reports")
    return statistics.fmean(achievement_ratio(r) for r in reports)


class Direction(enum.Enum):
    FORWARD = "forward"
    REVERSED = "reversed"


@dataclass(frozen=True)
class ComparisonRecord:
    """One stochastic pairwise judgment; outcome is +1 or -1."""

    pair_id: str
    direction: Direction
    n: int
    outcome: int
    raw_digest: str = ""

    def to_json(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "direction": self.direction.value,
            "n": self.n,
            "outcome": self.outcome,
            "raw_digest": self.raw_digest,
        }


@dataclass(frozen=True)
class DasScore:
    """Aggregated difficulty alignment in [-1, 1] plus the raw judgments."""

    score: float
    records: tuple[ComparisonRecord, ...]
    requested_n: int
    effective_samples: int

    def __float__(self) -> float:
        return self.score


def _compare_once(
    first: Item, second: Item, judge: JudgeConfig, request_id: str
) -> Optional[int]:
    """One +-1 comparison: +1 when the judge calls the first item harder.

    A malformed answer gets one format-reminder re-prompt; None means the
    sample stays unusable.
    """
    prompt = judge.templates.render(
        "judge_difficulty", first_item=render_item(first), second_item=render_item(second)
    )
    for attempt, suffix in enumerate(("", FORMAT_REMINDER)):
        response = judge.backend.generate(
            GenRequest("", prompt + suffix, judge.decoding, f"{request_id}#{attempt}")
        )
        try:
            payload = extract_json_payload(response.text)
        except ParseError:
            continue
        answer = str(payload.get("more_difficult", "")).strip().lower()
        if answer == "first":
            return 1
        if answer == "second":
            return -1
    return None


def das_llm(
    item_i: Item,
    item_j: Item,
    judge: JudgeConfig,
    n: int = 4,
    pair_id: str = "pair",
) -> DasScore:
    """Difficulty alignment score between two items.

    Runs n forward comparisons of (item_i, item_j) and n reversed
    comparisons of (item_j, item_i); a positive score means item_i is
    judged more difficult. Forward outcomes count positively and reversed
    outcomes negatively, normalized by the total number of usable samples,
    which cancels positional bias. A sample that stays unparseable after a
    re-prompt is re-drawn once, then excluded with the denominator
    adjusted.
    """
    if n < 1:
        raise ValueError("n must be >= 1")

    records: list[ComparisonRecord] = []
    contributions: list[int] = []
    for direction in (Direction.FORWARD, Direction.REVERSED):
        first, second = (item_i, item_j) if direction is Direction.FORWARD else (item_j, item_i)
        for sample in range(n):
            request_id = f"{pair_id}-{direction.value}-n{sample}"
            outcome = _compare_once(first, second, judge, request_id)
            if outcome is None:
                outcome = _compare_once(first, second, judge, request_id + "-redraw")
            if outcome is None:
                logger.warning("comparison sample %s excluded (unparseable)", request_id)
                continue
            records.append(ComparisonRecord(pair_id, direction, sample, outcome))
            contributions.append(outcome if direction is Direction.FORWARD else -outcome)

    if not contributions:
        raise ParseError(f"no usable comparison samples for {pair_id}")
    score = sum(contributions) / len(contributions)
    return DasScore(score, tuple(records), n, len(contributions))


class GapCategory(enum.Enum):
    """Perceived difficulty gap, consolidated to two weight classes."""

    NO_DIFFERENCE = "no_difference"          # weight 0.5
    MODERATE_OR_LARGE = "moderate_or_large"  # weight 1.0

    @property
    def weight(self) -> float:
        return 0.5 if self is GapCategory.NO_DIFFERENCE else 1.0


@dataclass(frozen=True)
class HumanAnnotation:
    """One annotator's pairwise judgment: direction (+1/-1) and gap size."""

    annotator_id: str
    judgment: int
    gap: GapCategory

    def __post_init__(self) -> None:
        if self.judgment not in (1, -1):
            raise ValueError("judgment must be +1 or -1")


def das_human(annotations: Sequence[HumanAnnotation]) -> float:
    """Weighted mean of three annotators' direction judgments.

    All three agreeing with a perceptible gap gives exactly 1.0; a lone
    dissenter with everyone marking a minimal gap lands near zero
    (|score| = 1/6). Invariant under annotator order.
    """
    if len(annotations) != 3:
        raise ValueError(f"expected exactly 3 annotations, got {len(annotations)}")
    return sum(a.gap.weight * a.judgment for a in annotations) / 3.0


def car(pair_annotations: Sequence[Sequence[HumanAnnotation]]) -> float:
    """Percentage of pairs where all annotators judged the intended direction."""
    if not pair_annotations:
        logger.warning("CAR over zero pairs; returning 0")
        return 0.0
    unanimous = sum(
        1 for annotations in pair_annotations if all(a.judgment == 1 for a in annotations)
    )
    return 100.0 * unanimous / len(pair_annotations)


def validity_score(item: Item, judge: JudgeConfig, samples: int = 8) -> float:
    """Mean of repeated 3-point validity ratings from the judge.

    Unparseable samples are excluded with a warning; all samples failing
    is an error.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    prompt = judge.templates.render("judge_validity", item=render_item(item))
    scores: list[int] = []
    for i in range(samples):
        response = judge.backend.generate(
            GenRequest("", prompt, judge.decoding, f"validity-s{i}")
        )
        try:
            payload = extract_json_payload(response.text)
        except ParseError:
            logger.warning("validity sample %d unparseable; excluded", i)
            continue
        score = payload.get("score")
        if isinstance(score, bool) or not isinstance(score, (int, float)) or not 1 <= score <= 3:
            logger.warning("validity sample %d out of range; excluded", i)
            continue
        scores.append(int(score))
    if not scores:
        raise ParseError("all validity samples unparseable")
    return statistics.fmean(scores)


def export_comparisons_csv(records: Sequence[ComparisonRecord], path) -> None:
    """Write comparison records as pair_id,direction,n,outcome rows."""
    with open(Path(path), "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["pair_id", "direction", "n", "outcome"])
        for record in records:
            writer.writerow([record.pair_id, record.direction.value, record.n, record.outcome])


def summary_json(
    sr: Optional[float] = None,
    ar_mean: Optional[float] = None,
    das_scores: Sequence[float] = (),
    car_value: Optional[float] = None,
    validity_mean: Optional[float] = None,
) -> dict:
    """The fixed-shape metrics summary used by the CLI reports."""
    das_list = list(das_scores)
    return {
        "sr": sr,
        "ar_mean": ar_mean,
        "das_mean": statistics.fmean(das_list) if das_list else None,
        "das_std": statistics.stdev(das_list) if len(das_list) > 1 else (0.0 if das_list else None),
        "car": car_value,
        "validity_mean": validity_mean,
    }
