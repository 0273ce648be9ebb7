"""Difficulty-calibrated constraint-sequence construction.

Candidate constraint sets carry a theoretical cognitive-demand rank.
Items generated per candidate are compared pairwise (same source only)
inside a sliding rank window; pairs whose mean alignment score exceeds
the threshold become directed edges, and the calibrated sequence is the
longest rank-ordered path through the validated graph.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from .core import (
    CefrBand,
    DifficultyPreset,
    EvidenceScope,
    Factuality,
    FeatureConstraintSet,
    Item,
    LengthBand,
    LengthKind,
    OptionConstraint,
    ReasoningComplexity,
    Transformation,
)
from .errors import CalibrationError, DataError
from .evaluation import JudgeConfig
from .metrics import ComparisonRecord, das_llm

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CandidateSet:
    """A constraint set with its intended position in the difficulty order."""

    id: str
    theoretical_rank: int
    constraints: FeatureConstraintSet

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "theoretical_rank": self.theoretical_rank,
            "constraints": self.constraints.to_json(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "CandidateSet":
        return cls(
            id=str(data["id"]),
            theoretical_rank=int(data["theoretical_rank"]),
            constraints=FeatureConstraintSet.from_json(data["constraints"]),
        )


def _check_ranks(candidates: Sequence[CandidateSet]) -> list[CandidateSet]:
    ordered = sorted(candidates, key=lambda c: c.theoretical_rank)
    ranks = [c.theoretical_rank for c in ordered]
    if ranks != list(range(1, len(ordered) + 1)):
        raise DataError(f"theoretical ranks must be unique and contiguous from 1, got {ranks}")
    return ordered


@dataclass(frozen=True)
class PairScore:
    """Mean alignment score for one (lower, higher) candidate pair."""

    lower: CandidateSet
    higher: CandidateSet
    das: float
    records: tuple[ComparisonRecord, ...] = ()


def compare_candidates(
    candidates: Sequence[CandidateSet],
    items_per_set: Mapping[str, Mapping[str, Item]],
    window: int,
    judge: JudgeConfig,
    n: int = 4,
) -> list[PairScore]:
    """Score every candidate pair whose rank gap is within the window.

    Items are paired per shared source document only; the score per pair
    is the mean over sources of das_llm(higher-rank item, lower-rank
    item), so positive means the intended order holds.
    """
    if window < 2:
        raise ValueError("window must be >= 2")
    ordered = _check_ranks(candidates)
    for candidate in ordered:
        if not items_per_set.get(candidate.id):
            raise DataError(f"no generated items for candidate {candidate.id!r}")

    scores: list[PairScore] = []
    for i, lower in enumerate(ordered):
        for higher in ordered[i + 1 :]:
            gap = higher.theoretical_rank - lower.theoretical_rank
            if gap >= window:
                break
            lower_items = items_per_set[lower.id]
            higher_items = items_per_set[higher.id]
            shared = sorted(set(lower_items) & set(higher_items))
            if not shared:
                raise DataError(
                    f"candidates {lower.id!r} and {higher.id!r} share no source documents"
                )
            values: list[float] = []
            records: list[ComparisonRecord] = []
            for source_id in shared:
                result = das_llm(
                    higher_items[source_id],
                    lower_items[source_id],
                    judge,
                    n=n,
                    pair_id=f"{lower.id}<{higher.id}:{source_id}",
                )
                values.append(result.score)
                records.extend(result.records)
            scores.append(PairScore(lower, higher, sum(values) / len(values), tuple(records)))
    return scores


@dataclass(frozen=True)
class Edge:
    lower: CandidateSet
    higher: CandidateSet
    das: float


@dataclass(frozen=True)
class ValidatedPairGraph:
    """Candidates plus the pairs whose alignment exceeded the threshold."""

    nodes: tuple[CandidateSet, ...]
    edges: tuple[Edge, ...]

    def successors(self, rank: int) -> list[Edge]:
        return sorted(
            (e for e in self.edges if e.lower.theoretical_rank == rank),
            key=lambda e: e.higher.theoretical_rank,
        )


def filter_pairs(
    scores: Sequence[PairScore],
    rho: float,
    candidates: Optional[Sequence[CandidateSet]] = None,
) -> ValidatedPairGraph:
    """Keep pairs with das strictly greater than the threshold.

    Monotone in rho: raising the threshold can only drop edges.
    """
    node_map: dict[int, CandidateSet] = {}
    for candidate in candidates or ():
        node_map[candidate.theoretical_rank] = candidate
    for score in scores:
        node_map.setdefault(score.lower.theoretical_rank, score.lower)
        node_map.setdefault(score.higher.theoretical_rank, score.higher)
    edges = tuple(
        Edge(s.lower, s.higher, s.das) for s in scores if s.das > rho
    )
    nodes = tuple(node_map[r] for r in sorted(node_map))
    return ValidatedPairGraph(nodes, edges)


def extract_sequence(
    graph: ValidatedPairGraph, target_length: Optional[int] = None
) -> list[CandidateSet]:
    """Longest strictly rank-increasing path through the validated graph.

    Every consecutive pair of the result is a validated edge. Ties break
    toward the lexicographically smallest rank sequence. With
    target_length, returns the best path of exactly that length instead.
    """
    if target_length is not None and target_length < 2:
        raise CalibrationError("target_length must be >= 2")
    by_rank = {c.theoretical_rank: c for c in graph.nodes}
    adjacency: dict[int, list[int]] = {r: [] for r in by_rank}
    for edge in graph.edges:
        adjacency[edge.lower.theoretical_rank].append(edge.higher.theoretical_rank)
    for rank in adjacency:
        adjacency[rank].sort()

    if target_length is None:
        # Longest path via DP over ranks, descending. best[r] is the
        # (-length, sequence) key of the best path starting at r; tuple
        # order makes "longer first, then lexicographically smaller" the
        # natural minimum.
        best: dict[int, tuple[int, tuple[int, ...]]] = {}
        for rank in sorted(by_rank, reverse=True):
            candidates = [(rank,) + best[s][1] for s in adjacency[rank]]
            seq = min(((-len(c), c) for c in candidates), default=(-1, (rank,)))[1]
            best[rank] = (-len(seq), seq)
        overall = min(best.values())[1]
        if len(overall) < 2:
            raise CalibrationError("no validated path of length >= 2")
        return [by_rank[r] for r in overall]

    paths = [
        path for path in _enumerate_paths(adjacency, sorted(by_rank)) if len(path) == target_length
    ]
    if not paths:
        raise CalibrationError(f"no validated path of length {target_length}")
    return [by_rank[r] for r in min(paths)]


def _enumerate_paths(
    adjacency: Mapping[int, Sequence[int]], ranks: Sequence[int]
) -> list[tuple[int, ...]]:
    """All rank-increasing paths (length >= 2); fine for <= 16 nodes."""
    paths: list[tuple[int, ...]] = []

    def _extend(path: tuple[int, ...]) -> None:
        if len(path) >= 2:
            paths.append(path)
        for nxt in adjacency[path[-1]]:
            _extend(path + (nxt,))

    for rank in ranks:
        _extend((rank,))
    return paths


def _preset_level(
    band: CefrBand,
    passage: LengthKind,
    sentence: LengthKind,
    option_specs: Sequence[tuple[Factuality, EvidenceScope, Optional[Transformation]]],
) -> FeatureConstraintSet:
    return FeatureConstraintSet(
        vocab_band=band,
        passage_length=LengthBand.passage(passage),
        sentence_length=LengthBand.avg_words(sentence),
        options=tuple(
            OptionConstraint(fact, ReasoningComplexity(scope, trans))
            for fact, scope, trans in option_specs
        ),
    )


def builtin_preset() -> DifficultyPreset:
    """The eight-level calibrated constraint sequence shipped with the package."""
    A, B, C = CefrBand.A, CefrBand.B, CefrBand.C
    SHORT, MEDIUM, LONG = LengthKind.SHORT, LengthKind.MEDIUM, LengthKind.LONG
    T, F = Factuality.TRUE, Factuality.FALSE
    S, M = EvidenceScope.SINGLE_SENTENCE, EvidenceScope.MULTI_SENTENCE
    WM, P, I = Transformation.WORD_MATCHING, Transformation.PARAPHRASING, Transformation.INFERENCE

    return DifficultyPreset(
        levels=(
            _preset_level(A, SHORT, SHORT, [(T, S, WM), (F, S, WM), (F, S, WM), (F, S, WM)]),
            _preset_level(A, SHORT, SHORT, [(T, S, P), (F, S, P), (F, S, WM), (F, S, WM)]),
            _preset_level(A, MEDIUM, SHORT, [(T, S, P), (F, S, P), (F, S, WM), (F, S, WM)]),
            _preset_level(B, MEDIUM, MEDIUM, [(T, S, P), (F, S, P), (F, S, P), (F, S, P)]),
            _preset_level(B, MEDIUM, MEDIUM, [(T, S, I), (F, S, I), (F, S, P), (F, S, P)]),
            _preset_level(B, MEDIUM, LONG, [(T, S, I), (F, S, I), (F, S, P), (F, S, P)]),
            _preset_level(C, LONG, LONG, [(T, S, I), (F, S, I), (F, S, I), (F, S, I)]),
            _preset_level(C, LONG, LONG, [(T, M, I), (F, M, I), (F, M, I), (F, M, I)]),
        )
    )
