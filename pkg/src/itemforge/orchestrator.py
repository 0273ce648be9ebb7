"""The two-stage closed-loop pipeline: draft, evaluate, plan, revise.

Candidates advance in lockstep rounds: every live candidate is revised and
re-evaluated before the next round starts, and the whole stage stops the
first round any candidate satisfies every constraint. When the round cap
is hit, a seed-deterministic uniformly random candidate is returned so
runs stay reproducible under the scripted backend.
"""

from __future__ import annotations

import enum
import hashlib
import logging
import random
from dataclasses import dataclass
from typing import Optional, Sequence

from .agents import (
    AgentRuntime,
    MemoryEntry,
    PlannerAction,
    PlannerDecision,
    RevisionMemory,
    draft,
    edit,
    plan,
    refine,
    reword,
)
from .backend import DecodingParams, TokenLedger
from .core import (
    DEFAULT_STEM,
    DifficultyPreset,
    FeatureConstraintSet,
    Item,
    ItemState,
    Provenance,
    Stage,
)
from .errors import DataError, ItemForgeError, ParseError
from .evaluation import ErrorReport, JudgeConfig, evaluate_stage, merge_reports, split_sentences
from .lexicon import Lexicon
from .metrics import achievement_ratio
from .prompts import render_option_constraints

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    """Operating parameters of one generation run."""

    judge: JudgeConfig
    n_drafts: int = 5
    max_passage_rounds: int = 20
    max_option_rounds: int = 100
    creativity_t: int = 3
    seed: int = 0
    decoding: DecodingParams = DecodingParams()
    stem: str = DEFAULT_STEM

    def __post_init__(self) -> None:
        if self.n_drafts < 1:
            raise ValueError("n_drafts must be >= 1")
        if self.max_passage_rounds < 1 or self.max_option_rounds < 1:
            raise ValueError("round caps must be >= 1")
        if self.creativity_t < 1:
            raise ValueError("creativity_t must be >= 1")

    def cap(self, stage: Stage) -> int:
        return self.max_passage_rounds if stage is Stage.PASSAGE else self.max_option_rounds


class OutcomeKind(enum.Enum):
    SATISFIED_AT = "satisfied_at"
    FALLBACK_RANDOM = "fallback_random"


@dataclass(frozen=True)
class StageOutcome:
    kind: OutcomeKind
    round: int
    candidate: int

    def to_json(self) -> dict:
        return {"kind": self.kind.value, "round": self.round, "candidate": self.candidate}


@dataclass(frozen=True)
class RoundRecord:
    """One candidate's trace for one round."""

    round: int
    candidate: int
    report: ErrorReport
    decision: Optional[PlannerDecision]
    agent: Optional[str]
    state_digest: str
    tokens: int

    def to_json(self) -> dict:
        return {
            "round": self.round,
            "candidate": self.candidate,
            "report": self.report.to_json(),
            "decision": self.decision.to_json() if self.decision else None,
            "agent": self.agent,
            "state_digest": self.state_digest,
            "tokens": self.tokens,
        }


@dataclass
class RunLog:
    stage: Stage
    records: list[RoundRecord]
    outcome: StageOutcome
    ledger: TokenLedger

    def final_report(self) -> ErrorReport:
        """Last report of the delivered candidate."""
        for record in reversed(self.records):
            if record.candidate == self.outcome.candidate:
                return record.report
        raise ValueError("no records for the delivered candidate")

    def rounds_to_json(self) -> list[dict]:
        by_round: dict[int, list[dict]] = {}
        for record in self.records:
            by_round.setdefault(record.round, []).append(record.to_json())
        return [
            {"stage": self.stage.value, "round": r, "candidates": entries}
            for r, entries in sorted(by_round.items())
        ]


def _derive_seed(seed: int, source_id: str, level: int, stage: str) -> int:
    """Stable per-run RNG seed, independent of process hash randomization."""
    digest = hashlib.sha256(f"{seed}:{source_id}:{level}:{stage}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def _unique_backends(*backends) -> list:
    seen: dict[int, object] = {}
    for backend in backends:
        if backend is not None:
            seen.setdefault(id(backend), backend)
    return list(seen.values())


def _token_total(backends: Sequence) -> int:
    return sum(b.total_output_tokens for b in backends)


def _first_satisfied(reports: Sequence[ErrorReport]) -> Optional[int]:
    for i, report in enumerate(reports):
        if report.all_satisfied:
            return i
    return None


def run_stage(
    stage: Stage,
    text: str,
    cs: FeatureConstraintSet,
    config: RunConfig,
    lex: Lexicon,
    rt: AgentRuntime,
    source_id: str = "",
    level: int = 0,
    ledger: Optional[TokenLedger] = None,
) -> tuple[ItemState, RunLog]:
    """Run one stage's generate-evaluate-revise loop to completion.

    ``text`` is the source document for the passage stage and the finished
    passage for the options stage. Round 0 drafts and evaluates; each
    further round plans, dispatches one revision agent per unsatisfied
    candidate, and re-evaluates.
    """
    if not text.strip():
        raise DataError("empty input text for stage " + stage.value)
    cap = config.cap(stage)
    ledger = ledger if ledger is not None else TokenLedger()
    backends = _unique_backends(rt.backend, config.judge.backend)
    rng = random.Random(_derive_seed(config.seed, source_id, level, stage.value))
    context = split_sentences(text) if stage is Stage.OPTIONS else None

    n = config.n_drafts
    states: list[ItemState] = []
    reports: list[ErrorReport] = []
    memories = [RevisionMemory() for _ in range(n)]
    records: list[RoundRecord] = []

    round_tokens = 0
    for i in range(n):
        before = _token_total(backends)
        state = draft(rt, text, cs, stage, context=context, n=1, round_index=0)[0]
        report = evaluate_stage(state, cs, stage, lex, config.judge, round_index=0)
        memories[i].observe(report)
        spent = _token_total(backends) - before
        round_tokens += spent
        states.append(state)
        reports.append(report)
        records.append(RoundRecord(0, i, report, None, None, state.digest(), spent))
    ledger.record(stage.value, 0, round_tokens)

    winner = _first_satisfied(reports)
    r = 0
    while winner is None and r < cap:
        r += 1
        round_tokens = 0
        for i in range(n):
            before = _token_total(backends)
            decision = plan(rt, text, states[i], reports[i], memories[i], config.creativity_t, cs)
            if decision.action is PlannerAction.CALL_EDITOR:
                agent = "editor"
                response = ""
                new_state = edit(
                    rt, text, states[i], cs, decision.instruction,
                    target_option=decision.target_option, round_index=r,
                )
            else:
                agent = "reworder"
                outcome = reword(
                    rt, text, states[i], cs.vocab_band, decision.instruction, lex,
                    target_option=decision.target_option, round_index=r,
                )
                new_state = outcome.new_state
                response = outcome.message
            memories[i].record(
                MemoryEntry(r, decision.action, decision.instruction, decision.target_option, response)
            )
            report = evaluate_stage(new_state, cs, stage, lex, config.judge, round_index=r)
            memories[i].observe(report)
            spent = _token_total(backends) - before
            round_tokens += spent
            states[i] = new_state
            reports[i] = report
            records.append(RoundRecord(r, i, report, decision, agent, new_state.digest(), spent))
        ledger.record(stage.value, r, round_tokens)
        winner = _first_satisfied(reports)

    if winner is not None:
        outcome = StageOutcome(OutcomeKind.SATISFIED_AT, r, winner)
        chosen = states[winner]
    else:
        pick = rng.randrange(n)
        outcome = StageOutcome(OutcomeKind.FALLBACK_RANDOM, r, pick)
        chosen = states[pick]
        logger.info("stage %s hit the %d-round cap; falling back to candidate %d", stage.value, cap, pick)
    return chosen, RunLog(stage, records, outcome, ledger)


@dataclass
class ItemLog:
    """Both stage logs plus the shared token ledger for one item run."""

    passage: RunLog
    options: RunLog
    ledger: TokenLedger

    def item_report(self) -> ErrorReport:
        return merge_reports(self.passage.final_report(), self.options.final_report())


def generate_item(
    source_text: str,
    cs: FeatureConstraintSet,
    config: RunConfig,
    lex: Lexicon,
    rt: AgentRuntime,
    source_id: str = "source",
    level: int = 0,
    run_id: str = "",
) -> tuple[Item, ItemLog]:
    """Generate one item: passage stage, refinement, options stage.

    The options stage is conditioned on the refined passage (or the
    pre-refine passage when the refinement was discarded). A stage that
    fell back unsatisfied is flagged in the item's provenance.
    """
    if not source_text.strip():
        raise DataError("empty source text")
    ledger = TokenLedger()
    backends = _unique_backends(rt.backend, config.judge.backend)

    passage_state, passage_log = run_stage(
        Stage.PASSAGE, source_text, cs, config, lex, rt,
        source_id=source_id, level=level, ledger=ledger,
    )
    sentences = list(passage_state.passage_sentences)
    if passage_log.outcome.kind is OutcomeKind.SATISFIED_AT:
        before = _token_total(backends)
        sentences = refine(rt, sentences, cs, lex)
        ledger.record("refine", 0, _token_total(backends) - before)
    else:
        logger.info("passage unsatisfied at cap; skipping refinement")
    passage_text = " ".join(sentences)

    options_state, options_log = run_stage(
        Stage.OPTIONS, passage_text, cs, config, lex, rt,
        source_id=source_id, level=level, ledger=ledger,
    )
    item = Item(
        passage=passage_text,
        stem=config.stem,
        options=options_state.options,
        provenance=Provenance(
            source_id=source_id,
            level=level,
            run_id=run_id,
            passage_unsatisfied=passage_log.outcome.kind is OutcomeKind.FALLBACK_RANDOM,
            options_unsatisfied=options_log.outcome.kind is OutcomeKind.FALLBACK_RANDOM,
        ),
    )
    return item, ItemLog(passage_log, options_log, ledger)


@dataclass
class BatchResult:
    source_id: str
    level: int
    item: Optional[Item] = None
    log: Optional[ItemLog] = None
    error: Optional[str] = None


def generate_batch(
    sources: Sequence[tuple[str, str]],
    preset: DifficultyPreset,
    config: RunConfig,
    lex: Lexicon,
    rt: AgentRuntime,
    run_id: str = "",
    levels: Optional[Sequence[int]] = None,
) -> list[BatchResult]:
    """Independent runs over the sources x levels product, source-major order.

    Per-run failures are recorded and the batch continues.
    """
    level_numbers = list(levels) if levels is not None else list(range(1, len(preset.levels) + 1))
    results: list[BatchResult] = []
    for source_id, text in sources:
        for number in level_numbers:
            cs = preset.level(number)
            try:
                item, log = generate_item(
                    text, cs, config, lex, rt, source_id=source_id, level=number, run_id=run_id
                )
                results.append(BatchResult(source_id, number, item=item, log=log))
            except (ItemForgeError, ValueError) as exc:
                logger.error("run %s level %d failed: %s", source_id, number, exc)
                results.append(BatchResult(source_id, number, error=str(exc)))
    return results


class BaselineMode(enum.Enum):
    FEATURE_DIRECT = "feature_direct"
    LEVEL_DIRECT = "level_direct"


@dataclass
class BaselineResult:
    item: Item
    chosen_sample: int
    sample_ars: list[Optional[float]]
    report: Optional[ErrorReport] = None


def single_pass_baseline(
    source_text: str,
    cs_or_level,
    mode: BaselineMode,
    config: RunConfig,
    lex: Lexicon,
    rt: AgentRuntime,
    samples: int = 1,
    n_levels: int = 8,
    source_id: str = "source",
    level: int = 0,
    run_id: str = "",
) -> BaselineResult:
    """Single-pass prompting without the revision loop.

    Feature-direct mode embeds the full constraint set and, with several
    samples, returns the item with the highest achievement ratio.
    Level-direct mode only names an abstract difficulty level and returns
    the first parseable sample.
    """
    if not source_text.strip():
        raise DataError("empty source text")
    if samples < 1:
        raise ValueError("samples must be >= 1")

    if mode is BaselineMode.FEATURE_DIRECT:
        if not isinstance(cs_or_level, FeatureConstraintSet):
            raise ValueError("feature-direct mode requires a constraint set")
        cs = cs_or_level
        prompt = rt.templates.render(
            "baseline_feature",
            source_document=source_text,
            passage_length=cs.passage_length.kind.to_json(),
            sentence_length=cs.sentence_length.kind.to_json(),
            vocab_level=cs.vocab_band.name,
            option_constraints=render_option_constraints(cs),
        )
    else:
        if not isinstance(cs_or_level, int):
            raise ValueError("level-direct mode requires a level number")
        cs = None
        level = cs_or_level
        prompt = rt.templates.render(
            "baseline_level", source_document=source_text, level=cs_or_level, n_levels=n_levels
        )

    best: Optional[tuple[float, int, Item, ErrorReport]] = None
    first_valid: Optional[tuple[int, Item]] = None
    ars: list[Optional[float]] = []
    from .backend import generate_json  # local import keeps module top uncluttered

    for s in range(samples):
        payload = generate_json(rt.backend, "", prompt, rt.decoding, f"baseline-s{s}")
        item = _parse_baseline_item(payload, config.stem, source_id, level, run_id)
        if item is None:
            ars.append(None)
            continue
        if first_valid is None:
            first_valid = (s, item)
        if cs is None:
            ars.append(None)
            continue
        report = evaluate_item(item, cs, lex, config.judge)
        ar = achievement_ratio(report)
        ars.append(ar)
        if best is None or ar > best[0]:
            best = (ar, s, item, report)

    if cs is not None and best is not None:
        return BaselineResult(best[2], best[1], ars, best[3])
    if first_valid is not None:
        return BaselineResult(first_valid[1], first_valid[0], ars)
    raise ParseError("no baseline sample produced a usable item")


def _parse_baseline_item(
    payload: Optional[dict], stem: str, source_id: str, level: int, run_id: str
) -> Optional[Item]:
    if payload is None:
        return None
    passage = payload.get("passage")
    options = payload.get("options")
    if not isinstance(passage, str) or not passage.strip():
        return None
    if not (
        isinstance(options, list)
        and len(options) == 4
        and all(isinstance(o, str) and o.strip() for o in options)
    ):
        return None
    try:
        return Item(
            passage=passage.strip(),
            stem=stem,
            options=tuple(o.strip() for o in options),
            provenance=Provenance(source_id, level, run_id),
        )
    except ValueError:
        return None


def evaluate_item(item: Item, cs: FeatureConstraintSet, lex: Lexicon, judge: JudgeConfig) -> ErrorReport:
    """Measure a finished item against both stages' constraints."""
    sentences = tuple(split_sentences(item.passage))
    passage_report = evaluate_stage(
        ItemState(Stage.PASSAGE, sentences), cs, Stage.PASSAGE, lex
    )
    options_report = evaluate_stage(
        ItemState(Stage.OPTIONS, sentences, item.options), cs, Stage.OPTIONS, lex, judge
    )
    return merge_reports(passage_report, options_report)
