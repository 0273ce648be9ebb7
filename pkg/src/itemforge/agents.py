"""The five role-specialized agents: Drafter, Planner, Editor, Reworder, Refiner.

Agents are stateless prompt builders plus response parsers over a
generation backend. Each revision produces a fresh immutable ItemState;
per-candidate history lives in a RevisionMemory owned by the caller.
Unparseable model output never crashes a round: after one re-prompt the
round completes with the state unchanged (or, for drafting, an invalid
placeholder state that gets revised from scratch).
"""

from __future__ import annotations

import enum
import logging
import re
from dataclasses import dataclass
from typing import Optional, Sequence

from .backend import Backend, DecodingParams, FORMAT_REMINDER, GenRequest, extract_json_payload, generate_json
from .core import (
    OPTION_LABELS,
    CefrBand,
    FeatureConstraintSet,
    ItemState,
    Stage,
)
from .errors import ParseError
from .evaluation import ErrorReport, evaluate_stage, split_sentences
from .lexicon import Lexicon, assign_levels, normalize_token, profile_text
from .prompts import (
    TemplateSet,
    parse_option_ref,
    render_json,
    render_option_constraints,
    render_options,
    render_sentences,
)

logger = logging.getLogger(__name__)

# Appended to the planner prompt once a constraint has stagnated for the
# configured number of rounds.
CREATIVITY_CLAUSE = (
    "IMPORTANT: You have failed to satisfy the same constraint for several rounds in a row. "
    "Stop making incremental adjustments. Shift to a radical revision strategy, such as "
    "excising the problematic segments entirely and regenerating them from scratch."
)


@dataclass(frozen=True)
class AgentRuntime:
    """Shared plumbing for all agent calls in one run."""

    backend: Backend
    templates: TemplateSet
    decoding: DecodingParams = DecodingParams()


class PlannerAction(enum.Enum):
    CALL_EDITOR = "call_editor"
    CALL_REWORDER = "call_reworder"


@dataclass(frozen=True)
class PlannerDecision:
    """What to do next: which agent, with what instruction, on which option.

    The decision never carries synonym suggestions; the Reworder derives
    replacements from the lexicon on its own.
    """

    action: PlannerAction
    instruction: str
    target_option: Optional[int] = None
    creativity_mode: bool = False

    def to_json(self) -> dict:
        return {
            "action": self.action.value,
            "instruction": self.instruction,
            "target_option": self.target_option,
            "creativity_mode": self.creativity_mode,
        }


@dataclass(frozen=True)
class MemoryEntry:
    round: int
    action: PlannerAction
    instruction: str
    target_option: Optional[int] = None
    # The Reworder's bottleneck message; the Editor never sends feedback.
    response: str = ""


class RevisionMemory:
    """Planner history plus per-constraint stagnation counters.

    A constraint's counter counts consecutive rounds it has been observed
    unsatisfied; it resets to zero the first round the constraint holds.
    """

    def __init__(self):
        self.entries: list[MemoryEntry] = []
        self.stagnation: dict[str, int] = {}

    def observe(self, report: ErrorReport) -> None:
        for m in report.measurements:
            if m.satisfied:
                self.stagnation[m.feature] = 0
            else:
                self.stagnation[m.feature] = self.stagnation.get(m.feature, 0) + 1

    def record(self, entry: MemoryEntry) -> None:
        self.entries.append(entry)

    def select_entries(self, tail: int = 10, window_rounds: int = 0) -> list[MemoryEntry]:
        """The last ``tail`` entries plus everything inside the stagnation
        window, so long histories stay bounded without losing the context
        of the constraint currently being fought.
        """
        if not self.entries:
            return []
        keep = set(range(max(0, len(self.entries) - tail), len(self.entries)))
        if window_rounds:
            horizon = self.entries[-1].round - window_rounds + 1
            keep.update(i for i, e in enumerate(self.entries) if e.round >= horizon)
        return [self.entries[i] for i in sorted(keep)]

    def render(self, tail: int = 10, window_rounds: int = 0) -> str:
        entries = self.select_entries(tail, window_rounds)
        if not entries:
            return "(no previous messages)"
        lines = []
        for e in entries:
            target = f" [option {OPTION_LABELS[e.target_option]}]" if e.target_option is not None else ""
            label = "Call_Editor" if e.action is PlannerAction.CALL_EDITOR else "Call_Reworder"
            line = f"(round {e.round}) {label}{target}: {e.instruction}"
            if e.response:
                line += f" -> reply: {e.response}"
            lines.append(line)
        return "\n".join(lines)


@dataclass(frozen=True)
class RewordOutcome:
    """Result of one rewording pass: the new state plus a bottleneck report."""

    new_state: ItemState
    message: str = ""


def _vocab_letter(band: CefrBand) -> str:
    return band.name


def _constraint_fields(cs: FeatureConstraintSet) -> dict:
    return {
        "passage_length": cs.passage_length.kind.to_json(),
        "sentence_length": cs.sentence_length.kind.to_json(),
        "vocab_level": _vocab_letter(cs.vocab_band),
    }


def _parse_drafter_payload(
    payload: Optional[dict], stage: Stage, context: Sequence[str], round_index: int
) -> ItemState:
    if payload is not None:
        if stage is Stage.PASSAGE:
            passage = payload.get("passage")
            if isinstance(passage, str) and passage.strip():
                return ItemState(
                    Stage.PASSAGE,
                    tuple(split_sentences(passage)),
                    round_created=round_index,
                )
        else:
            options = payload.get("options")
            if (
                isinstance(options, list)
                and len(options) == 4
                and all(isinstance(o, str) and o.strip() for o in options)
            ):
                return ItemState(
                    Stage.OPTIONS,
                    tuple(context),
                    tuple(o.strip() for o in options),
                    round_created=round_index,
                )
    logger.warning("drafter output unusable; emitting invalid placeholder state")
    return ItemState(
        stage,
        tuple(context) if stage is Stage.OPTIONS else (),
        (),
        round_created=round_index,
        valid=False,
    )


def draft(
    rt: AgentRuntime,
    source: str,
    cs: FeatureConstraintSet,
    stage: Stage,
    context: Optional[Sequence[str]] = None,
    n: int = 1,
    round_index: int = 0,
) -> list[ItemState]:
    """Sample n independent initial states for a stage.

    The options stage drafts against the finished passage (``context``);
    candidates that cannot be parsed become invalid placeholder states to
    be revised from scratch in the following round.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if stage is Stage.OPTIONS and not context:
        raise ValueError("the options stage requires a context passage")
    context = tuple(context or ())

    if stage is Stage.PASSAGE:
        prompt = rt.templates.render(
            "drafter_passage", source_document=source, **_constraint_fields(cs)
        )
    else:
        prompt = rt.templates.render(
            "drafter_options",
            context=" ".join(context),
            option_constraints=render_option_constraints(cs),
            vocab_level=_vocab_letter(cs.vocab_band),
        )

    states = []
    for i in range(n):
        payload = generate_json(rt.backend, "", prompt, rt.decoding, f"draft-{stage.value}-c{i}")
        states.append(_parse_drafter_payload(payload, stage, context, round_index))
    return states


_ACTION_ALIASES = {
    "calleditor": PlannerAction.CALL_EDITOR,
    "editor": PlannerAction.CALL_EDITOR,
    "callreworder": PlannerAction.CALL_REWORDER,
    "reworder": PlannerAction.CALL_REWORDER,
}


def _parse_action(value) -> Optional[PlannerAction]:
    if not isinstance(value, str):
        return None
    key = re.sub(r"[^a-z]", "", value.lower())
    return _ACTION_ALIASES.get(key)


def plan(
    rt: AgentRuntime,
    source: str,
    state: ItemState,
    report: ErrorReport,
    memory: RevisionMemory,
    t: int,
    cs: FeatureConstraintSet,
) -> PlannerDecision:
    """Decide the next revision action for one candidate.

    Creativity mode activates once any currently violated constraint has
    stagnated for at least ``t`` consecutive rounds; the prompt then
    carries an explicit escalation clause. If the model cannot produce a
    usable action after one re-prompt, a deterministic fallback routes
    vocabulary violations to the Reworder and everything else to the
    Editor, with the raw error report as the instruction.
    """
    if report.all_satisfied:
        raise ValueError("plan requires at least one violation")

    violated = [m.feature for m in report.violations]
    creativity = any(memory.stagnation.get(f, 0) >= t for f in violated)
    window = max((memory.stagnation.get(f, 0) for f in violated), default=0)
    report_json = render_json(report.to_json())
    note = f"\n{CREATIVITY_CLAUSE}\n" if creativity else ""

    if state.stage is Stage.PASSAGE:
        prompt = rt.templates.render(
            "planner_passage",
            source_document=source,
            revision_memory=memory.render(window_rounds=window),
            current_state=render_sentences(state.passage_sentences),
            error_report=report_json,
            threshold=t,
            creativity_note=note,
            **_constraint_fields(cs),
        )
    else:
        prompt = rt.templates.render(
            "planner_options",
            context=state.passage_text(),
            revision_memory=memory.render(window_rounds=window),
            current_state=render_options(state.options),
            option_constraints=render_option_constraints(cs),
            vocab_level=_vocab_letter(cs.vocab_band),
            error_report=report_json,
            threshold=t,
            creativity_note=note,
        )

    for attempt, suffix in enumerate(("", FORMAT_REMINDER)):
        response = rt.backend.generate(
            GenRequest("", prompt + suffix, rt.decoding, f"plan-r{report.round}#{attempt}")
        )
        try:
            payload = extract_json_payload(response.text)
        except ParseError:
            continue
        action = _parse_action(payload.get("action"))
        if action is None:
            continue
        instruction = payload.get("message")
        instruction = instruction if isinstance(instruction, str) else ""
        target = None
        if state.stage is Stage.OPTIONS:
            target = parse_option_ref(payload.get("target_option"))
        return PlannerDecision(action, instruction, target, creativity)

    logger.warning("planner output unusable twice; using deterministic fallback")
    has_vocab_violation = any(f == "vocab" or f.endswith("_vocab") for f in violated)
    fallback = PlannerAction.CALL_REWORDER if has_vocab_violation else PlannerAction.CALL_EDITOR
    return PlannerDecision(fallback, report_json, None, creativity)


def _parse_sentence_dict(payload: dict) -> Optional[list[str]]:
    """Parse the editor's ``{"sentence 1": ...}`` output into ordered sentences."""
    numbered: list[tuple[int, str]] = []
    for key, value in payload.items():
        match = re.search(r"(\d+)", str(key))
        if match is None or not isinstance(value, str):
            return None
        numbered.append((int(match.group(1)), value.strip()))
    sentences = [text for _, text in sorted(numbered) if text]
    return sentences or None


def edit(
    rt: AgentRuntime,
    source: str,
    state: ItemState,
    cs: FeatureConstraintSet,
    instruction: str,
    target_option: Optional[int] = None,
    round_index: int = 0,
) -> ItemState:
    """Holistic revision of everything except vocabulary level.

    The Editor returns only the revised state, never a feedback message.
    Parse failures leave the state unchanged and the loop alive.
    """
    if state.stage is Stage.PASSAGE:
        fields = _constraint_fields(cs)
        prompt = rt.templates.render(
            "editor_passage",
            source_document=source,
            current_state=render_sentences(state.passage_sentences),
            passage_length=fields["passage_length"],
            sentence_length=fields["sentence_length"],
            planner_instruction=instruction,
        )
    else:
        prompt = rt.templates.render(
            "editor_options",
            context=state.passage_text(),
            current_state=render_options(state.options),
            option_constraints=render_option_constraints(cs),
            planner_instruction=instruction,
            target_option=OPTION_LABELS[target_option] if target_option is not None else "all",
        )
    payload = generate_json(rt.backend, "", prompt, rt.decoding, f"edit-r{round_index}")
    if payload is None:
        logger.warning("editor output unusable; state unchanged")
        return state

    if state.stage is Stage.PASSAGE:
        sentences = _parse_sentence_dict(payload)
        if sentences is None:
            logger.warning("editor sentence payload unusable; state unchanged")
            return state
        return ItemState(Stage.PASSAGE, tuple(sentences), round_created=round_index)

    options = payload.get("options")
    if not (
        isinstance(options, list)
        and len(options) == 4
        and all(isinstance(o, str) and o.strip() for o in options)
    ):
        logger.warning("editor options payload unusable; state unchanged")
        return state
    return ItemState(
        Stage.OPTIONS,
        state.passage_sentences,
        tuple(o.strip() for o in options),
        round_created=round_index,
    )


def _reword_lines(state: ItemState, target_option: Optional[int]) -> list[str]:
    if state.stage is Stage.PASSAGE:
        return list(state.passage_sentences)
    if target_option is not None:
        return [state.options[target_option]]
    return list(state.options)


def _parse_suggestions(payload: dict) -> dict[int, dict[str, list[str]]]:
    problems: dict[int, dict[str, list[str]]] = {}
    for key, value in payload.items():
        match = re.search(r"(\d+)", str(key))
        if match is None or not isinstance(value, dict):
            continue
        idx = int(match.group(1))
        words = {}
        for word, alts in value.items():
            if isinstance(alts, list):
                words[str(word)] = [str(a) for a in alts if str(a).strip()]
        if words:
            problems[idx] = words
    return problems


def _rebuild_state(
    state: ItemState, lines: Sequence[str], target_option: Optional[int], round_index: int
) -> ItemState:
    if state.stage is Stage.PASSAGE:
        return ItemState(Stage.PASSAGE, tuple(lines), round_created=round_index)
    options = list(state.options)
    if target_option is not None:
        options[target_option] = lines[0]
    else:
        options = list(lines)
    return ItemState(Stage.OPTIONS, state.passage_sentences, tuple(options), round_created=round_index)


def reword(
    rt: AgentRuntime,
    context: str,
    state: ItemState,
    target_band: CefrBand,
    instruction: str,
    lex: Lexicon,
    target_option: Optional[int] = None,
    round_index: int = 0,
) -> RewordOutcome:
    """Lexicon-grounded vocabulary substitution, in three steps.

    1) ask the model for replacement candidates per problematic word,
    2) assign each candidate a level from the lexicon,
    3) ask the model to substitute using ONLY level-verified candidates.

    Words with no in-band candidate are reported back as infeasible; any
    substitution that introduces words outside the verified candidate
    lists is rejected wholesale for that sentence.
    """
    lines = _reword_lines(state, target_option)

    full_text = " ".join(lines)
    if not profile_text(lex, full_text, target_band).has_target_band_word:
        instruction = (
            instruction
            + "\nNote: the text contains no word at the exact target level. "
            "Also suggest upgrade replacements for words that are too easy."
        ).strip()

    payload = generate_json(
        rt.backend,
        "",
        rt.templates.render(
            "reworder_suggest",
            context=context,
            current_state=render_sentences(lines),
            vocab_level=_vocab_letter(target_band),
            planner_instruction=instruction,
        ),
        rt.decoding,
        f"reword-suggest-r{round_index}",
    )
    if payload is None:
        return RewordOutcome(state, "reword step 1 failed")
    problems = _parse_suggestions(payload)
    problems = {i: words for i, words in problems.items() if 1 <= i <= len(lines)}
    if not problems:
        return RewordOutcome(state, "no candidates")

    verified: dict[int, dict[str, list[str]]] = {}
    infeasible: list[str] = []
    for idx, words in problems.items():
        annotated = assign_levels(lex, words)
        verified[idx] = {}
        for word, alts in annotated.items():
            eligible = [alt for alt, level in alts if level is not None and level.band <= target_band]
            verified[idx][word] = eligible
            if not eligible:
                infeasible.append(word)
    infeasible_note = f"infeasible: {', '.join(sorted(set(infeasible)))}" if infeasible else ""

    if not any(alts for words in verified.values() for alts in words.values()):
        return RewordOutcome(state, infeasible_note or "no candidates")

    payload = generate_json(
        rt.backend,
        "",
        rt.templates.render(
            "reworder_replace",
            current_state=render_sentences(lines),
            vocab_level=_vocab_letter(target_band),
            alternative_list=render_json({str(i): verified[i] for i in sorted(verified)}),
        ),
        rt.decoding,
        f"reword-replace-r{round_index}",
    )
    if payload is None:
        return RewordOutcome(state, _join_messages("reword step 3 failed", infeasible_note))
    updated = payload.get("updated")
    if not (
        isinstance(updated, list)
        and len(updated) == len(lines)
        and all(isinstance(u, str) and u.strip() for u in updated)
    ):
        return RewordOutcome(state, _join_messages("reword step 3 failed", infeasible_note))

    accepted, rejected_notes = _validate_substitutions(lines, updated, verified, lex)
    model_message = payload.get("message")
    model_message = model_message.strip() if isinstance(model_message, str) else ""
    message = _join_messages(model_message, infeasible_note, *rejected_notes)
    return RewordOutcome(_rebuild_state(state, accepted, target_option, round_index), message)


def _join_messages(*parts: str) -> str:
    return "; ".join(p for p in parts if p)


def _validate_substitutions(
    lines: Sequence[str],
    updated: Sequence[str],
    verified: dict[int, dict[str, list[str]]],
    lex: Lexicon,
) -> tuple[list[str], list[str]]:
    """Keep an updated sentence only if every new word comes from the
    verified candidate lists for that sentence; otherwise keep the original.
    """
    accepted: list[str] = []
    notes: list[str] = []
    for i, (orig, new) in enumerate(zip(lines, updated)):
        allowed: set[str] = set()
        for alts in verified.get(i + 1, {}).values():
            for alt in alts:
                allowed.update(normalize_token(w, lex.lemma_map) for w in alt.split())
        orig_tokens = {normalize_token(t, lex.lemma_map) for t in orig.split()} - {""}
        new_tokens = {normalize_token(t, lex.lemma_map) for t in new.strip().split()} - {""}
        extra = new_tokens - orig_tokens - allowed
        if extra:
            notes.append(
                f"sentence ({i + 1}) rejected: words outside the candidate list "
                f"({', '.join(sorted(extra))})"
            )
            accepted.append(orig)
        else:
            accepted.append(new.strip())
    return accepted, notes


def refine(
    rt: AgentRuntime,
    sentences: Sequence[str],
    cs: FeatureConstraintSet,
    lex: Lexicon,
    round_index: int = 0,
) -> list[str]:
    """Minimal readability polish that must not break any passage constraint.

    The refined passage is re-measured against the passage constraints; if
    anything became violated the refinement is discarded and the input
    passage is returned unchanged.
    """
    original = list(sentences)
    payload = generate_json(
        rt.backend,
        "",
        rt.templates.render("refiner", passage=" ".join(original)),
        rt.decoding,
        f"refine-r{round_index}",
    )
    if payload is None or not isinstance(payload.get("passage"), str):
        logger.warning("refiner output unusable; passage kept as-is")
        return original
    refined = split_sentences(payload["passage"])
    if not refined:
        return original
    check = evaluate_stage(
        ItemState(Stage.PASSAGE, tuple(refined)), cs, Stage.PASSAGE, lex, round_index=round_index
    )
    if not check.all_satisfied:
        logger.info(
            "refinement discarded: it violated %s",
            ", ".join(m.feature for m in check.violations),
        )
        return original
    return refined
