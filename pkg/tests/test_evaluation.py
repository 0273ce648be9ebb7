"""Rule-based evaluators, judge voting, and stage report assembly."""

from __future__ import annotations

import random

import pytest
from hypothesis import given, strategies as st

from itemforge.backend import ScriptEntry
from itemforge.core import (
    CefrBand,
    ItemState,
    LengthBand,
    LengthKind,
    Stage,
)
from itemforge.evaluation import (
    ErrorReport,
    Measurement,
    _majority,
    count_words,
    eval_passage_length,
    eval_sentence_length,
    eval_vocab,
    evaluate_stage,
    judge_factuality,
    judge_neutrality,
    judge_reasoning,
    merge_reports,
    split_sentences,
)
from tests.conftest import (
    COMPLIANT_OPTIONS,
    COMPLIANT_PASSAGE,
    compliant_judge_entries,
    judge_answer,
    make_judge,
    neutrality_answer,
)
from itemforge.calibration import builtin_preset


class TestSplitSentences:
    def test_two_sentences(self):
        assert split_sentences("Dogs bark. Cats purr.") == ["Dogs bark.", "Cats purr."]

    def test_abbreviation_guard(self):
        assert split_sentences("Dr. Lee left. He ran.") == ["Dr. Lee left.", "He ran."]

    def test_empty(self):
        assert split_sentences("") == []

    def test_no_terminal_punctuation(self):
        assert split_sentences("Hello world") == ["Hello world"]

    def test_question_and_exclamation(self):
        assert split_sentences("Really? Yes! Fine.") == ["Really?", "Yes!", "Fine."]

    def test_lowercase_after_period_does_not_split(self):
        assert split_sentences("see example a. then continue.") == ["see example a. then continue."]

    def test_eg_guard(self):
        assert split_sentences("Fruits, e.g. Apples, are good. They help.") == [
            "Fruits, e.g. Apples, are good.",
            "They help.",
        ]

    def test_no_empty_sentences(self):
        for text in ["A. B. C.", "  One.   Two.  ", "..."]:
            assert all(s.strip() for s in split_sentences(text))


class TestCountWords:
    @pytest.mark.parametrize(
        "text,count",
        [("The cat sat.", 3), ("well-known fact", 2), ("— —", 0), ("", 0), ("a  b", 2)],
    )
    def test_examples(self, text, count):
        assert count_words(text) == count


def _passage(sentence_words: list[int]) -> str:
    """Build a passage with exactly the given per-sentence word counts."""
    rng = random.Random(7)
    sentences = []
    for n in sentence_words:
        words = ["w" + "".join(rng.choice("abcdef") for _ in range(3)) for _ in range(n)]
        words[0] = words[0].capitalize()
        sentences.append(" ".join(words) + ".")
    return " ".join(sentences)


class TestPassageLength:
    def test_eight_vs_short_satisfied(self):
        m = eval_passage_length(_passage([5] * 8), LengthBand.passage(LengthKind.SHORT))
        assert m.satisfied and m.observed == 8

    def test_eleven_vs_short_violated(self):
        m = eval_passage_length(_passage([5] * 11), LengthBand.passage(LengthKind.SHORT))
        assert not m.satisfied and m.observed == 11

    def test_thirty_one_out_of_band(self):
        m = eval_passage_length(_passage([5] * 31), LengthBand.passage(LengthKind.LONG))
        assert not m.satisfied
        assert "out of every band" in m.detail


class TestSentenceLength:
    def test_avg_ten_vs_short_satisfied(self):
        m = eval_sentence_length(_passage([10]), LengthBand.avg_words(LengthKind.SHORT))
        assert m.satisfied and m.observed == 10.0

    def test_avg_ten_vs_medium_violated(self):
        m = eval_sentence_length(_passage([10]), LengthBand.avg_words(LengthKind.MEDIUM))
        assert not m.satisfied

    def test_avg_fifteen_point_five_vs_long(self):
        m = eval_sentence_length(_passage([15, 16]), LengthBand.avg_words(LengthKind.LONG))
        assert m.satisfied and m.observed == 15.5

    def test_empty_passage(self):
        m = eval_sentence_length("", LengthBand.avg_words(LengthKind.SHORT))
        assert not m.satisfied and m.detail == "no sentences"

    def test_exact_rational_boundary(self):
        # 31 words over 2 sentences: 15.5, strictly above the medium band.
        m = eval_sentence_length(_passage([15, 16]), LengthBand.avg_words(LengthKind.MEDIUM))
        assert not m.satisfied


class TestVocab:
    def test_all_a_with_target_a(self, lex):
        m = eval_vocab("The cat can run", lex, CefrBand.A)
        assert m.satisfied

    def test_all_a_vs_target_b_violated(self, lex):
        m = eval_vocab("The cat can run", lex, CefrBand.B)
        assert not m.satisfied
        assert "no word at target band" in m.detail

    def test_over_level_word_violates(self, lex):
        m = eval_vocab("The paradigm can help", lex, CefrBand.B)
        assert not m.satisfied
        assert "paradigm" in m.detail

    def test_oov_never_violates(self, lex):
        m = eval_vocab("The cat can zzyzx run", lex, CefrBand.A)
        assert m.satisfied
        assert "zzyzx" in m.detail


class TestMajority:
    def test_unanimous(self):
        assert _majority(["x"] * 5) == ("x", 1.0)

    def test_three_of_five(self):
        assert _majority(["a", "b", "a", "b", "a"]) == ("a", 0.6)

    def test_all_unparseable(self):
        assert _majority([None, None, None]) == ("unknown", 0.0)

    def test_share_counts_unparseable_in_denominator(self):
        assert _majority(["a", "a", None, None, None]) == ("a", 0.4)

    @given(st.lists(st.sampled_from(["a", "b", "c", None]), min_size=1, max_size=9))
    def test_permutation_invariant(self, samples):
        shuffled = list(samples)
        random.Random(0).shuffle(shuffled)
        assert _majority(samples) == _majority(shuffled)


class TestJudges:
    def test_factuality_unanimous_false(self, templates):
        judge = make_judge([ScriptEntry("*", judge_answer("false"))] * 5, templates, samples=5)
        verdict = judge_factuality("opt", "passage", judge)
        assert verdict.winner == "false" and verdict.vote_share == 1.0

    def test_factuality_four_of_five(self, templates):
        entries = [ScriptEntry("*", judge_answer("true"))] * 4 + [
            ScriptEntry("*", judge_answer("false"))
        ]
        judge = make_judge(entries, templates, samples=5)
        verdict = judge_factuality("opt", "passage", judge)
        assert verdict.winner == "true" and verdict.vote_share == pytest.approx(0.8)

    def test_factuality_all_unparseable(self, templates):
        judge = make_judge([ScriptEntry("*", "garbage")] * 5, templates, samples=5)
        verdict = judge_factuality("opt", "passage", judge)
        assert verdict.winner == "unknown"

    def test_even_samples_rejected(self, templates):
        with pytest.raises(ValueError, match="odd"):
            make_judge([], templates, samples=4)

    def test_reasoning_unanimous(self, templates):
        entries = [ScriptEntry("evidence scope", judge_answer("single-sentence"))] * 5
        entries += [ScriptEntry("transformation", judge_answer("paraphrasing"))] * 5
        judge = make_judge(entries, templates, samples=5)
        verdict = judge_reasoning("opt", "passage", judge)
        assert verdict.winner == "single-sentence paraphrasing"
        assert verdict.vote_share == 1.0

    def test_reasoning_composite_majorities(self, templates):
        scope = ["single-sentence"] * 3 + ["multi-sentence"] * 2
        entries = [ScriptEntry("evidence scope", judge_answer(s)) for s in scope]
        entries += [ScriptEntry("transformation", judge_answer("inference"))] * 5
        judge = make_judge(entries, templates, samples=5)
        verdict = judge_reasoning("opt", "passage", judge)
        assert verdict.winner == "single-sentence inference"
        assert verdict.vote_share == pytest.approx(0.6)

    def test_reasoning_not_enough_information(self, templates):
        entries = [ScriptEntry("evidence scope", judge_answer("not enough information"))] * 5
        entries += [ScriptEntry("transformation", judge_answer("word matching"))] * 5
        judge = make_judge(entries, templates, samples=5)
        verdict = judge_reasoning("opt", "passage", judge)
        assert verdict.winner == "not enough information"

    def test_neutrality_unanimous(self, templates):
        judge = make_judge([ScriptEntry("*", neutrality_answer(True))] * 5, templates, samples=5)
        verdict = judge_neutrality(COMPLIANT_OPTIONS, judge)
        assert verdict.winner == "independent" and verdict.vote_share == 1.0

    def test_neutrality_flags_pair(self, templates):
        judge = make_judge(
            [ScriptEntry("*", neutrality_answer(False, [("A", "D")]))], templates, samples=1
        )
        verdict = judge_neutrality(COMPLIANT_OPTIONS, judge)
        assert verdict.winner == "dependent"
        assert "A-D" in verdict.detail

    def test_neutrality_three_of_five(self, templates):
        entries = [ScriptEntry("*", neutrality_answer(True))] * 3 + [
            ScriptEntry("*", neutrality_answer(False, [("B", "C")]))
        ] * 2
        judge = make_judge(entries, templates, samples=5)
        verdict = judge_neutrality(COMPLIANT_OPTIONS, judge)
        assert verdict.winner == "independent" and verdict.vote_share == pytest.approx(0.6)


class TestEvaluateStage:
    def test_compliant_passage_three_measurements(self, lex):
        state = ItemState(Stage.PASSAGE, tuple(split_sentences(COMPLIANT_PASSAGE)))
        report = evaluate_stage(state, builtin_preset().level(1), Stage.PASSAGE, lex)
        assert report.all_satisfied
        assert [m.feature for m in report.measurements] == [
            "vocab",
            "passage_length",
            "sentence_length",
        ]

    def test_four_sentences_vs_short_violated(self, lex):
        state = ItemState(Stage.PASSAGE, tuple(split_sentences(COMPLIANT_PASSAGE)[:4]))
        report = evaluate_stage(state, builtin_preset().level(1), Stage.PASSAGE, lex)
        violated = {m.feature for m in report.violations}
        assert "passage_length" in violated

    def test_options_stage_thirteen_measurements(self, lex, templates):
        cs = builtin_preset().level(1)
        judge = make_judge(compliant_judge_entries(cs), templates, samples=1)
        state = ItemState(
            Stage.OPTIONS, tuple(split_sentences(COMPLIANT_PASSAGE)), tuple(COMPLIANT_OPTIONS)
        )
        report = evaluate_stage(state, cs, Stage.OPTIONS, lex, judge)
        assert len(report.measurements) == 13
        assert report.all_satisfied
        assert report.measurements[-1].feature == "neutrality"
        assert [m.feature for m in report.measurements[:3]] == [
            "option_a_factuality",
            "option_a_reasoning",
            "option_a_vocab",
        ]

    def test_judge_unavailable_is_soft_violation(self, lex, templates):
        cs = builtin_preset().level(1)
        judge = make_judge([], templates, samples=1)  # script exhausted immediately
        state = ItemState(
            Stage.OPTIONS, tuple(split_sentences(COMPLIANT_PASSAGE)), tuple(COMPLIANT_OPTIONS)
        )
        report = evaluate_stage(state, cs, Stage.OPTIONS, lex, judge)
        unavailable = [m for m in report.measurements if m.detail == "judge unavailable"]
        assert len(unavailable) == 9  # factuality + reasoning per option, plus neutrality
        assert not report.all_satisfied

    def test_missing_options_reported(self, lex, templates):
        cs = builtin_preset().level(1)
        judge = make_judge([], templates, samples=1)
        state = ItemState(
            Stage.OPTIONS, tuple(split_sentences(COMPLIANT_PASSAGE)), (), valid=False
        )
        report = evaluate_stage(state, cs, Stage.OPTIONS, lex, judge)
        assert len(report.measurements) == 13
        assert not report.all_satisfied

    def test_stage_mismatch_rejected(self, lex):
        state = ItemState(Stage.PASSAGE, ("One.",))
        with pytest.raises(ValueError):
            evaluate_stage(state, builtin_preset().level(1), Stage.OPTIONS, lex)

    def test_rule_based_purity(self, lex):
        state = ItemState(Stage.PASSAGE, tuple(split_sentences(COMPLIANT_PASSAGE)))
        cs = builtin_preset().level(1)
        assert evaluate_stage(state, cs, Stage.PASSAGE, lex) == evaluate_stage(
            state, cs, Stage.PASSAGE, lex
        )


class TestReports:
    def test_round_trip(self):
        report = ErrorReport(
            2, (Measurement("vocab", "a", "a", True, ""), Measurement("x", 1, 2, False, "d"))
        )
        assert ErrorReport.from_json(report.to_json()) == report

    def test_merge(self):
        a = ErrorReport(1, (Measurement("vocab", "a", "a", True),))
        b = ErrorReport(3, (Measurement("neutrality", "x", "x", True),))
        merged = merge_reports(a, b)
        assert merged.round == 3
        assert len(merged.measurements) == 2

    def test_all_satisfied_iff_no_violations(self):
        sat = ErrorReport(0, (Measurement("a", 1, 1, True),))
        unsat = ErrorReport(0, (Measurement("a", 1, 2, False),))
        assert sat.all_satisfied and not sat.violations
        assert not unsat.all_satisfied and len(unsat.violations) == 1


def test_synthetic_recount_agrees_with_oracle():
    """Mini version of the band-evaluator oracle check (full run in acceptance)."""
    rng = random.Random(11)
    for _ in range(50):
        counts = [rng.randint(1, 25) for _ in range(rng.randint(1, 32))]
        passage = _passage(counts)
        m = eval_passage_length(passage, LengthBand.passage(LengthKind.MEDIUM))
        assert m.observed == len(counts)
        m2 = eval_sentence_length(passage, LengthBand.avg_words(LengthKind.MEDIUM))
        assert m2.observed == pytest.approx(sum(counts) / len(counts), abs=1e-4)
