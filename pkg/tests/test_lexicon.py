"""Lexicon loading, token normalization, and vocabulary profiling."""

from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from itemforge.core import CefrBand, WordLevel
from itemforge.errors import DataError
from itemforge.lexicon import (
    Lexicon,
    assign_levels,
    load_lexicon,
    normalize_token,
    profile_text,
)


def write_lexicon(tmp_path, rows, name="lex.tsv"):
    path = tmp_path / name
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return path


class TestLoad:
    def test_three_rows(self, tmp_path):
        lex = load_lexicon(write_lexicon(tmp_path, ["cat\ta1", "observe\tb1", "paradigm\tc1"]))
        assert len(lex) == 3
        assert lex.lookup("observe") is WordLevel.B1

    def test_duplicates_resolve_to_lowest(self, tmp_path):
        lex = load_lexicon(write_lexicon(tmp_path, ["run\ta1", "run\tb1"]))
        assert lex.lookup("run") is WordLevel.A1
        lex = load_lexicon(write_lexicon(tmp_path, ["run\tb1", "run\ta1"], name="lex2.tsv"))
        assert lex.lookup("run") is WordLevel.A1

    def test_empty_file_warns(self, tmp_path, caplog):
        path = tmp_path / "empty.tsv"
        path.write_text("", encoding="utf-8")
        with caplog.at_level("WARNING"):
            lex = load_lexicon(path)
        assert len(lex) == 0
        assert any("empty" in r.message for r in caplog.records)

    def test_malformed_row_reports_line_number(self, tmp_path):
        path = write_lexicon(tmp_path, ["cat\ta1", "no-tab-here"])
        with pytest.raises(DataError, match=":2:"):
            load_lexicon(path)

    def test_bad_level_reports_line_number(self, tmp_path):
        path = write_lexicon(tmp_path, ["cat\tz9"])
        with pytest.raises(DataError, match=":1:"):
            load_lexicon(path)

    def test_comments_and_blanks_skipped(self, tmp_path):
        lex = load_lexicon(write_lexicon(tmp_path, ["# header", "", "cat\ta1"]))
        assert len(lex) == 1

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_lexicon(tmp_path / "nope.tsv")

    def test_digest_tracks_content(self, tmp_path):
        a = load_lexicon(write_lexicon(tmp_path, ["cat\ta1"], name="a.tsv"))
        b = load_lexicon(write_lexicon(tmp_path, ["cat\ta1"], name="b.tsv"))
        c = load_lexicon(write_lexicon(tmp_path, ["cat\ta2"], name="c.tsv"))
        assert a.source_digest == b.source_digest
        assert a.source_digest != c.source_digest

    def test_lemma_map(self, tmp_path):
        lex_path = write_lexicon(tmp_path, ["observe\tb1"])
        lemma_path = tmp_path / "lemmas.tsv"
        lemma_path.write_text("observed\tobserve\n", encoding="utf-8")
        lex = load_lexicon(lex_path, lemma_path)
        assert lex.lookup("Observed,") is WordLevel.B1


class TestNormalize:
    def test_strips_punctuation_and_lowercases(self):
        assert normalize_token("Observed,") == "observed"

    def test_keeps_internal_apostrophe(self):
        assert normalize_token("don't") == "don't"

    def test_punctuation_only_is_empty(self):
        assert normalize_token("—") == ""

    def test_lemma_applied_after_normalization(self):
        assert normalize_token("Observed,", {"observed": "observe"}) == "observe"


class TestProfile:
    def test_hand_lookup(self, lex):
        profile = profile_text(lex, "The cat can observe", CefrBand.B)
        assert profile.max_level is WordLevel.B1
        assert profile.has_target_band_word

    def test_band_violation(self, lex):
        profile = profile_text(lex, "A paradigm", CefrBand.B)
        assert profile.max_level is WordLevel.C1
        assert [a.key for a in profile.over_level_words(CefrBand.B)] == ["paradigm"]

    def test_empty_text(self, lex):
        profile = profile_text(lex, "", CefrBand.A)
        assert profile.per_word == ()
        assert profile.max_level is None
        assert not profile.has_target_band_word

    def test_proper_noun_excluded(self, lex):
        profile = profile_text(lex, "We can see Paris today.", CefrBand.A)
        kinds = {a.token: a.kind for a in profile.per_word}
        assert kinds["Paris"] == "proper_noun"
        assert "Paris" not in profile.oov_tokens

    def test_sentence_initial_capital_is_not_proper_noun(self, lex):
        profile = profile_text(lex, "Zorgle is here.", CefrBand.A)
        kinds = {a.token: a.kind for a in profile.per_word}
        assert kinds["Zorgle"] == "oov"
        assert "Zorgle" in profile.oov_tokens

    def test_pure_function(self, lex):
        one = profile_text(lex, "The cat can observe", CefrBand.B)
        two = profile_text(lex, "The cat can observe", CefrBand.B)
        assert one == two

    def test_numbers_skipped(self, lex):
        profile = profile_text(lex, "The cat is 42", CefrBand.A)
        assert all(a.key != "42" for a in profile.per_word)


_words = [w for w, _ in [("cat", "a1"), ("observe", "b1"), ("paradigm", "c1"), ("warm", "a2")]]


@given(
    st.lists(st.sampled_from(_words), min_size=1, max_size=8),
    st.sampled_from(_words),
)
def test_adding_word_never_lowers_max_level(base_words, extra):
    lex = Lexicon(
        entries={"cat": WordLevel.A1, "observe": WordLevel.B1,
                 "paradigm": WordLevel.C1, "warm": WordLevel.A2}
    )
    base = profile_text(lex, " ".join(base_words), CefrBand.B)
    extended = profile_text(lex, " ".join(base_words + [extra]), CefrBand.B)
    assert extended.max_level >= base.max_level


class TestAssignLevels:
    def test_toy_lookup(self, lex):
        out = assign_levels(lex, {"appointed": ["named", "designated"]})
        assert out == {"appointed": [("named", WordLevel.A2), ("designated", None)]}

    def test_empty_map(self, lex):
        assert assign_levels(lex, {}) == {}

    def test_candidate_equal_to_original(self, lex):
        out = assign_levels(lex, {"cat": ["cat"]})
        assert out["cat"] == [("cat", WordLevel.A1)]

    def test_multiword_phrase_uses_max_level(self, lex):
        out = assign_levels(lex, {"appointed": ["put in"]})
        assert out["appointed"] == [("put in", WordLevel.A1)]

    def test_multiword_with_unknown_part_is_unknown(self, lex):
        out = assign_levels(lex, {"x": ["put zorgle"]})
        assert out["x"] == [("put zorgle", None)]
