"""Shared fixtures: a toy lexicon, compliant texts, and scripted backends."""

from __future__ import annotations

import json

import pytest

from itemforge.agents import AgentRuntime
from itemforge.backend import DecodingParams, ScriptEntry, ScriptedBackend
from itemforge.core import EvidenceScope, FeatureConstraintSet, Transformation
from itemforge.evaluation import JudgeConfig
from itemforge.lexicon import Lexicon, load_lexicon
from itemforge.prompts import default_templates

# A small but serviceable CEFR word list for tests.
LEXICON_ROWS = [
    ("the", "a1"), ("a", "a1"), ("an", "a1"), ("cat", "a1"), ("dog", "a1"),
    ("is", "a1"), ("are", "a1"), ("on", "a1"), ("in", "a1"), ("sat", "a1"),
    ("mat", "a1"), ("run", "a1"), ("sun", "a1"), ("day", "a1"), ("big", "a1"),
    ("small", "a1"), ("good", "a1"), ("water", "a1"), ("play", "a1"), ("like", "a1"),
    ("eat", "a1"), ("they", "a1"), ("it", "a1"), ("he", "a1"), ("she", "a1"),
    ("we", "a1"), ("and", "a1"), ("but", "a1"), ("to", "a1"), ("of", "a1"),
    ("can", "a1"), ("old", "a1"), ("new", "a1"), ("man", "a1"), ("see", "a1"),
    ("animal", "a2"), ("warm", "a2"), ("cold", "a2"), ("every", "a2"), ("people", "a2"),
    ("idea", "a2"), ("farm", "a2"), ("town", "a2"), ("help", "a2"), ("walk", "a2"),
    ("happy", "a2"), ("busy", "a2"), ("named", "a2"), ("put", "a1"), ("quit", "a2"),
    ("observe", "b1"), ("protect", "b1"), ("journey", "b1"), ("describe", "b1"),
    ("improve", "b1"), ("discover", "b1"), ("provide", "b1"), ("region", "b1"),
    ("analyze", "b2"), ("complex", "b2"), ("evidence", "b2"), ("significant", "b2"),
    ("paradigm", "c1"), ("notion", "c1"), ("synthesis", "c1"), ("ambiguous", "c1"),
    ("epistemology", "c2"),
]

# Satisfies level 1: band A vocabulary, 6 sentences, average < 10 words.
COMPLIANT_PASSAGE = (
    "The cat sat on the mat. The dog can run. They like warm water. "
    "People play every day. The sun is big. The farm is old."
)

# Four distinct band-A statements for the level-1 option constraints.
COMPLIANT_OPTIONS = [
    "The cat sat on the mat.",
    "The dog is cold.",
    "The sun is small.",
    "People play in the water.",
]

SCOPE_LABELS = {
    EvidenceScope.SINGLE_SENTENCE: "single-sentence",
    EvidenceScope.MULTI_SENTENCE: "multi-sentence",
    EvidenceScope.NONE: "not enough information",
}
TRANSFORMATION_LABELS = {
    Transformation.WORD_MATCHING: "word matching",
    Transformation.PARAPHRASING: "paraphrasing",
    Transformation.INFERENCE: "inference",
}


@pytest.fixture(scope="session")
def lexicon_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("lex") / "lexicon.tsv"
    path.write_text(
        "# test lexicon\n" + "\n".join(f"{w}\t{lvl}" for w, lvl in LEXICON_ROWS) + "\n",
        encoding="utf-8",
    )
    return path


@pytest.fixture(scope="session")
def lex(lexicon_path) -> Lexicon:
    return load_lexicon(lexicon_path)


@pytest.fixture(scope="session")
def templates():
    return default_templates()


def reply(payload: dict, prose: str = "Reasoning first. ") -> str:
    """A model response: some thinking prose, then the JSON payload."""
    return prose + json.dumps(payload)


def judge_answer(label: str) -> str:
    return reply({"answer": label})


def neutrality_answer(independent: bool, pairs=()) -> str:
    return reply({"independent": independent, "violating_pairs": [list(p) for p in pairs]})


def make_rt(entries, templates) -> AgentRuntime:
    return AgentRuntime(
        backend=ScriptedBackend(entries),
        templates=templates,
        decoding=DecodingParams(),
    )


def make_judge(entries, templates, samples: int = 1) -> JudgeConfig:
    return JudgeConfig(
        backend=ScriptedBackend(entries, backend_id="scripted-judge"),
        samples=samples,
        templates=templates,
    )


_A1_POOL = ["the", "cat", "can", "see", "a", "dog", "on", "mat", "sun", "day", "we", "run"]
_BAND_WORD = {"a": "warm", "b": "observe", "c": "paradigm"}
_SENTENCE_COUNT = {"short": 6, "medium": 15, "long": 25}
_WORDS_PER_SENTENCE = {"short": 6, "medium": 12, "long": 18}


def compliant_passage_for(cs: FeatureConstraintSet) -> str:
    """Build a passage satisfying a constraint set's three passage targets."""
    n_sentences = _SENTENCE_COUNT[cs.passage_length.kind.to_json()]
    n_words = _WORDS_PER_SENTENCE[cs.sentence_length.kind.to_json()]
    band_word = _BAND_WORD[cs.vocab_band.to_json()]
    sentences = []
    for i in range(n_sentences):
        words = [_A1_POOL[(i + j) % len(_A1_POOL)] for j in range(n_words)]
        if i == 0:
            words[1] = band_word
        words[0] = words[0].capitalize()
        sentences.append(" ".join(words) + ".")
    return " ".join(sentences)


def compliant_options_for(cs: FeatureConstraintSet) -> list[str]:
    """Four distinct statements satisfying the per-option vocab target."""
    band_word = _BAND_WORD[cs.vocab_band.to_json()]
    return [
        f"The {band_word} cat is on the mat.",
        f"The {band_word} dog can run.",
        f"The {band_word} sun is big.",
        f"The {band_word} day is old.",
    ]


def write_script(path, entries: list[ScriptEntry]) -> None:
    path.write_text(
        json.dumps([{"match": e.match, "response": e.response} for e in entries], indent=1),
        encoding="utf-8",
    )


def build_run_fixture(root, passage: str | None = None, options=None):
    """Write a complete scripted level-1 run setup: source, lexicon,
    agent/judge scripts, and config. Returns the config path.
    """
    from itemforge.calibration import builtin_preset

    passage = passage if passage is not None else COMPLIANT_PASSAGE
    options = options if options is not None else COMPLIANT_OPTIONS
    root.mkdir(parents=True, exist_ok=True)
    (root / "source.txt").write_text(
        "A cat and a dog live on an old farm. They play in the warm sun every day.",
        encoding="utf-8",
    )
    (root / "lexicon.tsv").write_text(
        "\n".join(f"{w}\t{lvl}" for w, lvl in LEXICON_ROWS) + "\n", encoding="utf-8"
    )
    agent_entries = [
        ScriptEntry("write a reading passage", reply({"passage": passage})),
        ScriptEntry("refiner", reply({"passage": passage})),
        ScriptEntry("four answer options", reply({"options": list(options)})),
    ]
    write_script(root / "agent_script.json", agent_entries)
    write_script(root / "judge_script.json", compliant_judge_entries(builtin_preset().level(1)))
    config = {
        "backend": {"kind": "scripted", "script": "agent_script.json"},
        "judge": {
            "backend": {"kind": "scripted", "script": "judge_script.json"},
            "samples": 1,
        },
        "run": {"n_drafts": 1, "seed": 0},
        "lexicon": "lexicon.tsv",
        "output": "out",
    }
    config_path = root / "config.json"
    config_path.write_text(json.dumps(config, indent=1), encoding="utf-8")
    return config_path


def build_full_fixture(root, doc_ids=("alpha", "beta")):
    """Scripted fixture covering every source x all 8 levels.

    Returns (config_path, source_dir). Script order mirrors the batch
    order: source-major, level-minor.
    """
    from itemforge.calibration import builtin_preset

    root.mkdir(parents=True, exist_ok=True)
    source_dir = root / "docs"
    source_dir.mkdir(exist_ok=True)
    for doc_id in doc_ids:
        (source_dir / f"{doc_id}.txt").write_text(
            "A cat and a dog live on an old farm. They play in the warm sun every day.",
            encoding="utf-8",
        )
    (root / "lexicon.tsv").write_text(
        "\n".join(f"{w}\t{lvl}" for w, lvl in LEXICON_ROWS) + "\n", encoding="utf-8"
    )
    preset = builtin_preset()
    agent_entries: list[ScriptEntry] = []
    judge_entries: list[ScriptEntry] = []
    for _ in doc_ids:
        for level in range(1, 9):
            cs = preset.level(level)
            passage = compliant_passage_for(cs)
            agent_entries += [
                ScriptEntry("write a reading passage", reply({"passage": passage})),
                ScriptEntry("refiner", reply({"passage": passage})),
                ScriptEntry("four answer options", reply({"options": compliant_options_for(cs)})),
            ]
            judge_entries += compliant_judge_entries(cs)
    write_script(root / "agent_script.json", agent_entries)
    write_script(root / "judge_script.json", judge_entries)
    config = {
        "backend": {"kind": "scripted", "script": "agent_script.json"},
        "judge": {
            "backend": {"kind": "scripted", "script": "judge_script.json"},
            "samples": 1,
        },
        "run": {"n_drafts": 1, "seed": 0},
        "lexicon": "lexicon.tsv",
        "output": "out",
    }
    config_path = root / "config.json"
    config_path.write_text(json.dumps(config, indent=1), encoding="utf-8")
    return config_path, source_dir


def compliant_judge_entries(cs: FeatureConstraintSet, samples: int = 1) -> list[ScriptEntry]:
    """Judge responses matching every option target of a constraint set,
    in the exact order one options-stage evaluation consumes them.
    """
    entries: list[ScriptEntry] = []
    for oc in cs.options:
        entries += [ScriptEntry("judge the factuality", judge_answer(oc.factuality.label))] * samples
        scope_label = SCOPE_LABELS[oc.reasoning.evidence_scope]
        trans_label = (
            TRANSFORMATION_LABELS[oc.reasoning.transformation]
            if oc.reasoning.transformation is not None
            else "word matching"
        )
        entries += [ScriptEntry("judge the evidence scope", judge_answer(scope_label))] * samples
        entries += [ScriptEntry("judge the transformation", judge_answer(trans_label))] * samples
    if cs.neutrality_required:
        entries += [ScriptEntry("logically independent", neutrality_answer(True))] * samples
    return entries
