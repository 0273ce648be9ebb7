"""Configuration, source-text ingestion, and flat-file run persistence.

A run directory is append-only: reruns go to a fresh directory so
experiment provenance is never overwritten. Every run records the fully
resolved configuration, making scripted-backend reruns byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .agents import AgentRuntime
from .backend import (
    COMPARISON_DECODING,
    DecodingParams,
    HttpBackend,
    ScriptedBackend,
)
from .core import DEFAULT_STEM, Item, canonical_json
from .errors import ConfigError, DataError
from .evaluation import JudgeConfig, split_sentences
from .metrics import achievement_ratio
from .orchestrator import BatchResult, RunConfig
from .prompts import TemplateSet

logger = logging.getLogger(__name__)

MAX_SOURCE_SENTENCES = 50


@dataclass(frozen=True)
class SourceDocument:
    """An ingested source text, truncated to its leading sentences."""

    id: str
    text: str
    sentence_count_used: int


def ingest_source(path) -> SourceDocument:
    """Read a UTF-8 text file and keep its first 50 sentences."""
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read source file {path}: {exc}") from exc
    sentences = split_sentences(raw)
    if not sentences:
        raise DataError(f"source file {path} contains no sentences")
    used = sentences[:MAX_SOURCE_SENTENCES]
    return SourceDocument(id=path.stem, text=" ".join(used), sentence_count_used=len(used))


def ingest_sources(path) -> list[SourceDocument]:
    """Ingest one file, or every *.txt in a directory (sorted by name)."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.txt"))
        if not files:
            raise DataError(f"no *.txt source files in {path}")
        return [ingest_source(f) for f in files]
    return [ingest_source(path)]


def _expect_keys(data: dict, allowed: set[str], context: str) -> None:
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown {context} keys: {', '.join(sorted(unknown))}")


def _decoding(data: Optional[dict], context: str, base: DecodingParams) -> DecodingParams:
    if data is None:
        return base
    _expect_keys(data, {"temperature", "top_p", "top_k", "max_output_tokens"}, context)
    merged = {**base.to_json(), **data}
    try:
        return DecodingParams(**merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {context}: {exc}") from exc


@dataclass(frozen=True)
class BackendSettings:
    kind: str = "http"
    endpoint: str = ""
    model: str = ""
    api_key_env: str = "OPENAI_API_KEY"
    timeout: float = 60.0
    max_retries: int = 3
    script: str = ""

    @classmethod
    def from_json(cls, data: dict, context: str) -> "BackendSettings":
        _expect_keys(
            data,
            {"kind", "endpoint", "model", "api_key_env", "timeout", "max_retries", "script"},
            context,
        )
        try:
            settings = cls(**data)
            settings = cls(**{**settings.to_json(),
                              "timeout": float(settings.timeout),
                              "max_retries": int(settings.max_retries)})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad {context}: {exc}") from exc
        if settings.kind not in ("http", "scripted"):
            raise ConfigError(f"{context}.kind must be 'http' or 'scripted'")
        if settings.kind == "http" and not settings.endpoint:
            raise ConfigError(f"{context}.endpoint is required for an http backend")
        if settings.kind == "scripted" and not settings.script:
            raise ConfigError(f"{context}.script is required for a scripted backend")
        return settings

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "endpoint": self.endpoint,
            "model": self.model,
            "api_key_env": self.api_key_env,
            "timeout": self.timeout,
            "max_retries": self.max_retries,
            "script": self.script,
        }

    def build(self, base_dir: Path, jobs: Optional[int] = None):
        if self.kind == "scripted":
            script_path = Path(self.script)
            if not script_path.is_absolute():
                script_path = base_dir / script_path
            return ScriptedBackend.from_file(script_path)
        return HttpBackend(
            endpoint=self.endpoint,
            model=self.model,
            api_key_env=self.api_key_env,
            timeout=self.timeout,
            max_retries=self.max_retries,
            max_in_flight=jobs,
        )


@dataclass(frozen=True)
class Config:
    """Everything a run needs, with operating defaults baked in."""

    backend: BackendSettings
    judge_backend: Optional[BackendSettings] = None
    judge_samples: int = 5
    judge_decoding: DecodingParams = DecodingParams()
    das_backend: Optional[BackendSettings] = None
    das_n: int = 4
    das_decoding: DecodingParams = COMPARISON_DECODING
    n_drafts: int = 5
    max_passage_rounds: int = 20
    max_option_rounds: int = 100
    creativity_t: int = 3
    seed: int = 0
    decoding: DecodingParams = DecodingParams()
    stem: str = DEFAULT_STEM
    lexicon: str = ""
    lemmas: Optional[str] = None
    templates: Optional[str] = None
    output: str = "runs/out"
    base_dir: Path = Path(".")

    @classmethod
    def from_json(cls, data: dict, base_dir: Path = Path(".")) -> "Config":
        _expect_keys(
            data,
            {"backend", "judge", "das", "run", "lexicon", "lemmas", "templates", "output"},
            "config",
        )
        if "backend" not in data:
            raise ConfigError("config.backend is required")
        backend = BackendSettings.from_json(data["backend"], "backend")

        judge = data.get("judge") or {}
        _expect_keys(judge, {"backend", "samples", "decoding"}, "judge")
        judge_backend = (
            BackendSettings.from_json(judge["backend"], "judge.backend")
            if judge.get("backend")
            else None
        )

        das = data.get("das") or {}
        _expect_keys(das, {"backend", "n", "decoding"}, "das")
        das_backend = (
            BackendSettings.from_json(das["backend"], "das.backend") if das.get("backend") else None
        )

        run = data.get("run") or {}
        _expect_keys(
            run,
            {
                "n_drafts",
                "max_passage_rounds",
                "max_option_rounds",
                "creativity_t",
                "seed",
                "decoding",
                "stem",
            },
            "run",
        )
        try:
            return cls(
                backend=backend,
                judge_backend=judge_backend,
                judge_samples=int(judge.get("samples", 5)),
                judge_decoding=_decoding(judge.get("decoding"), "judge.decoding", DecodingParams()),
                das_backend=das_backend,
                das_n=int(das.get("n", 4)),
                das_decoding=_decoding(das.get("decoding"), "das.decoding", COMPARISON_DECODING),
                n_drafts=int(run.get("n_drafts", 5)),
                max_passage_rounds=int(run.get("max_passage_rounds", 20)),
                max_option_rounds=int(run.get("max_option_rounds", 100)),
                creativity_t=int(run.get("creativity_t", 3)),
                seed=int(run.get("seed", 0)),
                decoding=_decoding(run.get("decoding"), "run.decoding", DecodingParams()),
                stem=str(run.get("stem", DEFAULT_STEM)),
                lexicon=str(data.get("lexicon", "")),
                lemmas=data.get("lemmas"),
                templates=data.get("templates"),
                output=str(data.get("output", "runs/out")),
                base_dir=base_dir,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "Config":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        return cls.from_json(data, base_dir=path.parent)

    def resolved(self) -> dict:
        """The fully expanded settings recorded next to every run."""
        return {
            "backend": self.backend.to_json(),
            "judge": {
                "backend": self.judge_backend.to_json() if self.judge_backend else None,
                "samples": self.judge_samples,
                "decoding": self.judge_decoding.to_json(),
            },
            "das": {
                "backend": self.das_backend.to_json() if self.das_backend else None,
                "n": self.das_n,
                "decoding": self.das_decoding.to_json(),
            },
            "run": {
                "n_drafts": self.n_drafts,
                "max_passage_rounds": self.max_passage_rounds,
                "max_option_rounds": self.max_option_rounds,
                "creativity_t": self.creativity_t,
                "seed": self.seed,
                "decoding": self.decoding.to_json(),
                "stem": self.stem,
            },
            "lexicon": self.lexicon,
            "lemmas": self.lemmas,
            "templates": self.templates,
            "output": self.output,
        }

    def run_id(self) -> str:
        digest = hashlib.sha256(canonical_json(self.resolved()).encode("utf-8"))
        return digest.hexdigest()[:12]

    def resolve_path(self, value: str) -> Path:
        path = Path(value)
        return path if path.is_absolute() else self.base_dir / path

    def lexicon_path(self) -> Path:
        if not self.lexicon:
            raise ConfigError("config.lexicon is required for this command")
        path = self.resolve_path(self.lexicon)
        if not path.is_file():
            raise DataError(f"lexicon file not found: {path}")
        return path

    def load_templates(self) -> TemplateSet:
        override = self.resolve_path(self.templates) if self.templates else None
        return TemplateSet.load(override)

    def build_runtime(self, jobs: Optional[int] = None) -> tuple[AgentRuntime, RunConfig]:
        """Construct the agent runtime and run configuration.

        When no separate judge backend is configured, the judge shares the
        agent backend instance (and, for scripts, its response queue).
        """
        templates = self.load_templates()
        backend = self.backend.build(self.base_dir, jobs)
        judge_backend = (
            self.judge_backend.build(self.base_dir, jobs) if self.judge_backend else backend
        )
        try:
            judge = JudgeConfig(
                backend=judge_backend,
                decoding=self.judge_decoding,
                samples=self.judge_samples,
                templates=templates,
            )
            run_config = RunConfig(
                judge=judge,
                n_drafts=self.n_drafts,
                max_passage_rounds=self.max_passage_rounds,
                max_option_rounds=self.max_option_rounds,
                creativity_t=self.creativity_t,
                seed=self.seed,
                decoding=self.decoding,
                stem=self.stem,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        rt = AgentRuntime(backend=backend, templates=templates, decoding=self.decoding)
        return rt, run_config

    def build_das_judge(self, jobs: Optional[int] = None) -> tuple[JudgeConfig, int]:
        templates = self.load_templates()
        settings = self.das_backend or self.judge_backend or self.backend
        backend = settings.build(self.base_dir, jobs)
        # Self-consistency sample count is irrelevant here; das_llm drives
        # its own N, but JudgeConfig requires an odd count.
        judge = JudgeConfig(
            backend=backend, decoding=self.das_decoding, samples=1, templates=templates
        )
        return judge, self.das_n


def _write_json(path: Path, data) -> None:
    path.write_text(canonical_json(data), encoding="utf-8")


class RunWriter:
    """Writes one run directory: items/, logs/, summary, resolved config."""

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        if self.out_dir.exists() and any(self.out_dir.iterdir()):
            raise ConfigError(
                f"run directory {self.out_dir} is not empty; run directories are append-only"
            )
        (self.out_dir / "items").mkdir(parents=True, exist_ok=True)
        (self.out_dir / "logs").mkdir(parents=True, exist_ok=True)

    def write_config(self, resolved: dict) -> None:
        _write_json(self.out_dir / "config_resolved.json", resolved)

    def write_result(self, result: BatchResult) -> None:
        name = f"{result.source_id}_{result.level}"
        if result.item is not None:
            _write_json(self.out_dir / "items" / f"{name}.json", result.item.to_json())
        if result.log is not None:
            lines = result.log.passage.rounds_to_json() + result.log.options.rounds_to_json()
            text = "\n".join(json.dumps(line, sort_keys=True, ensure_ascii=False) for line in lines)
            (self.out_dir / "logs" / f"{name}.jsonl").write_text(text + "\n", encoding="utf-8")

    def write_summary(self, results: Sequence[BatchResult], run_id: str) -> dict:
        runs = []
        srs: list[bool] = []
        ars: list[float] = []
        tokens: dict[str, int] = {}
        for result in results:
            entry: dict = {"source_id": result.source_id, "level": result.level}
            if result.error is not None:
                entry["error"] = result.error
            elif result.log is not None:
                report = result.log.item_report()
                ar = achievement_ratio(report)
                entry.update(
                    {
                        "passage_outcome": result.log.passage.outcome.to_json(),
                        "options_outcome": result.log.options.outcome.to_json(),
                        "all_satisfied": report.all_satisfied,
                        "ar": round(ar, 4),
                    }
                )
                srs.append(report.all_satisfied)
                ars.append(ar)
                for stage, info in result.log.ledger.to_json().items():
                    tokens[stage] = tokens.get(stage, 0) + info["cumulative"]
            runs.append(entry)
        summary = {
            "run_id": run_id,
            "runs": runs,
            "aggregates": {
                "items": len(srs),
                "errors": sum(1 for r in results if r.error is not None),
                "sr": round(100.0 * sum(srs) / len(srs), 4) if srs else None,
                "ar_mean": round(sum(ars) / len(ars), 4) if ars else None,
            },
            "tokens": tokens,
        }
        _write_json(self.out_dir / "summary.json", summary)
        return summary


def load_item(path) -> Item:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read item {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"item {path} is not valid JSON: {exc}") from exc
    try:
        return Item.from_json(data)
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"item {path} is malformed: {exc}") from exc
