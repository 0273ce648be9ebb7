"""Command-line interface: generate, evaluate, compare, calibrate, report.

Exit codes: 0 success, 1 usage, 2 configuration, 3 backend failure,
4 unusable input data.
"""

from __future__ import annotations

import argparse
import json
import logging
import statistics
import sys
from pathlib import Path
from typing import Optional, Sequence

from .calibration import (
    CandidateSet,
    builtin_preset,
    compare_candidates,
    extract_sequence,
    filter_pairs,
)
from .core import canonical_json
from .errors import (
    BackendError,
    CalibrationError,
    ConfigError,
    DataError,
    ParseError,
)
from .lexicon import load_lexicon
from .metrics import das_llm, export_comparisons_csv, summary_json
from .orchestrator import (
    BaselineMode,
    BatchResult,
    evaluate_item,
    generate_batch,
    single_pass_baseline,
)
from .store import Config, RunWriter, ingest_sources, load_item

logger = logging.getLogger(__name__)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # noqa: A003 - argparse API
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="itemforge", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate items for sources x levels")
    gen.add_argument("--source", required=True, help="source text file or directory of *.txt")
    gen.add_argument("--level", default="all", help="difficulty level 1..8 or 'all'")
    gen.add_argument("--config", required=True)
    gen.add_argument("--baseline", choices=["feature-direct", "level-direct"])
    gen.add_argument("--samples", type=int, default=1, help="baseline samples (best AR wins)")
    gen.add_argument("--out", help="run directory (default: config output)")
    gen.add_argument("--jobs", type=int, help="cap on in-flight backend requests")

    ev = sub.add_parser("evaluate", help="re-evaluate stored items and report SR/AR")
    ev.add_argument("--items", required=True, help="item JSON file or directory")
    ev.add_argument("--config", required=True)
    ev.add_argument("--level", type=int, help="override the provenance level")
    ev.add_argument("--out", help="write the metrics summary JSON here")

    cmp_ = sub.add_parser("compare", help="pairwise difficulty comparison over a manifest")
    cmp_.add_argument("--pairs", required=True, help="JSON list of {pair_id, first, second}")
    cmp_.add_argument("--config", required=True)
    cmp_.add_argument("--out", help="write raw comparison records CSV here")

    cal = sub.add_parser("calibrate", help="build a monotone difficulty sequence")
    cal.add_argument("--candidates", required=True, help="JSON list of candidate sets")
    cal.add_argument("--items", required=True, help="directory: <candidate_id>/<source_id>.json")
    cal.add_argument("--config", required=True)
    cal.add_argument("--window", type=int, default=5)
    cal.add_argument("--rho", type=float, default=0.4)
    cal.add_argument("--target-length", type=int)
    cal.add_argument("--out", help="directory for edges.csv and sequence.json")

    rep = sub.add_parser("report", help="aggregate run summaries into one table")
    rep.add_argument("summaries", nargs="+", help="summary.json files or run directories")
    rep.add_argument("--out", help="write the combined JSON here")
    return parser


def _parse_levels(value: str, n_levels: int) -> list[int]:
    if value == "all":
        return list(range(1, n_levels + 1))
    try:
        number = int(value)
    except ValueError:
        raise UsageError(f"--level must be 1..{n_levels} or 'all', got {value!r}") from None
    if not 1 <= number <= n_levels:
        raise UsageError(f"--level must be 1..{n_levels} or 'all', got {value!r}")
    return [number]


def _cmd_generate(args) -> int:
    config = Config.load(args.config)
    preset = builtin_preset()
    levels = _parse_levels(args.level, len(preset.levels))
    sources = ingest_sources(args.source)
    lex = load_lexicon(
        config.lexicon_path(),
        config.resolve_path(config.lemmas) if config.lemmas else None,
    )
    rt, run_config = config.build_runtime(args.jobs)
    run_id = config.run_id()

    out_dir = Path(args.out) if args.out else config.resolve_path(config.output)
    writer = RunWriter(out_dir)
    writer.write_config(config.resolved())

    if args.baseline:
        mode = (
            BaselineMode.FEATURE_DIRECT
            if args.baseline == "feature-direct"
            else BaselineMode.LEVEL_DIRECT
        )
        results = []
        for doc in sources:
            for level in levels:
                target = preset.level(level) if mode is BaselineMode.FEATURE_DIRECT else level
                try:
                    outcome = single_pass_baseline(
                        doc.text, target, mode, run_config, lex, rt,
                        samples=args.samples, n_levels=len(preset.levels),
                        source_id=doc.id, level=level, run_id=run_id,
                    )
                except (ParseError, BackendError, ValueError) as exc:
                    print(f"{doc.id}_{level}: FAILED ({exc})")
                    results.append({"source_id": doc.id, "level": level, "error": str(exc)})
                    continue
                writer.write_result(BatchResult(doc.id, level, item=outcome.item))
                ar = outcome.sample_ars[outcome.chosen_sample]
                results.append(
                    {
                        "source_id": doc.id,
                        "level": level,
                        "chosen_sample": outcome.chosen_sample,
                        "ar": ar,
                    }
                )
                print(f"{doc.id}_{level}: baseline item written (AR {ar if ar is not None else 'n/a'})")
        ars = [r["ar"] for r in results if r.get("ar") is not None]
        summary = {
            "run_id": run_id,
            "mode": f"baseline-{args.baseline}",
            "runs": results,
            "aggregates": {
                "items": len([r for r in results if "error" not in r]),
                "errors": len([r for r in results if "error" in r]),
                "sr": round(100.0 * sum(a == 100.0 for a in ars) / len(ars), 4) if ars else None,
                "ar_mean": round(sum(ars) / len(ars), 4) if ars else None,
            },
        }
        (out_dir / "summary.json").write_text(canonical_json(summary), encoding="utf-8")
        _print_aggregates(summary["aggregates"])
        return 0

    results = generate_batch(
        [(doc.id, doc.text) for doc in sources], preset, run_config, lex, rt,
        run_id=run_id, levels=levels,
    )
    for result in results:
        writer.write_result(result)
        if result.error is not None:
            print(f"{result.source_id}_{result.level}: FAILED ({result.error})")
        else:
            passage = result.log.passage.outcome
            options = result.log.options.outcome
            print(
                f"{result.source_id}_{result.level}: passage {passage.kind.value}@{passage.round}, "
                f"options {options.kind.value}@{options.round}"
            )
    summary = writer.write_summary(results, run_id)
    _print_aggregates(summary["aggregates"])
    return 0


def _print_aggregates(aggregates: dict) -> None:
    sr = aggregates.get("sr")
    ar = aggregates.get("ar_mean")
    print(
        f"items {aggregates.get('items')}  errors {aggregates.get('errors', 0)}  "
        f"SR {sr if sr is not None else 'n/a'}%  AR {ar if ar is not None else 'n/a'}%"
    )


def _iter_item_paths(path: Path) -> list[Path]:
    if path.is_dir():
        paths = sorted(path.glob("**/*.json"))
        if not paths:
            raise DataError(f"no item JSON files under {path}")
        return paths
    return [path]


def _cmd_evaluate(args) -> int:
    config = Config.load(args.config)
    preset = builtin_preset()
    lex = load_lexicon(
        config.lexicon_path(),
        config.resolve_path(config.lemmas) if config.lemmas else None,
    )
    _, run_config = config.build_runtime()
    reports = []
    for path in _iter_item_paths(Path(args.items)):
        item = load_item(path)
        level = args.level or item.provenance.level
        try:
            cs = preset.level(level)
        except ValueError as exc:
            raise DataError(f"{path.name}: {exc}") from exc
        report = evaluate_item(item, cs, lex, run_config.judge)
        reports.append(report)
        satisfied = sum(1 for m in report.measurements if m.satisfied)
        print(
            f"{path.name}: {'SUCCESS' if report.all_satisfied else 'violated'} "
            f"({satisfied}/{len(report.measurements)} constraints)"
        )
    sr = 100.0 * sum(r.all_satisfied for r in reports) / len(reports)
    ar = statistics.fmean(
        100.0 * sum(m.satisfied for m in r.measurements) / len(r.measurements) for r in reports
    )
    print(f"SR {sr:.2f}%  AR {ar:.2f}%")
    if args.out:
        Path(args.out).write_text(
            canonical_json(summary_json(sr=round(sr, 4), ar_mean=round(ar, 4))), encoding="utf-8"
        )
    return 0


def _cmd_compare(args) -> int:
    config = Config.load(args.config)
    manifest_path = Path(args.pairs)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read pair manifest: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"pair manifest is not valid JSON: {exc}") from exc
    if not isinstance(manifest, list) or not manifest:
        raise DataError("pair manifest must be a non-empty JSON list")

    judge, n = config.build_das_judge()
    scores = []
    records = []
    for i, entry in enumerate(manifest):
        try:
            pair_id = str(entry.get("pair_id", f"pair{i}"))
            first = load_item(manifest_path.parent / entry["first"])
            second = load_item(manifest_path.parent / entry["second"])
        except (KeyError, TypeError) as exc:
            raise DataError(f"pair manifest entry {i} is malformed: {exc}") from exc
        result = das_llm(first, second, judge, n=n, pair_id=pair_id)
        scores.append(result.score)
        records.extend(result.records)
        print(f"{pair_id}: DAS {result.score:+.4f} ({result.effective_samples} samples)")
    mean = statistics.fmean(scores)
    std = statistics.stdev(scores) if len(scores) > 1 else 0.0
    print(f"DAS mean {mean:+.4f}  std {std:.4f}  pairs {len(scores)}")
    if args.out:
        export_comparisons_csv(records, args.out)
    return 0


def _cmd_calibrate(args) -> int:
    config = Config.load(args.config)
    try:
        raw = json.loads(Path(args.candidates).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read candidates file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"candidates file is not valid JSON: {exc}") from exc
    if not isinstance(raw, list) or not raw:
        raise DataError("candidates file must be a non-empty JSON list")
    try:
        candidates = [CandidateSet.from_json(entry) for entry in raw]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed candidate set: {exc}") from exc

    items_dir = Path(args.items)
    items_per_set = {}
    for candidate in candidates:
        folder = items_dir / candidate.id
        items_per_set[candidate.id] = {
            path.stem: load_item(path) for path in sorted(folder.glob("*.json"))
        }

    judge, n = config.build_das_judge()
    scores = compare_candidates(candidates, items_per_set, args.window, judge, n=n)
    graph = filter_pairs(scores, args.rho, candidates)
    sequence = extract_sequence(graph, args.target_length)

    print(f"compared {len(scores)} pairs, {len(graph.edges)} validated at rho > {args.rho}")
    print("sequence: " + " -> ".join(c.id for c in sequence))
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "edges.csv", "w", encoding="utf-8") as handle:
            handle.write("lower,higher,das\n")
            for edge in graph.edges:
                handle.write(f"{edge.lower.id},{edge.higher.id},{edge.das:.6f}\n")
        (out_dir / "sequence.json").write_text(
            canonical_json([c.to_json() for c in sequence]), encoding="utf-8"
        )
    return 0


def _cmd_report(args) -> int:
    combined = []
    for raw in args.summaries:
        path = Path(raw)
        if path.is_dir():
            path = path / "summary.json"
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise DataError(f"cannot read summary {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"summary {path} is not valid JSON: {exc}") from exc
        aggregates = data.get("aggregates", {})
        combined.append({"path": str(path), "run_id": data.get("run_id"), **aggregates})
    header = f"{'run':40} {'items':>6} {'errors':>6} {'SR%':>8} {'AR%':>8}"
    print(header)
    print("-" * len(header))
    for row in combined:
        sr = row.get("sr")
        ar = row.get("ar_mean")
        print(
            f"{str(row.get('run_id') or row['path']):40} {row.get('items', 0):>6} "
            f"{row.get('errors', 0):>6} "
            f"{sr if sr is not None else 'n/a':>8} {ar if ar is not None else 'n/a':>8}"
        )
    if args.out:
        Path(args.out).write_text(canonical_json(combined), encoding="utf-8")
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "evaluate": _cmd_evaluate,
    "compare": _cmd_compare,
    "calibrate": _cmd_calibrate,
    "report": _cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return 3
    except ParseError as exc:
        print(f"backend output error: {exc}", file=sys.stderr)
        return 3
    except (DataError, CalibrationError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 4


def run() -> None:
    sys.exit(main())
