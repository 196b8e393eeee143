"""Command-line entry point: clean, build-dataset, extract, evaluate, analyze-weights, export-graph.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import yaml

from . import corpus as corpus_mod
from .dataset import DatasetError, GoldPair, build_samples, export_alpaca, stratified_sample
from .evaluation import EvaluationError, EvaluationReport, evaluate_run, get_scheme, load_weight_schemes
from .gateway import (
    AuthError,
    ChatEndpointConfig,
    EmbeddingEndpointConfig,
    ExtractionParseError,
    extract_batch,
    load_endpoint_config,
    make_chat_client,
    make_embedder,
    parse_model_output,
)
from .graph import build_graph, export_cypher, export_jsonl, push_cypher
from .prompts import PromptFrameError, get_template, render_prompt
from .schema import SchemaError, check_record, load_schema, record_to_dict
from .sensitivity import (
    MODES,
    SensitivityError,
    load_score_matrix,
    recompute_from_field_scores,
    scheme_sensitivity,
)

log = logging.getLogger("personkg")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Declarative run settings; every key mirrors a command-line option."""

    manifest: str | None = None
    golds: str | None = None
    test: str | None = None
    corpus: str | None = None
    out: str | None = None
    schema: str = "builtin"
    template: str = "zh"
    templates_dir: str | None = None
    think_suffix: str | None = None
    endpoint: str | None = None
    embedding: str | None = None
    weights_file: str | None = None
    scheme: str = "average-distribution"
    n: int | None = None
    seed: int = 0
    variance_mode: str = "population"
    max_segment_chars: int = 300
    near_dup: bool = False
    near_dup_threshold: float = 0.9
    min_length: int = 0
    split_input: bool = False
    workers: int = 4

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        try:
            data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise UsageError(f"{path}: config must be a mapping")
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise UsageError(f"{path}: unknown config keys {sorted(unknown)}")
        return cls(**data)

    def to_yaml(self) -> str:
        return yaml.safe_dump(dataclasses.asdict(self), allow_unicode=True, sort_keys=True)


# --- helpers ---------------------------------------------------------------


def _read_jsonl(path: str | Path) -> list[dict]:
    rows = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}:{n}: malformed JSON: {exc.msg}") from exc
    return rows


def _write_jsonl(path: Path, rows: Sequence[dict]) -> None:
    path.write_text("".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows), encoding="utf-8")


def _hash_path(path: Path) -> str:
    h = hashlib.sha256()
    if path.is_dir():
        for p in sorted(path.rglob("*")):
            if p.is_file():
                h.update(p.relative_to(path).as_posix().encode("utf-8"))
                h.update(p.read_bytes())
    elif path.is_file():
        h.update(path.read_bytes())
    return h.hexdigest()


_PATH_KEYS = ("manifest", "golds", "test", "corpus", "endpoint", "embedding", "weights_file",
              "templates_dir", "preds", "records", "matrix", "schema")


def _write_manifest(out: Path, command: str, args: argparse.Namespace) -> None:
    """Run metadata: settings plus content hashes of inputs (no absolute paths or times)."""
    settings, inputs = {}, {}
    for key, value in sorted(vars(args).items()):
        if key in ("func", "config", "out", "reports") or value is None:
            continue
        if key in _PATH_KEYS and isinstance(value, str) and Path(value).exists():
            inputs[key] = {"name": Path(value).name, "sha256": _hash_path(Path(value))}
        else:
            settings[key] = value
    for label, path in _parse_reports(getattr(args, "reports", None) or []):
        inputs[f"report:{label}"] = {"name": Path(path).name, "sha256": _hash_path(Path(path))}
    body = {"command": command, "settings": settings, "inputs": inputs}
    (out / "run_manifest.json").write_text(json.dumps(body, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
                                           encoding="utf-8")


def _out_dir(args, command: str) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        stamp = hashlib.sha256(json.dumps({k: v for k, v in sorted(vars(args).items()) if k != "func"},
                                          default=str, sort_keys=True).encode()).hexdigest()[:10]
        out = Path("runs") / f"{command}-{stamp}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(args, *names: str) -> None:
    for name in names:
        if not getattr(args, name, None):
            raise UsageError(f"--{name.replace('_', '-')} is required")
    for name in names:
        value = getattr(args, name)
        if name in _PATH_KEYS and value not in ("mock", "builtin") and not Path(value).exists():
            raise UsageError(f"--{name.replace('_', '-')}: {value} does not exist")


def _gold_records(rows: list[dict], schema) -> list[tuple[str, Any]]:
    out = []
    for row in rows:
        rid = str(row.get("record_id", ""))
        record, issues = check_record(row.get("output", {}), schema, strict=True)
        if record is None:
            msgs = "; ".join(f"{i.field_key}: {i.message}" for i in issues if i.is_error)
            raise UsageError(f"gold {rid}: {msgs}")
        out.append((rid, record))
    return out


def _template(args):
    try:
        return get_template(args.template, args.templates_dir, args.think_suffix)
    except KeyError as exc:
        raise UsageError(f"--template: {exc.args[0]}") from exc


def _load_embedding(spec: str | None):
    if spec is None:
        raise UsageError("--embedding is required (a YAML endpoint file or 'mock')")
    if spec == "mock":
        return make_embedder(EmbeddingEndpointConfig(kind="mock"))
    try:
        return make_embedder(load_endpoint_config(spec, "embedding"))
    except (OSError, ValueError, TypeError) as exc:
        raise UsageError(f"--embedding: {exc}") from exc


# --- subcommands -----------------------------------------------------------


def cmd_clean(args) -> int:
    if args.manifest is None:
        raise UsageError("--manifest is required")
    src = Path(args.manifest)
    if not src.exists():
        raise UsageError(f"manifest {src} does not exist")
    try:
        ingest = corpus_mod.load_directory(src) if src.is_dir() else corpus_mod.load_manifest(src)
    except (corpus_mod.CorpusConfigError, yaml.YAMLError) as exc:
        raise UsageError(str(exc)) from exc
    try:
        groups, summary = corpus_mod.run_pipeline(
            ingest.docs, args.max_segment_chars,
            args.near_dup_threshold if args.near_dup else None, args.min_length)
    except corpus_mod.CorpusConfigError as exc:
        raise UsageError(str(exc)) from exc
    summary.unreadable = len(ingest.failures)
    summary.docs_in += summary.unreadable
    out = _out_dir(args, "clean")
    corpus_dir = out / "corpus"
    if corpus_dir.exists():
        for old in corpus_dir.glob("*.jsonl"):
            old.unlink()
    corpus_mod.write_corpus(groups, corpus_dir)
    (out / "clean_summary.json").write_text(json.dumps(dataclasses.asdict(summary), indent=2) + "\n",
                                            encoding="utf-8")
    _write_manifest(out, "clean", args)
    print(summary.line())
    if ingest.failures and not ingest.docs:
        log.error("no readable documents")
        return EXIT_FAIL
    return EXIT_OK


def cmd_build_dataset(args) -> int:
    _require(args, "golds", "n")
    schema = load_schema(args.schema)
    template = _template(args)
    texts = corpus_mod.read_corpus(args.corpus) if args.corpus else {}
    pairs, missing = [], []
    for row in _read_jsonl(args.golds):
        rid = str(row.get("record_id", ""))
        person = str(row.get("person_name", ""))
        text = row.get("text") or texts.get(person)
        if not text:
            missing.append(rid)
            continue
        pairs.append(GoldPair(corpus_mod.clean_text(text), row.get("output", {}), person,
                              tuple(row.get("tags", [])), rid))
    for rid in missing:
        log.warning("no text for gold record %s; skipped", rid)
    try:
        built = build_samples(pairs, template, schema, split_input=args.split_input)
    except PromptFrameError as exc:
        log.error("%s", exc)
        return EXIT_FAIL
    for err in built.errors:
        log.warning("%s", err)
    try:
        chosen = stratified_sample(built.samples, args.n, args.seed)
    except DatasetError as exc:
        log.error("%s", exc)
        return EXIT_FAIL
    out = _out_dir(args, "build-dataset")
    export_alpaca(chosen, out / "alpaca.json")
    _write_jsonl(out / "build_errors.jsonl",
                 [{"record_id": rid, "error": "no character text"} for rid in missing]
                 + [{"record_id": e.record_id, "error": str(e)} for e in built.errors])
    _write_manifest(out, "build-dataset", args)
    print(f"{len(chosen)} samples written ({len(built.samples)} built, {len(built.errors) + len(missing)} skipped)")
    return EXIT_OK


def cmd_extract(args) -> int:
    _require(args, "test", "endpoint")
    schema = load_schema(args.schema)
    template = _template(args)
    try:
        cfg: ChatEndpointConfig = load_endpoint_config(args.endpoint, "chat")
    except (OSError, ValueError, TypeError) as exc:
        raise UsageError(f"--endpoint: {exc}") from exc
    if cfg.kind == "mock" and cfg.script and not Path(cfg.script).is_absolute():
        cfg = dataclasses.replace(cfg, script=str(Path(args.endpoint).parent / cfg.script))
    texts = corpus_mod.read_corpus(args.corpus) if args.corpus else {}
    rows = _read_jsonl(args.test)

    results: list[dict | None] = [None] * len(rows)
    prompts, slots = [], []
    for i, row in enumerate(rows):
        rid = str(row.get("record_id", i))
        text = row.get("text") or texts.get(str(row.get("person_name", "")))
        if not text:
            results[i] = {"record_id": rid, "status": "no_text", "error": "no character text"}
            continue
        try:
            prompts.append(render_prompt(template, corpus_mod.clean_text(text)))
            slots.append(i)
        except PromptFrameError as exc:
            results[i] = {"record_id": rid, "status": "frame_error", "error": str(exc)}

    client = make_chat_client(cfg)
    try:
        batch = extract_batch(prompts, client, args.workers or cfg.max_parallel)
    except AuthError as exc:
        log.error("%s", exc)
        return EXIT_FAIL
    finally:
        client.close()

    for i, item in zip(slots, batch):
        rid = str(rows[i].get("record_id", i))
        if not item.ok:
            results[i] = {"record_id": rid, "status": "request_failed", "error": item.error}
            continue
        try:
            candidate = parse_model_output(item.response.text, cfg.strip_think_blocks)
        except ExtractionParseError as exc:
            results[i] = {"record_id": rid, "status": "parse_error", "error": str(exc), "raw": exc.raw}
            continue
        record, issues = check_record(candidate, schema, strict=False)
        if record is None:
            msgs = "; ".join(f"{x.field_key}: {x.message}" for x in issues if x.is_error)
            results[i] = {"record_id": rid, "status": "validation_error", "error": msgs, "raw": item.response.text}
        else:
            results[i] = {"record_id": rid, "status": "ok", "person_record": record_to_dict(record, schema)}

    out = _out_dir(args, "extract")
    _write_jsonl(out / "predictions.jsonl", results)
    _write_manifest(out, "extract", args)
    ok = sum(r["status"] == "ok" for r in results)
    print(f"{len(results)} records, {ok} ok, {len(results) - ok} failed")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    _require(args, "preds", "golds")
    schema = load_schema(args.schema)
    schemes = load_weight_schemes(args.weights_file) if args.weights_file else load_weight_schemes()
    try:
        scheme = get_scheme(args.scheme, schemes)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from exc
    embedder = _load_embedding(args.embedding)
    golds = _gold_records(_read_jsonl(args.golds), schema)
    preds = []
    for row in _read_jsonl(args.preds):
        rid = str(row.get("record_id", ""))
        record = None
        if row.get("status", "ok") == "ok":
            record, _ = check_record(row.get("person_record", row.get("output", {})), schema, strict=False)
        preds.append((rid, record))
    gold_ids = {rid for rid, _ in golds}
    missing = sorted(gold_ids - {rid for rid, _ in preds})
    if missing:
        log.warning("no prediction for %d gold records (scored 0): %s", len(missing), missing)
    try:
        report = evaluate_run(preds, golds, schema, scheme, embedder)
    except EvaluationError as exc:
        log.error("%s", exc)
        return EXIT_FAIL
    out = _out_dir(args, "evaluate")
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out / "report.txt").write_text(report.to_table(), encoding="utf-8")
    _write_manifest(out, "evaluate", args)
    print(f"scheme: {report.scheme_name}")
    print(f"run_mean: {report.run_mean:.4f}")
    return EXIT_OK


def _parse_reports(specs: Sequence[str]) -> list[tuple[str, str]]:
    out = []
    for spec in specs:
        label, sep, path = spec.partition("=")
        if not sep:
            label, path = Path(spec).parent.name or spec, spec
        out.append((label, path))
    return out


def cmd_analyze_weights(args) -> int:
    if args.variance_mode not in MODES:
        raise UsageError(f"--variance-mode must be one of {MODES}")
    try:
        if args.reports:
            schemes = load_weight_schemes(args.weights_file) if args.weights_file else load_weight_schemes()
            reports = []
            for label, path in _parse_reports(args.reports):
                data = json.loads(Path(path).read_text(encoding="utf-8"))
                reports.append((label, EvaluationReport.from_dict(data)))
            data = recompute_from_field_scores(reports, schemes)
        else:
            matrix = None if args.matrix in (None, "builtin") else args.matrix
            if matrix is not None and not Path(matrix).exists():
                raise UsageError(f"--matrix: {matrix} does not exist")
            data = load_score_matrix(matrix)
        report = scheme_sensitivity(data, args.variance_mode)
    except (SensitivityError, EvaluationError, OSError, KeyError, ValueError) as exc:
        if isinstance(exc, UsageError):
            raise
        log.error("%s", exc)
        return EXIT_FAIL
    out = _out_dir(args, "analyze-weights")
    (out / "sensitivity.json").write_text(report.to_json(), encoding="utf-8")
    table = report.to_table(data)
    (out / "sensitivity.txt").write_text(table, encoding="utf-8")
    _write_manifest(out, "analyze-weights", args)
    print(table, end="")
    return EXIT_OK


def cmd_export_graph(args) -> int:
    _require(args, "records")
    schema = load_schema(args.schema)
    records = []
    for row in _read_jsonl(args.records):
        if row.get("status", "ok") != "ok":
            continue
        raw = row.get("person_record", row.get("output"))
        record, issues = check_record(raw, schema, strict=False)
        if record is None:
            log.warning("record %s skipped: %s", row.get("record_id"),
                        "; ".join(i.message for i in issues if i.is_error))
            continue
        records.append(record)
    graph = build_graph(records, schema)
    out = _out_dir(args, "export-graph")
    script = export_cypher(graph)
    (out / "graph.cypher").write_text(script, encoding="utf-8")
    export_jsonl(graph, out / "graph.jsonl")
    _write_manifest(out, "export-graph", args)
    print(f"{len(graph.nodes)} nodes, {len(graph.edges)} edges, {len(graph.conflicts)} conflicts")
    if args.push_url:
        try:
            n = push_cypher(script, args.push_url, args.database)
        except Exception as exc:  # network/database failure is a runtime failure
            log.error("push failed: %s", exc)
            return EXIT_FAIL
        print(f"pushed {n} statements")
    return EXIT_OK


# --- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="personkg", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML run config supplying defaults")
        sp.add_argument("--out", help="output directory (default: runs/<command>-<hash>)")
        sp.add_argument("--schema", default="builtin")
        sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("clean", help="clean, dedupe, group and segment a corpus")
    common(sp)
    sp.add_argument("--manifest", help="manifest file, or a person/source_kind/*.txt directory")
    sp.add_argument("--max-segment-chars", type=int, default=300)
    sp.add_argument("--near-dup", action="store_true", help="also drop near duplicates")
    sp.add_argument("--near-dup-threshold", type=float, default=0.9)
    sp.add_argument("--min-length", type=int, default=0)
    sp.set_defaults(func=cmd_clean)

    def templating(sp):
        sp.add_argument("--template", default="zh")
        sp.add_argument("--templates-dir")
        sp.add_argument("--think-suffix", help="text appended to every prompt (e.g. a no-think directive)")

    sp = sub.add_parser("build-dataset", help="build an Alpaca instruction dataset")
    common(sp)
    templating(sp)
    sp.add_argument("--corpus", help="corpus directory written by 'clean'")
    sp.add_argument("--golds", help="gold annotations JSONL")
    sp.add_argument("--n", type=int, help="number of samples to draw (e.g. 50, 100, 150)")
    sp.add_argument("--split-input", action="store_true", help="put the character text in 'input'")
    sp.set_defaults(func=cmd_build_dataset)

    sp = sub.add_parser("extract", help="run extraction prompts against a chat endpoint")
    common(sp)
    templating(sp)
    sp.add_argument("--test", help="test records JSONL")
    sp.add_argument("--corpus")
    sp.add_argument("--endpoint", help="endpoint YAML with a 'chat' section")
    sp.add_argument("--workers", type=int, default=None)
    sp.set_defaults(func=cmd_extract)

    sp = sub.add_parser("evaluate", help="score predictions against gold records")
    common(sp)
    sp.add_argument("--preds")
    sp.add_argument("--golds")
    sp.add_argument("--scheme", default="average-distribution")
    sp.add_argument("--weights-file")
    sp.add_argument("--embedding", help="endpoint YAML with an 'embedding' section, or 'mock'")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("analyze-weights", help="weight-scheme sensitivity analysis")
    common(sp)
    sp.add_argument("--matrix", help="scheme x checkpoint score CSV ('builtin' for the reference table)")
    sp.add_argument("--reports", nargs="+", metavar="LABEL=REPORT_JSON")
    sp.add_argument("--weights-file")
    sp.add_argument("--variance-mode", default="population")
    sp.set_defaults(func=cmd_analyze_weights)

    sp = sub.add_parser("export-graph", help="build the property graph and export Cypher + JSONL")
    common(sp)
    sp.add_argument("--records", help="predictions or gold JSONL")
    sp.add_argument("--push-url", help="graph database HTTP endpoint (credentials from NEO4J_USER/NEO4J_PASSWORD)")
    sp.add_argument("--database", default="neo4j")
    sp.set_defaults(func=cmd_export_graph)
    return p


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        cfg = RunConfig.from_file(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]  # noqa: SLF001
        values = {k: v for k, v in dataclasses.asdict(cfg).items() if v is not None}
        known = {a.dest for a in sub._actions}  # noqa: SLF001
        sub.set_defaults(**{k: v for k, v in values.items() if k in known})
        args = parser.parse_args(argv)
    return args


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _apply_config(parser, argv)
    except UsageError as exc:
        print(f"personkg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, SchemaError) as exc:
        print(f"personkg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, KeyError, ValueError) as exc:
        print(f"personkg: error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
