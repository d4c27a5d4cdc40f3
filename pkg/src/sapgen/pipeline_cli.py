"""Operator command-line application.

Subcommands: translate-fewshot, bootstrap, translate-zeroshot, qa,
summarize, evaluate. A YAML config file supplies run settings; flags
mirror config keys and override them; SAPGEN_BACKEND_URL supplies the
backend URL when the config does not.

Run artifacts: an append-only JSON-lines manifest (header record, then one
record per item id — reruns with the same seed are byte-identical and an
interrupted run resumes without double-counting), a plain-text or
JSON-lines outputs file, and a timings sidecar next to the manifest so
wall-clock noise never touches the manifest bytes.

Exit codes: 0 success, 2 validation, 3 transport/protocol, 4 integrity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields as dataclass_fields
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import yaml

from .backend_gateway import (
    EmbedBackend,
    HttpBackend,
    InfillBackend,
    MockEmbedder,
    MockInfillBackend,
    ProtocolError,
    TransportError,
    make_mock_spec,
)
from .bootstrap import (
    BootstrapCheckpoint,
    BootstrapConfig,
    IntegrityError,
    ScoringContext,
    load_checkpoint,
    required_corpus_codes,
    run_bootstrap,
)
from .ensemble import build_ensemble, translate_ensemble
from .eval_metrics import (
    BleuConfig,
    MetricReport,
    bleu_report,
    load_subword_tokenizer,
    qa_em_f1,
    rouge_l,
)
from .prompt_kit import (
    Example,
    LangTag,
    qa_task,
    summarization_task,
    translation_task,
)
from .sap_core import SapConfig, SapResult, sap_generate, single_infill
from .scoring import BUNDLED_LANGUAGES, build_profile, load_bundled_profiles

logger = logging.getLogger(__name__)

MANIFEST_KIND = "run_manifest"
MANIFEST_VERSION = 1

BACKEND_URL_ENV = "SAPGEN_BACKEND_URL"

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_TRANSPORT = 3
EXIT_INTEGRITY = 4


class ValidationError(Exception):
    """The run configuration or inputs are unusable; nothing was started."""


@dataclass
class RunConfig:
    """Flat run settings; every key may come from YAML or a CLI flag."""

    task: str = "translation"
    source_lang: str = ""
    target_lang: str = ""
    pivot_lang: str = "en"
    lang_names: dict[str, str] = field(default_factory=dict)
    backend: str = "mock"
    backend_url: str | None = None
    timeout: float = 10.0
    attempts: int = 3
    lexicon_file: str | None = None
    span_budget: int = 2
    noise_rate: float = 0.0
    mock_seed: int = 0
    max_steps: int = 128
    concat_mode: str = "first_word"
    repetition_min_window: int = 3
    max_new_tokens: int = 20
    rounds: int = 4
    sample_size: int = 100
    pool_keep: int = 8
    shots_per_prompt: int = 2
    strategy: str = "direct"
    self_amplification: bool = True
    seed: int | None = None
    ensemble_size: int = 8
    grouping: str = "rank_consecutive"
    max_ngram: int = 4
    smoothing: str = "add_epsilon_exponential"
    subword_vocab: str | None = None
    metric: str = "bleu"
    input: str | None = None
    output_dir: str = "runs/out"
    shots: list[dict[str, str]] = field(default_factory=list)
    shots_file: str | None = None
    corpora: dict[str, str] = field(default_factory=dict)
    profile_files: dict[str, str] = field(default_factory=dict)
    profiles: list[str] = field(default_factory=list)
    checkpoint: str | None = None
    workers: int = 8
    sap_enabled: bool = True
    stop_after: int | None = None
    candidates: str | None = None
    references: str | None = None

    def as_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for f in dataclass_fields(self):
            value = getattr(self, f.name)
            if isinstance(value, dict):
                value = dict(sorted(value.items()))
            out[f.name] = value
        return out

    def manifest_identity(self) -> dict[str, Any]:
        """The config recorded in (and validated against) run manifests.

        Placement and throughput knobs cannot change record content, so a
        moved run directory or a retry with more workers may still resume.
        """
        out = self.as_dict()
        for key in ("output_dir", "workers", "timeout", "attempts"):
            out.pop(key)
        return out


def load_run_config(
    config_file: str | None, overrides: Mapping[str, Any]
) -> RunConfig:
    """Defaults, then YAML file values, then non-None CLI overrides."""
    cfg = RunConfig()
    known = {f.name for f in dataclass_fields(RunConfig)}
    if config_file is not None:
        path = Path(config_file)
        if not path.exists():
            raise ValidationError(f"config file not found: {path}")
        loaded = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        if not isinstance(loaded, dict):
            raise ValidationError("config file must hold a key-value mapping")
        for key, value in loaded.items():
            if key not in known:
                raise ValidationError(f"unknown config key: {key!r}")
            setattr(cfg, key, value)
    for key, value in overrides.items():
        if key in known and value is not None:
            setattr(cfg, key, value)
    return cfg


# ---------------------------------------------------------------------------
# Shared construction helpers.

def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ValidationError(message)


def _existing(path_value: str | None, what: str) -> Path:
    _require(bool(path_value), f"{what} is required")
    path = Path(path_value)
    _require(path.exists(), f"{what} not found: {path}")
    return path


def _lang(cfg: RunConfig, code: str) -> LangTag:
    _require(bool(code), "language code is required")
    names = {**BUNDLED_LANGUAGES, **cfg.lang_names}
    return LangTag(code=code, display_name=names.get(code, code))


def _build_backend(cfg: RunConfig) -> tuple[InfillBackend, EmbedBackend]:
    if cfg.backend == "mock":
        lexicon: dict[str, str] = {}
        if cfg.lexicon_file is not None:
            path = _existing(cfg.lexicon_file, "lexicon file")
            lexicon = json.loads(path.read_text(encoding="utf-8"))
        spec = make_mock_spec(
            lexicon,
            span_budget=cfg.span_budget,
            noise_rate=cfg.noise_rate,
            seed=cfg.mock_seed,
        )
        return MockInfillBackend(spec), MockEmbedder()
    if cfg.backend == "http":
        url = cfg.backend_url or os.environ.get(BACKEND_URL_ENV)
        _require(
            bool(url),
            f"backend_url is required for the http backend (or set {BACKEND_URL_ENV})",
        )
        client = HttpBackend(url, timeout=cfg.timeout, max_attempts=cfg.attempts)
        return client, client
    raise ValidationError(f"unknown backend: {cfg.backend!r}")


def _sap_config(cfg: RunConfig) -> SapConfig:
    return SapConfig(
        max_steps=cfg.max_steps,
        concat_mode=cfg.concat_mode,
        repetition_min_window=cfg.repetition_min_window,
        max_new_tokens=cfg.max_new_tokens,
    )


def _build_profiles(cfg: RunConfig):
    profiles = list(load_bundled_profiles(cfg.profiles)) if cfg.profiles else []
    for code, path_value in sorted(cfg.profile_files.items()):
        path = _existing(path_value, f"profile seed corpus for {code!r}")
        profiles.append(
            build_profile(_lang(cfg, code), path.read_text(encoding="utf-8"))
        )
    return profiles


def _read_text_lines(path: Path, what: str) -> list[str]:
    lines = path.read_text(encoding="utf-8").splitlines()
    for lineno, line in enumerate(lines, start=1):
        _require(bool(line.strip()), f"{what} has a blank line at {path}:{lineno}")
    return lines


def _read_jsonl(path: Path) -> list[tuple[int, dict[str, Any] | None]]:
    """Parse JSON-lines; malformed records come back as None (skippable)."""
    records: list[tuple[int, dict[str, Any] | None]] = []
    for lineno, line in enumerate(
        path.read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not line.strip():
            continue
        try:
            payload = json.loads(line)
            if not isinstance(payload, dict):
                raise ValueError("record must be a JSON object")
            records.append((lineno, payload))
        except ValueError as exc:
            logger.warning("skipping malformed record at %s:%d: %s", path, lineno, exc)
            records.append((lineno, None))
    return records


def _atomic_write_text(path: Path, data: str) -> None:
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(data)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def _dump(record: Mapping[str, Any]) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False)


# ---------------------------------------------------------------------------
# Manifest.

class ManifestWriter:
    """Append-only manifest with a timings sidecar.

    Item records append in item-id order; a pre-existing manifest from the
    identical configuration is resumed, and its item ids are never
    reprocessed.
    """

    def __init__(self, path: Path, header: dict[str, Any]):
        self.path = path
        self.timings_path = path.with_name(path.stem + ".timings.jsonl")
        self.done_ids: set[int] = set()
        header_line = _dump(header)
        if path.exists():
            existing_header, records = read_manifest(path)
            if _dump(existing_header) != header_line:
                raise ValidationError(
                    f"existing manifest {path} was written by a different "
                    f"configuration; use a fresh output directory"
                )
            self.done_ids = set(records)
        else:
            path.write_text(header_line + "\n", encoding="utf-8")
        self._handle = path.open("a", encoding="utf-8")
        self._timings = self.timings_path.open("a", encoding="utf-8")

    def append(self, record: Mapping[str, Any], seconds: float) -> None:
        self._handle.write(_dump(record) + "\n")
        self._handle.flush()
        self._timings.write(_dump({"item": record["item"], "seconds": seconds}) + "\n")
        self._timings.flush()
        self.done_ids.add(int(record["item"]))

    def close(self) -> None:
        self._handle.close()
        self._timings.close()


def read_manifest(path: Path) -> tuple[dict[str, Any], dict[int, dict[str, Any]]]:
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise IntegrityError(f"manifest {path} is empty")
    try:
        header = json.loads(lines[0])
        if header.get("kind") != MANIFEST_KIND:
            raise ValueError(f"unexpected kind {header.get('kind')!r}")
    except ValueError as exc:
        raise IntegrityError(f"corrupt manifest header in {path}: {exc}") from exc
    records: dict[int, dict[str, Any]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            record = json.loads(line)
            item = int(record["item"])
        except (ValueError, KeyError, TypeError) as exc:
            raise IntegrityError(
                f"corrupt manifest record at {path}:{lineno}: {exc}"
            ) from exc
        if item in records:
            raise IntegrityError(f"duplicate manifest item {item} at {path}:{lineno}")
        records[item] = record
    return header, records


def _process_items(
    items: Sequence[tuple[int, Any]],
    worker: Callable[[Any], dict[str, Any]],
    writer: ManifestWriter,
    workers: int,
) -> None:
    """Run the worker over pending items, appending records in id order."""
    pending = [(item_id, payload) for item_id, payload in items
               if item_id not in writer.done_ids]
    if not pending:
        return
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        futures = []
        for item_id, payload in pending:
            def job(item_id=item_id, payload=payload):
                start = time.perf_counter()
                record = worker(payload)
                record["item"] = item_id
                return record, time.perf_counter() - start
            futures.append(pool.submit(job))
        for future in futures:
            record, seconds = future.result()
            writer.append(record, seconds)


def _finalize_text_outputs(
    manifest_path: Path, output_path: Path, key: str = "output"
) -> None:
    _, records = read_manifest(manifest_path)
    lines = [records[item][key] for item in sorted(records)]
    _atomic_write_text(output_path, "\n".join(lines) + ("\n" if lines else ""))


def _sap_record(result: SapResult) -> dict[str, Any]:
    return {
        "output": result.text,
        "trace": list(result.accepted),
        "steps": result.steps,
        "finish_reason": result.finish_reason,
        "backend_calls": result.backend_calls,
    }


# ---------------------------------------------------------------------------
# Commands.

def _load_translation_shots(cfg: RunConfig, src: LangTag, tgt: LangTag) -> tuple[Example, ...]:
    raw: list[dict[str, str]] = list(cfg.shots)
    if not raw and cfg.shots_file is not None:
        path = _existing(cfg.shots_file, "shots file")
        for lineno, payload in _read_jsonl(path):
            if payload is None:
                raise ValidationError(f"malformed shot record at {path}:{lineno}")
            raw.append(payload)
    _require(bool(raw), "few-shot translation needs shots (config key "
             "'shots' or 'shots_file')")
    shots = []
    for record in raw:
        _require(
            "source" in record and "target" in record,
            "each shot needs 'source' and 'target' fields",
        )
        shots.append(
            Example(
                source_text=record["source"],
                target_text=record["target"],
                source_lang=src,
                target_lang=tgt,
            )
        )
    return tuple(shots)


def _output_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_translate_fewshot(cfg: RunConfig) -> Path:
    src = _lang(cfg, cfg.source_lang)
    tgt = _lang(cfg, cfg.target_lang)
    input_path = _existing(cfg.input, "input file")
    shots = _load_translation_shots(cfg, src, tgt)
    task = translation_task(src, tgt, shots=shots)
    lines = _read_text_lines(input_path, "input")
    backend, _ = _build_backend(cfg)
    sap_config = _sap_config(cfg)
    out = _output_dir(cfg)
    manifest_path = out / "manifest.jsonl"
    writer = ManifestWriter(
        manifest_path,
        {"kind": MANIFEST_KIND, "version": MANIFEST_VERSION,
         "command": "translate-fewshot", "config": cfg.manifest_identity()},
    )

    def worker(query: str) -> dict[str, Any]:
        result = sap_generate(task, query, backend, sap_config)
        return {"query": query, **_sap_record(result), "scores": {}}

    try:
        _process_items(list(enumerate(lines, start=1)), worker, writer, cfg.workers)
    finally:
        writer.close()
    _finalize_text_outputs(manifest_path, out / "outputs.txt")
    return manifest_path


def cmd_bootstrap(cfg: RunConfig) -> BootstrapCheckpoint:
    _require(cfg.seed is not None, "bootstrap runs need an explicit seed")
    src = _lang(cfg, cfg.source_lang)
    tgt = _lang(cfg, cfg.target_lang)
    pivot = _lang(cfg, cfg.pivot_lang)
    bcfg = BootstrapConfig(
        rounds=cfg.rounds,
        sample_size=cfg.sample_size,
        pool_keep=cfg.pool_keep,
        shots_per_prompt=cfg.shots_per_prompt,
        strategy=cfg.strategy,
        self_amplification=cfg.self_amplification,
        rng_seed=cfg.seed,
    )
    needed = required_corpus_codes(bcfg, src, tgt, pivot)
    loaders: dict[str, Any] = {}
    for code in needed:
        _require(code in cfg.corpora, f"config key 'corpora' must map {code!r} "
                 f"to a monolingual corpus file")
        path = _existing(cfg.corpora[code], f"corpus for {code!r}")
        loaders[code] = (lambda p=path: _read_text_lines(p, "corpus"))
    profiles = _build_profiles(cfg)
    _require(bool(profiles), "bootstrap needs language profiles (config keys "
             "'profiles' or 'profile_files')")
    backend, embedder = _build_backend(cfg)
    scorer = ScoringContext(embedder=embedder, profiles=tuple(profiles))
    out = _output_dir(cfg)
    ckpt_path = Path(cfg.checkpoint) if cfg.checkpoint else out / "checkpoint.jsonl"
    ckpt = run_bootstrap(
        bcfg,
        src,
        tgt,
        loaders,
        backend,
        scorer,
        sap_config=_sap_config(cfg),
        pivot_lang=pivot,
        checkpoint_path=ckpt_path,
        stop_after=cfg.stop_after,
    )
    for stage in ckpt.completed:
        pool = ckpt.pool(stage)
        low = min((se.score for se in pool), default=0.0)
        print(f"stage {stage}: pool {len(pool)}, min score {low:.6f}")
    return ckpt


def cmd_translate_zeroshot(cfg: RunConfig) -> Path:
    ckpt_path = _existing(cfg.checkpoint, "checkpoint")
    ckpt = load_checkpoint(ckpt_path)
    _require(
        ckpt.finished,
        "checkpoint has pending bootstrap stages; finish `sapgen bootstrap` first",
    )
    pool = ckpt.final_pool
    _require(
        len(pool) >= cfg.ensemble_size,
        f"checkpoint pool holds {len(pool)} examples but the ensemble needs "
        f"{cfg.ensemble_size}; run `sapgen bootstrap` with a larger pool_keep "
        f"or more rounds",
    )
    ensemble = build_ensemble(
        pool,
        cfg.ensemble_size,
        cfg.shots_per_prompt,
        grouping=cfg.grouping,
        pool_provenance=str(ckpt_path),
    )
    input_path = _existing(cfg.input, "input file")
    lines = _read_text_lines(input_path, "input")
    backend, embedder = _build_backend(cfg)
    sap_config = _sap_config(cfg)
    out = _output_dir(cfg)
    manifest_path = out / "manifest.jsonl"
    writer = ManifestWriter(
        manifest_path,
        {"kind": MANIFEST_KIND, "version": MANIFEST_VERSION,
         "command": "translate-zeroshot", "config": cfg.manifest_identity()},
    )

    def worker(query: str) -> dict[str, Any]:
        choice = translate_ensemble(ensemble, query, backend, embedder, sap_config)
        return {
            "query": query,
            "output": choice.text,
            "winner_index": choice.winner_index,
            "candidates": list(choice.candidates),
            "selection_scores": list(choice.scores),
            "all_empty": choice.all_empty,
            "prompts": [
                {
                    "index": i,
                    "steps": r.steps,
                    "finish_reason": r.finish_reason,
                    "backend_calls": r.backend_calls,
                }
                for i, r in enumerate(choice.results)
            ],
            "backend_calls": choice.backend_calls,
            "scores": {},
        }

    try:
        _process_items(list(enumerate(lines, start=1)), worker, writer, cfg.workers)
    finally:
        writer.close()
    _finalize_text_outputs(manifest_path, out / "outputs.txt")
    return manifest_path


def _load_fielded_shots(
    cfg: RunConfig, field_map: Mapping[str, str]
) -> tuple[dict[str, str], ...]:
    """Map dataset field names to template labels for each shot record."""
    if cfg.shots_file is None:
        return ()
    path = _existing(cfg.shots_file, "shots file")
    shots = []
    for lineno, payload in _read_jsonl(path):
        if payload is None:
            raise ValidationError(f"malformed shot record at {path}:{lineno}")
        missing = [name for name in field_map if name not in payload]
        if missing:
            raise ValidationError(
                f"shot record at {path}:{lineno} is missing fields: {missing}"
            )
        shots.append({label: payload[name] for name, label in field_map.items()})
    return tuple(shots)


def cmd_qa(cfg: RunConfig) -> Path:
    input_path = _existing(cfg.input, "input file")
    fielded = _load_fielded_shots(
        cfg, {"context": "Context", "question": "Question", "answer": "Answer"}
    )
    task = qa_task(fielded_shots=fielded)
    backend, _ = _build_backend(cfg)
    sap_config = _sap_config(cfg)
    out = _output_dir(cfg)
    manifest_path = out / "manifest.jsonl"
    writer = ManifestWriter(
        manifest_path,
        {"kind": MANIFEST_KIND, "version": MANIFEST_VERSION,
         "command": "qa", "config": cfg.manifest_identity()},
    )
    items = []
    for lineno, payload in _read_jsonl(input_path):
        if payload is None:
            continue
        if "question" not in payload or "context" not in payload:
            logger.warning(
                "skipping record at %s:%d: needs 'question' and 'context'",
                input_path, lineno,
            )
            continue
        items.append((lineno, payload))

    def worker(payload: dict[str, Any]) -> dict[str, Any]:
        fields = {"Context": payload["context"], "Question": payload["question"]}
        runner = sap_generate if cfg.sap_enabled else single_infill
        result = runner(task, fields, backend, sap_config)
        record = {"question": payload["question"], **_sap_record(result), "scores": {}}
        answers = payload.get("answers")
        if answers:
            em, f1 = qa_em_f1(result.text, answers)
            record["scores"] = {"em": em, "f1": f1}
        return record

    try:
        _process_items(items, worker, writer, cfg.workers)
    finally:
        writer.close()
    _finalize_jsonl_outputs(manifest_path, out / "outputs.jsonl")
    _print_score_summary(manifest_path, ("em", "f1"))
    return manifest_path


def cmd_summarize(cfg: RunConfig) -> Path:
    input_path = _existing(cfg.input, "input file")
    fielded = _load_fielded_shots(cfg, {"article": "Article", "summary": "Summary"})
    task = summarization_task(fielded_shots=fielded)
    backend, _ = _build_backend(cfg)
    sap_config = _sap_config(cfg)
    out = _output_dir(cfg)
    manifest_path = out / "manifest.jsonl"
    writer = ManifestWriter(
        manifest_path,
        {"kind": MANIFEST_KIND, "version": MANIFEST_VERSION,
         "command": "summarize", "config": cfg.manifest_identity()},
    )
    items = []
    for lineno, payload in _read_jsonl(input_path):
        if payload is None:
            continue
        if "article" not in payload:
            logger.warning(
                "skipping record at %s:%d: needs 'article'", input_path, lineno
            )
            continue
        items.append((lineno, payload))

    def worker(payload: dict[str, Any]) -> dict[str, Any]:
        fields = {"Article": payload["article"]}
        runner = sap_generate if cfg.sap_enabled else single_infill
        result = runner(task, fields, backend, sap_config)
        record = {**_sap_record(result), "scores": {}}
        if payload.get("summary"):
            record["scores"] = {"rouge_l": rouge_l(result.text, payload["summary"])}
        return record

    try:
        _process_items(items, worker, writer, cfg.workers)
    finally:
        writer.close()
    _finalize_jsonl_outputs(manifest_path, out / "outputs.jsonl")
    _print_score_summary(manifest_path, ("rouge_l",))
    return manifest_path


def _finalize_jsonl_outputs(manifest_path: Path, output_path: Path) -> None:
    _, records = read_manifest(manifest_path)
    lines = [
        _dump({"item": item, "output": records[item]["output"]})
        for item in sorted(records)
    ]
    _atomic_write_text(output_path, "\n".join(lines) + ("\n" if lines else ""))


def _print_score_summary(manifest_path: Path, keys: Sequence[str]) -> None:
    _, records = read_manifest(manifest_path)
    for key in keys:
        values = [
            r["scores"][key] for r in records.values() if key in r.get("scores", {})
        ]
        if values:
            print(f"mean {key}: {sum(values) / len(values):.6f} over {len(values)} items")


def cmd_evaluate(cfg: RunConfig) -> MetricReport:
    cand_path = _existing(cfg.candidates, "candidates file")
    ref_path = _existing(cfg.references, "references file")
    cand_lines = cand_path.read_text(encoding="utf-8").splitlines()
    ref_lines = ref_path.read_text(encoding="utf-8").splitlines()
    _require(
        len(cand_lines) == len(ref_lines),
        f"candidates ({len(cand_lines)} lines) and references "
        f"({len(ref_lines)} lines) are misaligned",
    )
    _require(bool(cand_lines), "evaluation files are empty")
    if cfg.metric == "bleu":
        tokenizer = (
            load_subword_tokenizer(_existing(cfg.subword_vocab, "subword vocabulary"))
            if cfg.subword_vocab
            else BleuConfig().tokenizer
        )
        bleu_cfg = BleuConfig(
            max_ngram=cfg.max_ngram, smoothing=cfg.smoothing, tokenizer=tokenizer
        )
        report = bleu_report(cand_lines, ref_lines, bleu_cfg)
    elif cfg.metric == "rouge_l":
        segments = tuple(rouge_l(c, r) for c, r in zip(cand_lines, ref_lines))
        report = MetricReport(
            metric="rouge_l",
            corpus_score=sum(segments) / len(segments),
            segment_scores=segments,
            config=(("beta_sq", 1.44),),
        )
    elif cfg.metric == "em_f1":
        ems = []
        f1s = []
        for cand, ref in zip(cand_lines, ref_lines):
            golds = _parse_reference_answers(ref)
            em, f1 = qa_em_f1(cand, golds)
            ems.append(em)
            f1s.append(f1)
        report = MetricReport(
            metric="em_f1",
            corpus_score=sum(f1s) / len(f1s),
            segment_scores=tuple(f1s),
            config=(("mean_em", sum(ems) / len(ems)),),
        )
    else:
        raise ValidationError(f"unknown metric: {cfg.metric!r}")
    out = _output_dir(cfg)
    _atomic_write_text(out / "report.json", _dump(report.as_dict()) + "\n")
    print(f"{report.metric} corpus score: {report.corpus_score:.6f}")
    return report


def _parse_reference_answers(line: str) -> list[str]:
    """A reference line is a JSON list of golds or plain text (one gold)."""
    stripped = line.strip()
    if stripped.startswith("["):
        try:
            golds = json.loads(stripped)
            if isinstance(golds, list) and all(isinstance(g, str) for g in golds):
                return golds
        except ValueError:
            pass
    return [line]


# ---------------------------------------------------------------------------
# Argument parsing and entry point.

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sapgen",
        description=(
            "Iterative mask-infill generation: few-shot translation, "
            "unsupervised bootstrap, prompt ensembling, QA, summarization, "
            "and evaluation."
        ),
    )
    parser.add_argument("--verbose", action="store_true", help="log at INFO level")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file; flags override its keys")
    common.add_argument("--input")
    common.add_argument("--output-dir", dest="output_dir")
    common.add_argument("--source-lang", dest="source_lang")
    common.add_argument("--target-lang", dest="target_lang")
    common.add_argument("--pivot-lang", dest="pivot_lang")
    common.add_argument("--backend", choices=["mock", "http"])
    common.add_argument("--backend-url", dest="backend_url")
    common.add_argument("--timeout", type=float)
    common.add_argument("--attempts", type=int)
    common.add_argument("--lexicon-file", dest="lexicon_file")
    common.add_argument("--span-budget", dest="span_budget", type=int)
    common.add_argument("--noise-rate", dest="noise_rate", type=float)
    common.add_argument("--mock-seed", dest="mock_seed", type=int)
    common.add_argument("--max-steps", dest="max_steps", type=int)
    common.add_argument("--concat-mode", dest="concat_mode",
                        choices=["first_word", "full_generation"])
    common.add_argument("--repetition-min-window", dest="repetition_min_window",
                        type=int)
    common.add_argument("--max-new-tokens", dest="max_new_tokens", type=int)
    common.add_argument("--rounds", type=int)
    common.add_argument("--sample-size", dest="sample_size", type=int)
    common.add_argument("--pool-keep", dest="pool_keep", type=int)
    common.add_argument("--shots-per-prompt", dest="shots_per_prompt", type=int)
    common.add_argument("--strategy", choices=["direct", "reversed", "pivot"])
    common.add_argument("--self-amplification", dest="self_amplification",
                        action=argparse.BooleanOptionalAction)
    common.add_argument("--seed", type=int)
    common.add_argument("--ensemble-size", dest="ensemble_size", type=int)
    common.add_argument("--grouping", choices=["rank_consecutive", "round_robin"])
    common.add_argument("--shots-file", dest="shots_file")
    common.add_argument("--checkpoint")
    common.add_argument("--workers", type=int)
    common.add_argument("--sap", dest="sap_enabled",
                        action=argparse.BooleanOptionalAction)
    common.add_argument("--stop-after", dest="stop_after", type=int)
    common.add_argument("--metric", choices=["bleu", "rouge_l", "em_f1"])
    common.add_argument("--candidates")
    common.add_argument("--references")
    common.add_argument("--max-ngram", dest="max_ngram", type=int)
    common.add_argument("--smoothing",
                        choices=["none", "add_epsilon_exponential"])
    common.add_argument("--subword-vocab", dest="subword_vocab")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("translate-fewshot", parents=[common],
                   help="translate an input file with configured shots")
    sub.add_parser("bootstrap", parents=[common],
                   help="build a synthetic example pool from monolingual text")
    sub.add_parser("translate-zeroshot", parents=[common],
                   help="translate with a prompt ensemble from a checkpoint")
    sub.add_parser("qa", parents=[common], help="answer questions over contexts")
    sub.add_parser("summarize", parents=[common], help="summarize articles")
    sub.add_parser("evaluate", parents=[common],
                   help="score candidate outputs against references")
    return parser


_COMMANDS: dict[str, Callable[[RunConfig], Any]] = {
    "translate-fewshot": cmd_translate_fewshot,
    "bootstrap": cmd_bootstrap,
    "translate-zeroshot": cmd_translate_zeroshot,
    "qa": cmd_qa,
    "summarize": cmd_summarize,
    "evaluate": cmd_evaluate,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    overrides = {k: v for k, v in vars(args).items()
                 if k not in {"command", "config", "verbose"}}
    try:
        cfg = load_run_config(args.config, overrides)
        _COMMANDS[args.command](cfg)
    except (ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (TransportError, ProtocolError) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
