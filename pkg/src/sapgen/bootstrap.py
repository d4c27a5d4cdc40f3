"""Unsupervised translation bootstrap.

Each round samples source sentences, translates them with the current
prompt (zero-shot in round 1, self-amplified few-shot afterwards), filters
and scores the outputs, and keeps the best pool_keep examples seen so far.
Strategies: direct (generate in the requested direction), reversed
(generate target→source pairs, then flip them), and pivot (bootstrap both
languages toward a pivot language, then translate one shared pivot corpus
out to both sides and align by the common pivot sentence).

Checkpoints are JSON-lines files: a header record with config, completed
stages, and generator state, then one record per pooled example per stage.
Writes are atomic and runs resume from the last completed stage.
"""

from __future__ import annotations

import json
import logging
import math
import os
import random
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .backend_gateway import EmbedBackend, InfillBackend
from .prompt_kit import Example, LangTag, TaskSpec, reverse_example, translation_task
from .sap_core import SapConfig, sap_generate
from .scoring import LangProfile, filter_candidates, pivot_score

logger = logging.getLogger(__name__)

DIRECT = "direct"
REVERSED = "reversed"
PIVOT = "pivot"

STRATEGIES = (DIRECT, REVERSED, PIVOT)

CHECKPOINT_KIND = "bootstrap_checkpoint"
CHECKPOINT_VERSION = 1

CorpusSource = Sequence[str] | Callable[[], Sequence[str]]


class IntegrityError(Exception):
    """A persisted artifact failed validation on load or resume."""


@dataclass(frozen=True, slots=True)
class ScoredExample:
    """A synthetic pair with its quality score and provenance.

    position is the example's index within its round's sample and breaks
    score ties deterministically. Pivot-strategy examples also record the
    shared pivot sentence and the two leg scores their combined score was
    derived from.
    """

    example: Example
    score: float
    round: int
    position: int = 0
    pivot_text: str = ""
    leg_scores: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if not math.isfinite(self.score) or self.score < 0.0:
            raise ValueError("score must be finite and >= 0")
        if self.round < 1:
            raise ValueError("round must be >= 1")


@dataclass(frozen=True, slots=True)
class BootstrapConfig:
    rounds: int = 4
    sample_size: int = 100
    pool_keep: int = 8
    shots_per_prompt: int = 2
    strategy: str = DIRECT
    self_amplification: bool = True
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.sample_size < 1:
            raise ValueError("sample_size must be >= 1")
        if self.pool_keep < self.shots_per_prompt:
            raise ValueError("pool_keep must be >= shots_per_prompt")
        if self.shots_per_prompt < 0:
            raise ValueError("shots_per_prompt must be >= 0")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy: {self.strategy!r}")


@dataclass(frozen=True, slots=True)
class ScoringContext:
    """Everything filtering needs: an embedder and language profiles."""

    embedder: EmbedBackend
    profiles: tuple[LangProfile, ...]


@dataclass
class BootstrapCheckpoint:
    config: BootstrapConfig
    source_lang: LangTag
    target_lang: LangTag
    pivot_lang: LangTag
    completed: tuple[str, ...]
    pools: dict[str, tuple[ScoredExample, ...]]
    rng_state: tuple

    @property
    def stages(self) -> tuple[str, ...]:
        return plan_stages(self.config)

    @property
    def next_stage(self) -> str | None:
        pending = [s for s in self.stages if s not in self.completed]
        return pending[0] if pending else None

    @property
    def finished(self) -> bool:
        return self.next_stage is None

    def pool(self, stage: str) -> tuple[ScoredExample, ...]:
        return self.pools.get(stage, ())

    @property
    def final_pool(self) -> tuple[ScoredExample, ...]:
        if not self.finished:
            raise ValueError("bootstrap has pending stages")
        return self.pools.get(self.stages[-1], ())


def plan_stages(config: BootstrapConfig) -> tuple[str, ...]:
    """The ordered stage ids a run must complete."""
    if config.strategy == DIRECT:
        return tuple(f"main:{r}" for r in range(1, config.rounds + 1))
    if config.strategy == REVERSED:
        rounds = tuple(f"main:{r}" for r in range(1, config.rounds + 1))
        return rounds + ("final",)
    legs = [f"a:{r}" for r in range(1, config.rounds)]
    legs += [f"b:{r}" for r in range(1, config.rounds)]
    return tuple(legs) + (f"final:{config.rounds}",)


def new_checkpoint(
    config: BootstrapConfig,
    source_lang: LangTag,
    target_lang: LangTag,
    pivot_lang: LangTag | None = None,
) -> BootstrapCheckpoint:
    if source_lang.code == target_lang.code:
        raise ValueError("source and target language must differ")
    return BootstrapCheckpoint(
        config=config,
        source_lang=source_lang,
        target_lang=target_lang,
        pivot_lang=pivot_lang or LangTag(code="en", display_name="English"),
        completed=(),
        pools={},
        rng_state=random.Random(config.rng_seed).getstate(),
    )


def _pool_sort_key(se: ScoredExample) -> tuple:
    return (-se.score, se.round, se.position)


def _top_k(examples: Sequence[ScoredExample], k: int) -> tuple[ScoredExample, ...]:
    return tuple(sorted(examples, key=_pool_sort_key)[:k])


def build_fewshot_task(
    pool: Sequence[ScoredExample],
    direction: tuple[LangTag, LangTag],
    k: int,
    reverse_shots: bool = False,
) -> TaskSpec:
    """Translation task whose shots are the top-k pooled examples."""
    if len(pool) < k:
        raise ValueError(f"pool holds {len(pool)} examples, need {k}")
    shots = tuple(se.example for se in pool[:k])
    if reverse_shots:
        shots = tuple(reverse_example(e) for e in shots)
    return translation_task(direction[0], direction[1], shots=shots)


def _stage_direction(
    ckpt: BootstrapCheckpoint, stage: str
) -> tuple[LangTag, LangTag]:
    """Generation direction for one stage (not the requested direction)."""
    name = stage.split(":")[0]
    cfg = ckpt.config
    if cfg.strategy == DIRECT:
        return ckpt.source_lang, ckpt.target_lang
    if cfg.strategy == REVERSED:
        return ckpt.target_lang, ckpt.source_lang
    if name == "a":
        return ckpt.source_lang, ckpt.pivot_lang
    if name == "b":
        return ckpt.target_lang, ckpt.pivot_lang
    raise ValueError(f"stage {stage!r} has no single generation direction")


def stage_corpus_code(ckpt: BootstrapCheckpoint, stage: str) -> str:
    """Language code of the monolingual corpus a stage samples from."""
    name = stage.split(":")[0]
    if name == "final":
        if ckpt.config.strategy == REVERSED:
            raise ValueError("the reversal stage reads no corpus")
        return ckpt.pivot_lang.code
    return _stage_direction(ckpt, stage)[0].code


def _prev_stage_of(ckpt: BootstrapCheckpoint, stage: str) -> str | None:
    name, _, round_str = stage.partition(":")
    round_index = int(round_str) if round_str else 0
    if round_index > 1:
        return f"{name}:{round_index - 1}"
    return None


def _generation_stage(
    ckpt: BootstrapCheckpoint,
    stage: str,
    corpus: Sequence[str],
    backend: InfillBackend,
    scorer: ScoringContext,
    sap_config: SapConfig,
    rng: random.Random,
) -> tuple[ScoredExample, ...]:
    config = ckpt.config
    name, _, round_str = stage.partition(":")
    round_index = int(round_str)
    prev = _prev_stage_of(ckpt, stage)
    pool = ckpt.pool(prev) if prev else ()
    if config.sample_size > len(corpus):
        raise ValueError(
            f"sample_size {config.sample_size} exceeds corpus size {len(corpus)}"
        )
    sample = rng.sample(list(corpus), config.sample_size)
    gen_source, gen_target = _stage_direction(ckpt, stage)
    use_shots = config.self_amplification and round_index >= 2 and bool(pool)
    k = min(config.shots_per_prompt, len(pool)) if use_shots else 0
    task = build_fewshot_task(pool, (gen_source, gen_target), k)
    candidates = [
        (text, sap_generate(task, text, backend, sap_config).text) for text in sample
    ]
    survivors = filter_candidates(candidates, gen_target, scorer.embedder, scorer.profiles)
    fresh = [
        ScoredExample(
            example=Example(
                source_text=c.source,
                target_text=c.generated,
                source_lang=gen_source,
                target_lang=gen_target,
            ),
            score=c.score,
            round=round_index,
            position=c.position,
        )
        for c in survivors
    ]
    merged = _top_k(tuple(pool) + tuple(fresh), config.pool_keep)
    if not merged:
        logger.warning(
            "stage %s kept no examples; the next round falls back to zero-shot", stage
        )
    return merged


def _pivot_final_stage(
    ckpt: BootstrapCheckpoint,
    stage: str,
    pivot_corpus: Sequence[str],
    backend: InfillBackend,
    scorer: ScoringContext,
    sap_config: SapConfig,
    rng: random.Random,
) -> tuple[ScoredExample, ...]:
    config = ckpt.config
    round_index = int(stage.partition(":")[2])
    if config.sample_size > len(pivot_corpus):
        raise ValueError(
            f"sample_size {config.sample_size} exceeds corpus size {len(pivot_corpus)}"
        )
    sample = rng.sample(list(pivot_corpus), config.sample_size)
    last_leg_round = config.rounds - 1
    aligned: dict[int, dict[str, tuple[str, float]]] = {}
    for leg, out_lang in (("a", ckpt.source_lang), ("b", ckpt.target_lang)):
        leg_pool = ckpt.pool(f"{leg}:{last_leg_round}") if last_leg_round >= 1 else ()
        use_shots = config.self_amplification and bool(leg_pool)
        k = min(config.shots_per_prompt, len(leg_pool)) if use_shots else 0
        task = build_fewshot_task(
            leg_pool, (ckpt.pivot_lang, out_lang), k, reverse_shots=True
        )
        candidates = [
            (text, sap_generate(task, text, backend, sap_config).text)
            for text in sample
        ]
        survivors = filter_candidates(
            candidates, out_lang, scorer.embedder, scorer.profiles
        )
        for c in survivors:
            aligned.setdefault(c.position, {})[leg] = (c.generated, c.score)
    fresh = []
    for position in sorted(aligned):
        legs = aligned[position]
        if "a" not in legs or "b" not in legs:
            continue
        (text_a, score_a), (text_b, score_b) = legs["a"], legs["b"]
        fresh.append(
            ScoredExample(
                example=Example(
                    source_text=text_a,
                    target_text=text_b,
                    source_lang=ckpt.source_lang,
                    target_lang=ckpt.target_lang,
                ),
                score=pivot_score(score_a, score_b),
                round=round_index,
                position=position,
                pivot_text=sample[position],
                leg_scores=(score_a, score_b),
            )
        )
    if not fresh:
        logger.warning("pivot alignment kept no examples at stage %s", stage)
    return _top_k(fresh, config.pool_keep)


def _reversal_stage(ckpt: BootstrapCheckpoint) -> tuple[ScoredExample, ...]:
    last = f"main:{ckpt.config.rounds}"
    return tuple(
        replace(se, example=reverse_example(se.example)) for se in ckpt.pool(last)
    )


def run_round(
    ckpt: BootstrapCheckpoint,
    mono_corpus: Sequence[str],
    backend: InfillBackend,
    scorer: ScoringContext,
    sap_config: SapConfig,
) -> BootstrapCheckpoint:
    """Advance the checkpoint by exactly one pending stage.

    mono_corpus must be the corpus stage_corpus_code() names for the next
    stage; the reversal stage of the reversed strategy ignores it.
    """
    stage = ckpt.next_stage
    if stage is None:
        raise ValueError("bootstrap already finished")
    rng = random.Random()
    rng.setstate(ckpt.rng_state)
    if stage == "final" and ckpt.config.strategy == REVERSED:
        pool = _reversal_stage(ckpt)
    elif stage.startswith("final:"):
        pool = _pivot_final_stage(
            ckpt, stage, mono_corpus, backend, scorer, sap_config, rng
        )
    else:
        pool = _generation_stage(
            ckpt, stage, mono_corpus, backend, scorer, sap_config, rng
        )
    pools = dict(ckpt.pools)
    pools[stage] = pool
    return BootstrapCheckpoint(
        config=ckpt.config,
        source_lang=ckpt.source_lang,
        target_lang=ckpt.target_lang,
        pivot_lang=ckpt.pivot_lang,
        completed=ckpt.completed + (stage,),
        pools=pools,
        rng_state=rng.getstate(),
    )


def required_corpus_codes(
    config: BootstrapConfig, source_lang: LangTag, target_lang: LangTag,
    pivot_lang: LangTag | None = None,
) -> tuple[str, ...]:
    pivot = pivot_lang or LangTag(code="en", display_name="English")
    if config.strategy == DIRECT:
        return (source_lang.code,)
    if config.strategy == REVERSED:
        return (target_lang.code,)
    return (source_lang.code, target_lang.code, pivot.code)


def run_bootstrap(
    config: BootstrapConfig,
    source_lang: LangTag,
    target_lang: LangTag,
    corpora: Mapping[str, CorpusSource],
    backend: InfillBackend,
    scorer: ScoringContext,
    sap_config: SapConfig | None = None,
    pivot_lang: LangTag | None = None,
    checkpoint_path: str | Path | None = None,
    stop_after: int | None = None,
) -> BootstrapCheckpoint:
    """Run (or resume) all stages of a bootstrap.

    Corpora map language codes to sentence lists or zero-argument loaders;
    a loader is only invoked when its corpus is actually needed, so a
    direct-strategy run never touches the target language. When
    checkpoint_path is set, the checkpoint is rewritten atomically after
    every stage and an existing file resumes the run. stop_after returns
    early once that many stages are complete.
    """
    sap_config = sap_config or SapConfig()
    ckpt = None
    if checkpoint_path is not None and Path(checkpoint_path).exists():
        ckpt = load_checkpoint(checkpoint_path)
        fresh = new_checkpoint(config, source_lang, target_lang, pivot_lang)
        if _header_payload(ckpt)["config"] != _header_payload(fresh)["config"]:
            raise IntegrityError(
                f"checkpoint {checkpoint_path} was written by a different run "
                f"configuration; refusing to resume"
            )
    if ckpt is None:
        ckpt = new_checkpoint(config, source_lang, target_lang, pivot_lang)
    needed = required_corpus_codes(config, source_lang, target_lang, ckpt.pivot_lang)
    missing = [code for code in needed if code not in corpora]
    if missing:
        raise ValueError(f"missing monolingual corpora for: {missing}")
    cache: dict[str, list[str]] = {}

    def corpus_for(code: str) -> list[str]:
        if code not in cache:
            source = corpora[code]
            cache[code] = list(source() if callable(source) else source)
        return cache[code]

    while not ckpt.finished:
        if stop_after is not None and len(ckpt.completed) >= stop_after:
            break
        stage = ckpt.next_stage
        if stage == "final" and config.strategy == REVERSED:
            corpus: Sequence[str] = ()
        else:
            corpus = corpus_for(stage_corpus_code(ckpt, stage))
        ckpt = run_round(ckpt, corpus, backend, scorer, sap_config)
        if checkpoint_path is not None:
            save_checkpoint(ckpt, checkpoint_path)
    return ckpt


# ---------------------------------------------------------------------------
# Persistence.

def _lang_payload(lang: LangTag) -> dict[str, str]:
    return {"code": lang.code, "display_name": lang.display_name}


def _lang_from_payload(payload: Mapping[str, str]) -> LangTag:
    return LangTag(code=payload["code"], display_name=payload["display_name"])


def _header_payload(ckpt: BootstrapCheckpoint) -> dict[str, Any]:
    cfg = ckpt.config
    return {
        "kind": CHECKPOINT_KIND,
        "version": CHECKPOINT_VERSION,
        "config": {
            "rounds": cfg.rounds,
            "sample_size": cfg.sample_size,
            "pool_keep": cfg.pool_keep,
            "shots_per_prompt": cfg.shots_per_prompt,
            "strategy": cfg.strategy,
            "self_amplification": cfg.self_amplification,
            "rng_seed": cfg.rng_seed,
            "source_lang": _lang_payload(ckpt.source_lang),
            "target_lang": _lang_payload(ckpt.target_lang),
            "pivot_lang": _lang_payload(ckpt.pivot_lang),
        },
        "completed": list(ckpt.completed),
        "rng_state": [ckpt.rng_state[0], list(ckpt.rng_state[1]), ckpt.rng_state[2]],
    }


def _example_payload(stage: str, se: ScoredExample) -> dict[str, Any]:
    return {
        "stage": stage,
        "source": se.example.source_text,
        "target": se.example.target_text,
        "source_lang": _lang_payload(se.example.source_lang),
        "target_lang": _lang_payload(se.example.target_lang),
        "score": se.score,
        "round": se.round,
        "position": se.position,
        "pivot_text": se.pivot_text,
        "leg_scores": list(se.leg_scores) if se.leg_scores is not None else None,
    }


def save_checkpoint(ckpt: BootstrapCheckpoint, path: str | Path) -> None:
    """Write the checkpoint as JSON lines, atomically (write then rename)."""
    path = Path(path)
    lines = [json.dumps(_header_payload(ckpt), sort_keys=True, ensure_ascii=False)]
    for stage in ckpt.completed:
        for se in ckpt.pools.get(stage, ()):
            lines.append(
                json.dumps(_example_payload(stage, se), sort_keys=True, ensure_ascii=False)
            )
    data = "\n".join(lines) + "\n"
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(data)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def load_checkpoint(path: str | Path) -> BootstrapCheckpoint:
    """Parse a checkpoint file, validating structure line by line."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IntegrityError(f"cannot read checkpoint {path}: {exc}") from exc
    if not lines:
        raise IntegrityError(f"checkpoint {path} is empty")
    try:
        header = json.loads(lines[0])
        if header.get("kind") != CHECKPOINT_KIND:
            raise ValueError(f"unexpected kind {header.get('kind')!r}")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported version {header.get('version')!r}")
        cfg_payload = header["config"]
        config = BootstrapConfig(
            rounds=cfg_payload["rounds"],
            sample_size=cfg_payload["sample_size"],
            pool_keep=cfg_payload["pool_keep"],
            shots_per_prompt=cfg_payload["shots_per_prompt"],
            strategy=cfg_payload["strategy"],
            self_amplification=cfg_payload["self_amplification"],
            rng_seed=cfg_payload["rng_seed"],
        )
        completed = tuple(header["completed"])
        raw_state = header["rng_state"]
        rng_state = (raw_state[0], tuple(raw_state[1]), raw_state[2])
        ckpt = BootstrapCheckpoint(
            config=config,
            source_lang=_lang_from_payload(cfg_payload["source_lang"]),
            target_lang=_lang_from_payload(cfg_payload["target_lang"]),
            pivot_lang=_lang_from_payload(cfg_payload["pivot_lang"]),
            completed=completed,
            pools={stage: () for stage in completed},
            rng_state=rng_state,
        )
    except (KeyError, ValueError, TypeError, IndexError) as exc:
        raise IntegrityError(f"corrupt checkpoint header in {path}: {exc}") from exc
    pools: dict[str, list[ScoredExample]] = {stage: [] for stage in completed}
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            payload = json.loads(line)
            stage = payload["stage"]
            if stage not in pools:
                raise ValueError(f"stage {stage!r} not in completed list")
            leg_scores = payload["leg_scores"]
            pools[stage].append(
                ScoredExample(
                    example=Example(
                        source_text=payload["source"],
                        target_text=payload["target"],
                        source_lang=_lang_from_payload(payload["source_lang"]),
                        target_lang=_lang_from_payload(payload["target_lang"]),
                    ),
                    score=payload["score"],
                    round=payload["round"],
                    position=payload["position"],
                    pivot_text=payload["pivot_text"],
                    leg_scores=tuple(leg_scores) if leg_scores is not None else None,
                )
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise IntegrityError(
                f"corrupt checkpoint record at {path}:{lineno}: {exc}"
            ) from exc
    ckpt.pools = {stage: tuple(examples) for stage, examples in pools.items()}
    return ckpt
