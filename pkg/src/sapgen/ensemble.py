"""Prompt ensembling: several few-shot prompts, one unsupervised winner.

The top-N pool is split into N/shots prompts; each prompt translates the
sentence independently and the candidate most similar to the source (same
scorer as the bootstrap filter) wins, ties toward the lower prompt index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .backend_gateway import EmbedBackend, InfillBackend
from .bootstrap import ScoredExample
from .prompt_kit import TaskSpec, translation_task
from .sap_core import SapConfig, SapResult, sap_generate
from .scoring import similarity

RANK_CONSECUTIVE = "rank_consecutive"
ROUND_ROBIN = "round_robin"

GROUPINGS = (RANK_CONSECUTIVE, ROUND_ROBIN)


@dataclass(frozen=True, slots=True)
class PromptEnsemble:
    tasks: tuple[TaskSpec, ...]
    pool_provenance: str = ""

    def __post_init__(self) -> None:
        if not self.tasks:
            raise ValueError("ensemble must contain at least one prompt")


@dataclass(frozen=True, slots=True)
class EnsembleChoice:
    """One sentence's ensemble outcome, including per-prompt diagnostics."""

    text: str
    winner_index: int
    candidates: tuple[str, ...]
    scores: tuple[float, ...]
    results: tuple[SapResult, ...]
    all_empty: bool

    @property
    def backend_calls(self) -> int:
        return sum(r.backend_calls for r in self.results)


def build_ensemble(
    pool: Sequence[ScoredExample],
    n: int,
    shots_per_prompt: int,
    grouping: str = RANK_CONSECUTIVE,
    pool_provenance: str = "",
) -> PromptEnsemble:
    """Split the top-n pooled examples into n/shots_per_prompt prompts.

    rank_consecutive groups adjacent ranks (best two together); round_robin
    deals ranks out one prompt at a time. Every top-n example is used
    exactly once.
    """
    if shots_per_prompt < 1:
        raise ValueError("shots_per_prompt must be >= 1")
    if n % shots_per_prompt != 0:
        raise ValueError(
            f"ensemble size {n} is not divisible by shots_per_prompt {shots_per_prompt}"
        )
    if len(pool) < n:
        raise ValueError(f"pool holds {len(pool)} examples, need {n}")
    if grouping not in GROUPINGS:
        raise ValueError(f"unknown grouping: {grouping!r}")
    top = list(pool[:n])
    count = n // shots_per_prompt
    if grouping == RANK_CONSECUTIVE:
        groups = [top[i * shots_per_prompt : (i + 1) * shots_per_prompt] for i in range(count)]
    else:
        groups = [top[i::count] for i in range(count)]
    direction = (top[0].example.source_lang, top[0].example.target_lang)
    for se in top:
        if (se.example.source_lang.code, se.example.target_lang.code) != (
            direction[0].code,
            direction[1].code,
        ):
            raise ValueError("all pooled examples must share one direction")
    tasks = tuple(
        translation_task(
            direction[0], direction[1], shots=tuple(se.example for se in group)
        )
        for group in groups
    )
    return PromptEnsemble(tasks=tasks, pool_provenance=pool_provenance)


def translate_ensemble(
    ensemble: PromptEnsemble,
    source_sentence: str,
    backend: InfillBackend,
    embedder: EmbedBackend,
    sap_config: SapConfig,
) -> EnsembleChoice:
    """Generate one candidate per prompt and keep the best-scoring one.

    The selection score is similarity(candidate, source).f1. Empty
    candidates never win unless every candidate is empty, in which case the
    result is empty and flagged.
    """
    results = tuple(
        sap_generate(task, source_sentence, backend, sap_config)
        for task in ensemble.tasks
    )
    scores = []
    for result in results:
        if result.text.split():
            scores.append(similarity(result.text, source_sentence, embedder).f1)
        else:
            scores.append(float("-inf"))
    winner = 0
    for i in range(1, len(results)):
        if scores[i] > scores[winner]:
            winner = i
    all_empty = not any(r.text.split() for r in results)
    text = "" if all_empty else results[winner].text
    clean_scores = tuple(0.0 if s == float("-inf") else s for s in scores)
    return EnsembleChoice(
        text=text,
        winner_index=winner,
        candidates=tuple(r.text for r in results),
        scores=clean_scores,
        results=results,
        all_empty=all_empty,
    )
