"""Unsupervised quality signals.

Greedy-matching token-embedding similarity over a pluggable embedder, the
harmonic-mean combiner for pivot legs, and a rank-order character n-gram
language identifier with bundled seed profiles.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .backend_gateway import EmbedBackend, EmbeddingRequest
from .prompt_kit import LangTag

PROFILE_NGRAM_MAX = 3
PROFILE_SIZE = 300

BUNDLED_LANGUAGES = {
    "en": "English",
    "es": "Spanish",
    "de": "German",
    "fr": "French",
    "ru": "Russian",
    "zh": "Chinese",
}


@dataclass(frozen=True, slots=True)
class SimilarityScore:
    precision: float
    recall: float
    f1: float


def _normalized_rows(vectors: Sequence[Sequence[float]]) -> np.ndarray:
    mat = np.asarray(vectors, dtype=np.float64)
    if mat.ndim != 2:
        mat = mat.reshape(len(vectors), -1)
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    np.divide(mat, norms, out=mat, where=norms > 0.0)
    return mat


def similarity(
    candidate: str,
    reference: str,
    embedder: EmbedBackend,
    idf_weights: Mapping[str, float] | None = None,
) -> SimilarityScore:
    """Greedy-matching cosine similarity over token embeddings.

    Precision is the mean over candidate tokens of the best cosine against
    any reference token; recall is symmetric; f1 is their harmonic mean.
    Zero-norm token vectors contribute 0. Optional idf_weights reweight the
    means per token (off by default).
    """
    if not candidate.split() or not reference.split():
        raise ValueError("candidate and reference must contain tokens")
    response = embedder.embed(EmbeddingRequest(texts=(candidate, reference)))
    cand, ref = response.results[0], response.results[1]
    cand_mat = _normalized_rows(cand.vectors)
    ref_mat = _normalized_rows(ref.vectors)
    if idf_weights is None:
        precision, recall = kernels.greedy_match(cand_mat, ref_mat)
    else:
        sim = cand_mat @ ref_mat.T
        wc = np.array([idf_weights.get(t, 1.0) for t in cand.tokens], dtype=np.float64)
        wr = np.array([idf_weights.get(t, 1.0) for t in ref.tokens], dtype=np.float64)
        precision = float(sim.max(axis=1) @ wc / wc.sum()) if wc.sum() > 0 else 0.0
        recall = float(sim.max(axis=0) @ wr / wr.sum()) if wr.sum() > 0 else 0.0
    if precision + recall > 0.0:
        f1 = 2.0 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
    return SimilarityScore(precision=precision, recall=recall, f1=f1)


def pivot_score(s1: float, s2: float) -> float:
    """Harmonic mean of two leg scores."""
    if s1 < 0.0 or s2 < 0.0:
        raise ValueError("pivot_score inputs must be >= 0")
    if s1 + s2 == 0.0:
        return 0.0
    return 2.0 * s1 * s2 / (s1 + s2)


# ---------------------------------------------------------------------------
# Rank-order character n-gram language identification.

_WS_RUN = re.compile(r"\s+")


def _normalize_for_profile(text: str) -> str:
    return _WS_RUN.sub(" ", text.casefold()).strip()


def _ngram_ranking(text: str, top: int = PROFILE_SIZE) -> tuple[str, ...]:
    normalized = _normalize_for_profile(text)
    counts: dict[str, int] = {}
    for n in range(1, PROFILE_NGRAM_MAX + 1):
        for i in range(len(normalized) - n + 1):
            gram = normalized[i : i + n]
            counts[gram] = counts.get(gram, 0) + 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return tuple(gram for gram, _ in ranked[:top])


@dataclass(frozen=True, slots=True)
class LangProfile:
    lang: LangTag
    ranking: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.ranking:
            raise ValueError("profile must contain at least one n-gram")


def build_profile(lang: LangTag, seed_text: str, top: int = PROFILE_SIZE) -> LangProfile:
    return LangProfile(lang=lang, ranking=_ngram_ranking(seed_text, top=top))


@dataclass(frozen=True, slots=True)
class DetectionResult:
    lang: LangTag
    confidence: float
    indeterminate: bool


def out_of_place_distance(
    text_ranking: Sequence[str], profile: LangProfile
) -> int:
    """Sum of rank displacements; n-grams absent from the profile cost the
    profile size."""
    rank_of = {gram: i for i, gram in enumerate(profile.ranking)}
    penalty = len(profile.ranking)
    total = 0
    for i, gram in enumerate(text_ranking):
        j = rank_of.get(gram)
        total += penalty if j is None else abs(i - j)
    return total


def detect_language(
    text: str, profiles: Sequence[LangProfile]
) -> DetectionResult:
    """Best-matching profile plus a normalized margin as confidence.

    Texts shorter than 3 characters are flagged indeterminate. With a
    single profile the confidence is defined as 1.
    """
    if not profiles:
        raise ValueError("at least one profile is required")
    if not text:
        raise ValueError("text must be non-empty")
    indeterminate = len(text) < PROFILE_NGRAM_MAX
    ranking = _ngram_ranking(text)
    if len(profiles) == 1:
        return DetectionResult(
            lang=profiles[0].lang,
            confidence=0.0 if indeterminate else 1.0,
            indeterminate=indeterminate,
        )
    distances = [out_of_place_distance(ranking, p) for p in profiles]
    order = sorted(range(len(profiles)), key=lambda i: (distances[i], i))
    best, runner_up = order[0], order[1]
    d1, d2 = float(distances[best]), float(distances[runner_up])
    confidence = 0.0 if d2 == 0.0 else (d2 - d1) / d2
    if indeterminate:
        confidence = 0.0
    return DetectionResult(
        lang=profiles[best].lang, confidence=confidence, indeterminate=indeterminate
    )


def load_bundled_profiles(
    codes: Iterable[str] | None = None,
) -> list[LangProfile]:
    """Build profiles from the seed corpora shipped as package data."""
    selected = list(codes) if codes is not None else sorted(BUNDLED_LANGUAGES)
    profiles = []
    for code in selected:
        if code not in BUNDLED_LANGUAGES:
            raise ValueError(f"no bundled profile for language code {code!r}")
        path = resources.files("sapgen").joinpath(f"data/profiles/{code}.txt")
        seed_text = path.read_text(encoding="utf-8")
        profiles.append(
            build_profile(LangTag(code=code, display_name=BUNDLED_LANGUAGES[code]), seed_text)
        )
    return profiles


# ---------------------------------------------------------------------------
# Candidate filtering for the bootstrap.

@dataclass(frozen=True, slots=True)
class ScoredCandidate:
    source: str
    generated: str
    score: float
    position: int


def filter_candidates(
    cands: Sequence[tuple[str, str]],
    target_lang: LangTag,
    embedder: EmbedBackend,
    profiles: Sequence[LangProfile],
) -> list[ScoredCandidate]:
    """Language-filter then score candidates against their sources.

    Drops candidates whose detected language is not target_lang, scores
    survivors with similarity(generated, source).f1, and returns them
    sorted by descending score with input order breaking ties.
    """
    survivors = []
    for position, (source, generated) in enumerate(cands):
        if not generated.split():
            continue
        detected = detect_language(generated, profiles)
        if detected.lang.code != target_lang.code:
            continue
        score = similarity(generated, source, embedder).f1
        survivors.append(
            ScoredCandidate(
                source=source, generated=generated, score=score, position=position
            )
        )
    return sorted(survivors, key=lambda c: -c.score)
