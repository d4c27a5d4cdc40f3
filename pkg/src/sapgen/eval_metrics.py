"""Supervised evaluation metrics.

Corpus BLEU with clipped n-gram precision, brevity penalty, and pluggable
tokenization (a subword tokenizer can be loaded from a vocabulary file for
tokenizer-neutral comparison); QA exact-match and token F1 over normalized
answers; and ROUGE-L from sentence-level longest common subsequence.
"""

from __future__ import annotations

import math
import re
import string
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import kernels

SMOOTHING_NONE = "none"
SMOOTHING_EXP = "add_epsilon_exponential"

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def default_tokenize(text: str) -> list[str]:
    """Whitespace-and-punctuation tokenizer: words and punctuation marks."""
    return _TOKEN_RE.findall(text)


def load_subword_tokenizer(vocab_path: str | Path) -> Callable[[str], list[str]]:
    """Greedy longest-match subword tokenizer from a vocabulary file.

    The file lists one piece per line. Each whitespace word is prefixed
    with the boundary marker "▁" and segmented greedily left to right;
    characters not covered by any piece become single-character tokens.
    """
    vocab = set()
    max_len = 1
    for line in Path(vocab_path).read_text(encoding="utf-8").splitlines():
        piece = line.strip()
        if piece:
            vocab.add(piece)
            max_len = max(max_len, len(piece))

    def tokenize(text: str) -> list[str]:
        tokens: list[str] = []
        for word in text.split():
            s = "▁" + word
            i = 0
            while i < len(s):
                for j in range(min(len(s), i + max_len), i, -1):
                    if s[i:j] in vocab:
                        tokens.append(s[i:j])
                        i = j
                        break
                else:
                    tokens.append(s[i])
                    i += 1
        return tokens

    return tokenize


@dataclass(frozen=True)
class BleuConfig:
    max_ngram: int = 4
    smoothing: str = SMOOTHING_EXP
    tokenizer: Callable[[str], list[str]] = default_tokenize

    def __post_init__(self) -> None:
        if self.max_ngram < 1:
            raise ValueError("max_ngram must be >= 1")
        if self.smoothing not in (SMOOTHING_NONE, SMOOTHING_EXP):
            raise ValueError(f"unknown smoothing: {self.smoothing!r}")


@dataclass(frozen=True)
class MetricReport:
    metric: str
    corpus_score: float
    segment_scores: tuple[float, ...]
    config: tuple[tuple[str, Any], ...]

    def as_dict(self) -> dict[str, Any]:
        return {
            "metric": self.metric,
            "corpus_score": self.corpus_score,
            "segment_scores": list(self.segment_scores),
            "config": dict(self.config),
        }


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(
    candidates: Sequence[str],
    references: Sequence[str],
    cfg: BleuConfig = BleuConfig(),
) -> float:
    """Corpus BLEU in [0, 100].

    Geometric mean of clipped n-gram precisions times the brevity penalty.
    Orders with no candidate n-grams at all (corpus shorter than n) are
    excluded from the mean so that a perfect corpus always scores 100.
    Exponential smoothing replaces zero match counts with a halving
    epsilon; unsmoothed, any zero match count yields 0.
    """
    if len(candidates) != len(references):
        raise ValueError("candidates and references must align one-to-one")
    if not candidates:
        raise ValueError("corpus must be non-empty")
    matches = [0] * cfg.max_ngram
    totals = [0] * cfg.max_ngram
    cand_len = 0
    ref_len = 0
    for cand_text, ref_text in zip(candidates, references):
        cand = cfg.tokenizer(cand_text)
        ref = cfg.tokenizer(ref_text)
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, cfg.max_ngram + 1):
            cand_counts = _ngram_counts(cand, n)
            if not cand_counts:
                continue
            ref_counts = _ngram_counts(ref, n)
            totals[n - 1] += sum(cand_counts.values())
            matches[n - 1] += sum(
                min(count, ref_counts[gram]) for gram, count in cand_counts.items()
            )
    if cand_len == 0:
        return 0.0
    log_sum = 0.0
    orders = 0
    smooth = 1.0
    for n in range(1, cfg.max_ngram + 1):
        total = totals[n - 1]
        if total == 0:
            continue
        match = matches[n - 1]
        if match == 0:
            if cfg.smoothing == SMOOTHING_NONE:
                return 0.0
            smooth *= 2.0
            precision = 1.0 / (smooth * total)
        else:
            precision = match / total
        log_sum += math.log(precision)
        orders += 1
    if orders == 0:
        return 0.0
    if cand_len >= ref_len:
        brevity_penalty = 1.0
    else:
        brevity_penalty = math.exp(1.0 - ref_len / cand_len)
    return 100.0 * brevity_penalty * math.exp(log_sum / orders)


def bleu_report(
    candidates: Sequence[str],
    references: Sequence[str],
    cfg: BleuConfig = BleuConfig(),
) -> MetricReport:
    segments = tuple(
        corpus_bleu([c], [r], cfg) for c, r in zip(candidates, references)
    )
    return MetricReport(
        metric="bleu",
        corpus_score=corpus_bleu(candidates, references, cfg),
        segment_scores=segments,
        config=(("max_ngram", cfg.max_ngram), ("smoothing", cfg.smoothing)),
    )


# ---------------------------------------------------------------------------
# QA exact match and token F1.

_ARTICLES = {"a", "an", "the"}
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_answer(text: str) -> str:
    """Lowercase, strip punctuation, drop articles, collapse whitespace."""
    text = text.lower().translate(_PUNCT_TABLE)
    tokens = [t for t in text.split() if t not in _ARTICLES]
    return " ".join(tokens)


def _token_f1(pred_tokens: list[str], gold_tokens: list[str]) -> float:
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    common = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if common == 0:
        return 0.0
    precision = common / len(pred_tokens)
    recall = common / len(gold_tokens)
    return 2.0 * precision * recall / (precision + recall)


def qa_em_f1(prediction: str, gold_answers: Sequence[str]) -> tuple[int, float]:
    """Exact match against any gold plus the best token-overlap F1."""
    if not gold_answers:
        raise ValueError("at least one gold answer is required")
    pred_norm = normalize_answer(prediction)
    pred_tokens = pred_norm.split()
    em = 0
    best_f1 = 0.0
    for gold in gold_answers:
        gold_norm = normalize_answer(gold)
        if pred_norm == gold_norm:
            em = 1
        best_f1 = max(best_f1, _token_f1(pred_tokens, gold_norm.split()))
    return em, best_f1


# ---------------------------------------------------------------------------
# ROUGE-L.

def lcs_length_tokens(a: Sequence[str], b: Sequence[str]) -> int:
    code_of: dict[str, int] = {}
    codes_a = np.array([code_of.setdefault(t, len(code_of)) for t in a], dtype=np.int64)
    codes_b = np.array([code_of.setdefault(t, len(code_of)) for t in b], dtype=np.int64)
    return kernels.lcs_length(codes_a, codes_b)


def rouge_l(
    prediction: str,
    reference: str,
    beta_sq: float = 1.44,
    tokenizer: Callable[[str], list[str]] = default_tokenize,
) -> float:
    """Sentence-level LCS F-measure with recall-favoring beta (default 1.2^2)."""
    pred = tokenizer(prediction)
    ref = tokenizer(reference)
    if not pred or not ref:
        return 0.0
    lcs = lcs_length_tokens(pred, ref)
    if lcs == 0:
        return 0.0
    precision = lcs / len(pred)
    recall = lcs / len(ref)
    denom = recall + beta_sq * precision
    if denom == 0.0:
        return 0.0
    return (1.0 + beta_sq) * precision * recall / denom
