import functools
import itertools
import math
import random

import pytest

from sapgen.eval_metrics import (
    BleuConfig,
    SMOOTHING_EXP,
    SMOOTHING_NONE,
    bleu_report,
    corpus_bleu,
    default_tokenize,
    lcs_length_tokens,
    load_subword_tokenizer,
    normalize_answer,
    qa_em_f1,
    rouge_l,
)

UNSMOOTHED = BleuConfig(smoothing=SMOOTHING_NONE)


# ---------------------------------------------------------------------------
# BLEU.

def test_bleu_identity_corpus_scores_100():
    corpus = ["the cat sat on the mat", "a dog barked", "hello"]
    assert corpus_bleu(corpus, corpus, UNSMOOTHED) == pytest.approx(100.0, abs=1e-9)
    assert corpus_bleu(corpus, corpus) == pytest.approx(100.0, abs=1e-9)


def test_bleu_degenerate_repetition_scores_zero_unsmoothed():
    score = corpus_bleu(
        ["the the the the the the the"], ["the cat is on the mat"], UNSMOOTHED
    )
    assert score == pytest.approx(0.0, abs=1e-9)


def test_bleu_empty_candidate_scores_zero():
    assert corpus_bleu([""], ["the cat"], UNSMOOTHED) == 0.0
    assert corpus_bleu([""], ["the cat"]) == 0.0


def test_bleu_hand_computed_bigram_case():
    # unigrams 2/4, bigrams 1/3, no brevity penalty
    score = corpus_bleu(
        ["the cat the cat"], ["the cat sat"], BleuConfig(max_ngram=2, smoothing="none")
    )
    assert score == pytest.approx(100.0 * math.sqrt(1.0 / 6.0), abs=1e-9)
    assert score == pytest.approx(40.824829046386306, abs=1e-6)


def test_bleu_hand_computed_smoothed_case():
    # unigrams 1/2; zero bigram matches smooth to 1/(2*1)
    score = corpus_bleu(["the dog"], ["the cat"], BleuConfig(max_ngram=2))
    assert score == pytest.approx(50.0, abs=1e-9)


def test_bleu_hand_computed_brevity_penalty():
    score = corpus_bleu(["the"], ["the cat"], BleuConfig(max_ngram=1, smoothing="none"))
    assert score == pytest.approx(100.0 * math.exp(-1.0), abs=1e-9)
    assert score == pytest.approx(36.787944117144235, abs=1e-6)


def test_bleu_short_sentences_still_score_100_on_identity():
    # no 4-grams exist; empty orders must be excluded, not zeroed
    corpus = ["hi", "go home"]
    assert corpus_bleu(corpus, corpus) == pytest.approx(100.0, abs=1e-9)


def test_bleu_is_invariant_under_corpus_reordering():
    cands = ["the cat sat", "a dog", "birds fly high", "hello there"]
    refs = ["the cat sat down", "a dog barked", "birds fly", "hello"]
    base = corpus_bleu(cands, refs)
    order = [2, 0, 3, 1]
    shuffled = corpus_bleu([cands[i] for i in order], [refs[i] for i in order])
    assert shuffled == pytest.approx(base, abs=1e-12)


def test_bleu_rejects_misaligned_corpora():
    with pytest.raises(ValueError):
        corpus_bleu(["a"], ["a", "b"])


def test_bleu_smoothing_beats_unsmoothed_on_sparse_matches():
    cands = ["the dog ran home quickly"]
    refs = ["the cat sat on the mat"]
    smoothed = corpus_bleu(cands, refs, BleuConfig(smoothing=SMOOTHING_EXP))
    hard = corpus_bleu(cands, refs, UNSMOOTHED)
    assert hard == 0.0
    assert smoothed > 0.0


def test_bleu_report_carries_segment_scores():
    report = bleu_report(["the cat", "a dog"], ["the cat", "a dog"])
    assert report.metric == "bleu"
    assert report.corpus_score == pytest.approx(100.0, abs=1e-9)
    assert len(report.segment_scores) == 2
    payload = report.as_dict()
    assert payload["config"]["max_ngram"] == 4


def test_default_tokenizer_splits_punctuation():
    assert default_tokenize("Hello, world!") == ["Hello", ",", "world", "!"]
    assert default_tokenize("it's fine") == ["it", "'", "s", "fine"]


def test_subword_tokenizer_greedy_longest_match(tmp_path):
    vocab = tmp_path / "vocab.txt"
    vocab.write_text("▁the\n▁cat\ns\n▁dog\n▁do\ng\n", encoding="utf-8")
    tokenize = load_subword_tokenizer(vocab)
    assert tokenize("the cats") == ["▁the", "▁cat", "s"]
    # longest match wins over the shorter prefix
    assert tokenize("dog") == ["▁dog"]
    corpus = ["the cats", "dog"]
    cfg = BleuConfig(tokenizer=tokenize)
    assert corpus_bleu(corpus, corpus, cfg) == pytest.approx(100.0, abs=1e-9)


# ---------------------------------------------------------------------------
# QA normalization, EM, F1.

def test_normalize_answer_examples():
    assert normalize_answer("The Cat!") == "cat"
    assert normalize_answer("An  apple a day") == "apple day"
    assert normalize_answer("U.S.A.") == "usa"
    assert normalize_answer("") == ""


def test_qa_exact_match_is_normalization_invariant():
    assert qa_em_f1("The Cat!", ["cat"]) == (1, 1.0)
    assert qa_em_f1("a cat", ["cat", "dog"]) == (1, 1.0)


def test_qa_f1_partial_overlap():
    em, f1 = qa_em_f1("the cat sat", ["cat sat on mat"])
    assert em == 0
    assert f1 == pytest.approx(2.0 / 3.0, abs=1e-12)


def test_qa_takes_the_best_gold():
    em, f1 = qa_em_f1("blue whale", ["red fox", "blue whale", "green bird"])
    assert (em, f1) == (1, 1.0)


def test_qa_disjoint_answers_score_zero():
    assert qa_em_f1("north", ["south pole"]) == (0, 0.0)


def test_qa_both_empty_after_normalization_is_a_match():
    em, f1 = qa_em_f1("the", ["an"])
    assert (em, f1) == (1, 1.0)


def test_qa_requires_a_gold_answer():
    with pytest.raises(ValueError):
        qa_em_f1("x", [])


# ---------------------------------------------------------------------------
# ROUGE-L.

def lcs_recursive(a, b):
    """Memoized textbook recursion, independent of the array kernels."""

    @functools.lru_cache(maxsize=None)
    def rec(i, j):
        if i == 0 or j == 0:
            return 0
        if a[i - 1] == b[j - 1]:
            return rec(i - 1, j - 1) + 1
        return max(rec(i - 1, j), rec(i, j - 1))

    return rec(len(a), len(b))


def rouge_oracle(pred_tokens, ref_tokens, beta_sq):
    if not pred_tokens or not ref_tokens:
        return 0.0
    lcs = lcs_recursive(tuple(pred_tokens), tuple(ref_tokens))
    if lcs == 0:
        return 0.0
    p = lcs / len(pred_tokens)
    r = lcs / len(ref_tokens)
    return (1 + beta_sq) * p * r / (r + beta_sq * p)


def test_rouge_identity_is_one():
    assert rouge_l("the cat sat", "the cat sat") == pytest.approx(1.0, abs=1e-12)


def test_rouge_hand_computed_case():
    # pred "a b c d", ref "a c d": P=3/4, R=1, beta^2=1.44
    score = rouge_l("a b c d", "a c d")
    assert score == pytest.approx(0.8798076923076923, abs=1e-12)
    plain = rouge_l("a b c d", "a c d", beta_sq=1.0)
    assert plain == pytest.approx(6.0 / 7.0, abs=1e-12)


def test_rouge_disjoint_and_empty_cases():
    assert rouge_l("a b", "c d") == 0.0
    assert rouge_l("", "c d") == 0.0
    assert rouge_l("a b", "") == 0.0


def test_rouge_matches_oracle_on_random_pairs():
    rng = random.Random(7)
    alphabet = ["x", "y", "z"]
    for _ in range(300):
        pred = rng.choices(alphabet, k=rng.randint(0, 12))
        ref = rng.choices(alphabet, k=rng.randint(0, 12))
        got = rouge_l(" ".join(pred), " ".join(ref))
        assert got == pytest.approx(rouge_oracle(pred, ref, 1.44), abs=1e-12)


def test_lcs_tokens_matches_recursion_exhaustively_for_short_pairs():
    alphabet = "xyz"
    seqs = [
        list(c)
        for n in range(0, 4)
        for c in itertools.product(alphabet, repeat=n)
    ]
    for a in seqs:
        for b in seqs:
            assert lcs_length_tokens(a, b) == lcs_recursive(tuple(a), tuple(b))
