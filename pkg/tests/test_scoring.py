import math
import random

import pytest

from sapgen.backend_gateway import (
    EmbeddingRequest,
    EmbeddingResponse,
    MockEmbedder,
    TextEmbedding,
)
from sapgen.prompt_kit import LangTag
from sapgen.scoring import (
    ScoredCandidate,
    build_profile,
    detect_language,
    filter_candidates,
    load_bundled_profiles,
    out_of_place_distance,
    pivot_score,
    similarity,
)

EN = LangTag(code="en", display_name="English")
RU = LangTag(code="ru", display_name="Russian")

INV_SQRT2 = 1.0 / math.sqrt(2.0)


class TableEmbedder:
    """Embeds each whitespace token via a fixed lookup table."""

    def __init__(self, table):
        self.table = dict(table)

    def embed(self, req: EmbeddingRequest) -> EmbeddingResponse:
        results = []
        for text in req.texts:
            tokens = tuple(text.split())
            vectors = tuple(tuple(self.table[t]) for t in tokens)
            results.append(TextEmbedding(tokens=tokens, vectors=vectors))
        return EmbeddingResponse(results=tuple(results))


def test_similarity_hand_computed_two_dimensional_case():
    emb = TableEmbedder({"a": (1.0, 0.0), "b": (0.0, 1.0), "c": (INV_SQRT2, INV_SQRT2)})
    score = similarity("a b", "a c", emb)
    expected = (1.0 + INV_SQRT2) / 2.0
    assert score.precision == pytest.approx(expected, abs=1e-12)
    assert score.recall == pytest.approx(expected, abs=1e-12)
    assert score.f1 == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.8535533905932737, abs=1e-15)


def test_similarity_identity_is_one():
    emb = MockEmbedder()
    rng = random.Random(0)
    words = ["kato", "rivu", "selo", "brum", "agna"]
    for _ in range(20):
        text = " ".join(rng.choices(words, k=rng.randint(1, 6)))
        score = similarity(text, text, emb)
        assert score.f1 == pytest.approx(1.0, abs=1e-12)


def test_similarity_of_disjoint_trigrams_is_zero():
    score = similarity("abc", "xyz", MockEmbedder())
    assert score.f1 == 0.0


def test_similarity_swaps_precision_and_recall_under_symmetry():
    emb = MockEmbedder()
    rng = random.Random(1)
    words = ["kato", "rivu", "selo", "brum", "agna", "plon"]
    for _ in range(30):
        a = " ".join(rng.choices(words, k=rng.randint(1, 5)))
        b = " ".join(rng.choices(words, k=rng.randint(1, 5)))
        ab = similarity(a, b, emb)
        ba = similarity(b, a, emb)
        assert ab.precision == pytest.approx(ba.recall, abs=1e-12)
        assert ab.recall == pytest.approx(ba.precision, abs=1e-12)
        assert ab.f1 == pytest.approx(ba.f1, abs=1e-12)


def test_similarity_ignores_word_order():
    emb = MockEmbedder()
    rng = random.Random(2)
    words = ["kato", "rivu", "selo", "brum"]
    for _ in range(20):
        tokens = rng.choices(words, k=rng.randint(2, 6))
        shuffled = tokens[:]
        rng.shuffle(shuffled)
        base = similarity(" ".join(tokens), "selo brum", emb)
        moved = similarity(" ".join(shuffled), "selo brum", emb)
        assert moved.f1 == pytest.approx(base.f1, abs=1e-12)


def test_similarity_zero_vectors_contribute_nothing():
    emb = TableEmbedder({"z": (0.0, 0.0), "a": (1.0, 0.0)})
    score = similarity("z", "a", emb)
    assert score.f1 == 0.0


def test_similarity_idf_weights_reweight_recall():
    emb = TableEmbedder({"a": (1.0, 0.0), "b": (0.0, 1.0)})
    plain = similarity("a", "a b", emb)
    weighted = similarity("a", "a b", emb, idf_weights={"a": 1.0, "b": 0.0})
    assert plain.recall == pytest.approx(0.5, abs=1e-12)
    assert weighted.recall == pytest.approx(1.0, abs=1e-12)


def test_pivot_score_is_the_harmonic_mean():
    assert pivot_score(0.8, 0.8) == pytest.approx(0.8, abs=1e-12)
    assert pivot_score(1.0, 0.5) == pytest.approx(2.0 / 3.0, abs=1e-12)
    assert pivot_score(0.0, 0.9) == 0.0
    assert pivot_score(0.3, 0.7) == pivot_score(0.7, 0.3)


def test_pivot_score_never_exceeds_the_arithmetic_mean():
    rng = random.Random(3)
    for _ in range(100):
        a, b = rng.random(), rng.random()
        assert pivot_score(a, b) <= (a + b) / 2 + 1e-12


def test_pivot_score_rejects_negatives():
    with pytest.raises(ValueError):
        pivot_score(-0.1, 0.5)


# ---------------------------------------------------------------------------
# Language identification.

ENGLISH_SEED = (
    "the quick brown fox jumps over the lazy dog and then the dog sleeps "
    "while the fox runs through the quiet green field toward the old barn"
)
SPANISH_SEED = (
    "el zorro rapido salta sobre el perro perezoso y luego el perro duerme "
    "mientras el zorro corre por el campo verde hacia el granero viejo"
)
GERMAN_SEED = (
    "der schnelle braune fuchs springt über den faulen hund und dann schläft "
    "der hund während der fuchs über das stille grüne feld zur alten scheune läuft"
)


def test_profile_self_match_has_full_confidence():
    profile = build_profile(EN, ENGLISH_SEED)
    es = build_profile(LangTag(code="es", display_name="Spanish"), SPANISH_SEED)
    result = detect_language(ENGLISH_SEED, (profile, es))
    assert result.lang.code == "en"
    assert result.confidence == pytest.approx(1.0)
    assert not result.indeterminate


def test_detection_separates_related_languages():
    profiles = (
        build_profile(EN, ENGLISH_SEED),
        build_profile(LangTag(code="es", display_name="Spanish"), SPANISH_SEED),
        build_profile(LangTag(code="de", display_name="German"), GERMAN_SEED),
    )
    assert detect_language("the fox jumps over the dog", profiles).lang.code == "en"
    assert detect_language("el perro duerme en el campo", profiles).lang.code == "es"
    assert detect_language("der hund schläft auf dem feld", profiles).lang.code == "de"


def test_single_profile_detection_is_fully_confident():
    profile = build_profile(EN, ENGLISH_SEED)
    result = detect_language("completely different text", (profile,))
    assert result.lang.code == "en"
    assert result.confidence == 1.0


def test_short_text_is_indeterminate():
    profiles = (build_profile(EN, ENGLISH_SEED),)
    result = detect_language("ab", profiles)
    assert result.indeterminate
    assert result.confidence == 0.0


def test_no_profiles_is_an_error():
    with pytest.raises(ValueError):
        detect_language("some text", ())


def test_out_of_place_distance_matches_a_hand_count():
    a = build_profile(EN, "aab")
    # ranking of "aab": grams by (-count, gram): a(2), aa(1? ) ...
    # verify against an independent recomputation instead of hand lists
    b = build_profile(RU, "bba")
    d = out_of_place_distance(a.ranking, b)
    miss = len(b.ranking)
    expected = 0
    index_b = {g: i for i, g in enumerate(b.ranking)}
    for i, gram in enumerate(a.ranking):
        expected += abs(i - index_b[gram]) if gram in index_b else miss
    assert d == expected


def test_bundled_profiles_cover_the_documented_languages():
    profiles = load_bundled_profiles()
    codes = {p.lang.code for p in profiles}
    assert {"en", "es", "de", "fr", "ru", "zh"} <= codes
    result = detect_language("the quick brown fox jumps over the lazy dog", profiles)
    assert result.lang.code == "en"


# ---------------------------------------------------------------------------
# Candidate filtering.

def fox_profiles():
    return (
        build_profile(EN, ENGLISH_SEED),
        build_profile(LangTag(code="es", display_name="Spanish"), SPANISH_SEED),
    )


def test_filter_drops_wrong_language_candidates():
    cands = [
        ("el perro duerme", "the dog sleeps"),
        ("el zorro corre", "el zorro corre rapido"),  # still Spanish
    ]
    kept = filter_candidates(cands, EN, MockEmbedder(), fox_profiles())
    assert [c.position for c in kept] == [0]


def test_filter_drops_empty_generations():
    cands = [("el perro", ""), ("el zorro", "   ")]
    assert filter_candidates(cands, EN, MockEmbedder(), fox_profiles()) == []


def test_filter_sorts_by_descending_score():
    cands = [
        ("el perro duerme", "the dog"),
        ("el zorro corre", "the quick brown fox runs through the field"),
        ("el campo verde", "the green field"),
    ]
    kept = filter_candidates(cands, EN, MockEmbedder(), fox_profiles())
    scores = [c.score for c in kept]
    assert scores == sorted(scores, reverse=True)
    for cand in kept:
        recomputed = similarity(cand.generated, cand.source, MockEmbedder()).f1
        assert cand.score == pytest.approx(recomputed, abs=1e-12)


def test_filter_breaks_ties_by_input_order():
    class ConstantEmbedder:
        def embed(self, req):
            results = tuple(
                TextEmbedding(
                    tokens=tuple(t.split()), vectors=((1.0,),) * len(t.split())
                )
                for t in req.texts
            )
            return EmbeddingResponse(results=results)

    profiles = fox_profiles()
    cands = [
        ("el perro duerme", "the dog sleeps now"),
        ("el zorro corre", "the fox runs fast"),
    ]
    kept = filter_candidates(cands, EN, ConstantEmbedder(), profiles)
    assert [c.position for c in kept] == [0, 1]
    assert kept[0].score == kept[1].score


def test_scored_candidate_is_a_plain_record():
    cand = ScoredCandidate(source="s", generated="g", score=0.5, position=2)
    assert cand.source == "s"
    assert cand.position == 2
