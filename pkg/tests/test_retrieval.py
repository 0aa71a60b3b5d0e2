"""Retrieval tests against a brute-force oracle and hand-computed values."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dasynth.kb import KnowledgeBase
from dasynth.retrieval import (
    RetrievalError,
    build_index,
    load_index,
    query,
    save_index,
    tokenize,
)
from tests.conftest import make_symbol


# --- independent oracle: dict-based tf-idf, no shared code with the index ---

def brute_force_scores(kb, keywords, include_names=True):
    docs = []
    for sym in kb.symbols:
        text = sym.description + " " + sym.name if include_names else sym.description
        docs.append((sym.name, tokenize(text)))
    n = len(docs)
    df = {}
    for _, toks in docs:
        for t in set(toks):
            df[t] = df.get(t, 0) + 1
    idf = {t: math.log((1 + n) / (1 + c)) + 1.0 for t, c in df.items()}

    def vec(tokens):
        counts = {}
        for t in tokens:
            if t in idf:
                counts[t] = counts.get(t, 0) + 1
        v = {t: c * idf[t] for t, c in counts.items()}
        norm = math.sqrt(sum(w * w for w in v.values()))
        return {t: w / norm for t, w in v.items()} if norm else {}

    qv = vec(list(keywords))
    scores = {}
    for name, toks in docs:
        dv = vec(toks)
        s = sum(qv.get(t, 0.0) * w for t, w in dv.items())
        if s > 0:
            scores[name] = s
    return scores


def brute_force_ranking(kb, keywords, k, include_names=True):
    scores = brute_force_scores(kb, keywords, include_names)
    ranked = sorted(scores.items(), key=lambda p: (-p[1], p[0]))
    return ranked[:k]


# --- tokenize ---

def test_tokenize_signature_text():
    assert tokenize("al_fixasin(AL_FIXED y)") == ["al_fixasin", "al_fixed", "y"]


def test_tokenize_empty():
    assert tokenize("") == []


def test_tokenize_punctuation_and_case():
    assert tokenize("draw Bitmap, draw!") == ["draw", "bitmap", "draw"]


@given(st.text(max_size=200))
@settings(max_examples=200, deadline=None)
def test_tokenize_only_word_characters(text):
    for tok in tokenize(text):
        assert tok
        assert all(c.isalnum() or c == "_" for c in tok)
        assert tok == tok.lower()


# --- build_index hand computations (two-doc fixture, names excluded) ---

def test_idf_hand_values(two_doc_index):
    idx = two_doc_index
    assert idx.doc_count == 2
    assert idx.idf[idx.vocabulary["bitmap"]] == pytest.approx(1.0, abs=1e-12)
    assert idx.idf[idx.vocabulary["draw"]] == pytest.approx(
        math.log(3 / 2) + 1, abs=1e-12
    )  # ~1.405465


def test_single_doc_idf_all_one():
    kb = KnowledgeBase([make_symbol("only", "draw things fast")])
    idx = build_index(kb, include_names=False)
    assert np.allclose(idx.idf, 1.0)


def test_doc_vector_hand_values(two_doc_index):
    v = two_doc_index.doc_vector(0)
    assert v["draw"] == pytest.approx(0.81480, abs=1e-5)
    assert v["bitmap"] == pytest.approx(0.57974, abs=1e-5)


def test_doc_vectors_unit_norm(sample_index):
    idx = sample_index
    for d in range(idx.doc_count):
        lo, hi = idx.doc_indptr[d], idx.doc_indptr[d + 1]
        if hi > lo:
            assert np.linalg.norm(idx.doc_weights[lo:hi]) == pytest.approx(
                1.0, abs=1e-9
            )


def test_empty_description_reported():
    kb = KnowledgeBase(
        [make_symbol("a", "real words here"), make_symbol("b", "???!!!")]
    )
    idx = build_index(kb, include_names=False)
    assert idx.empty_doc_names == ("b",)
    assert query(idx, ["words"], 5).names() == ("a",)


# --- query ---

def test_query_hand_value(two_doc_index):
    result = query(two_doc_index, ["draw"], 2)
    assert result.names() == ("d1",)  # d2 scores 0 and is excluded
    assert result.ranked[0][1] == pytest.approx(0.8148, abs=1e-4)


def test_query_unknown_terms_empty(two_doc_index):
    assert query(two_doc_index, ["zzz_unknown"], 3).ranked == ()


def test_query_k_validates(two_doc_index):
    with pytest.raises(RetrievalError):
        query(two_doc_index, ["draw"], 0)


def test_self_retrieval_top1(ten_doc_kb, ten_doc_index):
    for sym in ten_doc_kb.symbols:
        result = query(ten_doc_index, tokenize(sym.description), 1)
        assert result.names() == (sym.name,)


def test_self_retrieval_top1_sample(sample_kb, sample_index):
    for sym in sample_kb.symbols:
        result = query(sample_index, tokenize(sym.description), 1)
        assert result.names() == (sym.name,)


def test_name_query_retrieves_symbol(sample_index):
    assert query(sample_index, ["al_fixasin"], 1).names() == ("al_fixasin",)


def test_oracle_equivalence_sample(sample_kb, sample_index):
    queries = [
        ["bitmap"],
        ["fixed", "point"],
        ["draws", "an", "unscaled", "bitmap"],
        ["keyboard", "driver", "events"],
        ["seconds"],
        ["al_fixasin", "inverse"],
        ["color", "color", "surface"],
    ]
    for kws in queries:
        expected = brute_force_ranking(sample_kb, kws, 10)
        got = query(sample_index, kws, 10).ranked
        assert [n for n, _ in got] == [n for n, _ in expected]
        for (_, s_got), (_, s_exp) in zip(got, expected):
            assert abs(s_got - s_exp) <= 1e-9


def test_scores_bounded_and_sorted(sample_index):
    result = query(sample_index, ["fixed", "point", "value"], 10)
    scores = [s for _, s in result.ranked]
    assert all(0.0 <= s <= 1.0 for s in scores)
    assert scores == sorted(scores, reverse=True)
    names = [n for n, _ in result.ranked]
    assert len(names) == len(set(names))


@given(st.permutations(["fixed", "point", "inverse", "sine", "bitmap"]))
@settings(max_examples=30, deadline=None)
def test_keyword_order_invariance(sample_index_holder, keywords):
    base = query(sample_index_holder, ["fixed", "point", "inverse", "sine", "bitmap"], 10)
    permuted = query(sample_index_holder, list(keywords), 10)
    assert permuted.names() == base.names()
    for (_, a), (_, b) in zip(permuted.ranked, base.ranked):
        assert abs(a - b) <= 1e-12


@pytest.fixture(scope="module")
def sample_index_holder(sample_index):
    # hypothesis forbids function-scoped fixtures; re-expose at module scope
    return sample_index


def test_index_save_load_round_trip(sample_kb, sample_index, tmp_path):
    path = tmp_path / "index.json"
    save_index(sample_index, path)
    loaded = load_index(path)
    assert loaded.symbol_names == sample_index.symbol_names
    assert np.array_equal(loaded.doc_weights, sample_index.doc_weights)
    got = query(loaded, ["bitmap", "disk"], 10).ranked
    want = query(sample_index, ["bitmap", "disk"], 10).ranked
    assert got == want
