"""TF-IDF retrieval over symbol documentation.

Weighting: weight(t, d) = tf(t, d) * idf(t) with raw term counts and the
smoothed idf(t) = ln((1+N)/(1+df(t))) + 1, each document vector L2
normalized. Queries use the same weighting over known terms and score by
dot product (cosine similarity); zero-score documents are never returned.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import DasynthError
from .kb import KnowledgeBase

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"\w+")


class RetrievalError(DasynthError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase and split on any character that is not a letter, digit, or underscore."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class RetrievalResult:
    """Ranked (symbol name, score) pairs; scores non-increasing, ties by name."""

    ranked: tuple[tuple[str, float], ...] = ()

    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.ranked)

    def top_scores(self, n: int) -> tuple[float, ...]:
        scores = [score for _, score in self.ranked[:n]]
        scores += [0.0] * (n - len(scores))
        return tuple(scores)


@dataclass
class TfIdfIndex:
    vocabulary: dict[str, int]
    document_frequency: np.ndarray  # (V,) int64
    idf: np.ndarray  # (V,) float64
    doc_count: int
    symbol_names: list[str]
    # doc-major CSR of normalized weights
    doc_indptr: np.ndarray
    doc_tids: np.ndarray
    doc_weights: np.ndarray
    # term-major postings for query scoring
    post_indptr: np.ndarray
    post_doc_ids: np.ndarray
    post_weights: np.ndarray
    terms: list[str] = field(default_factory=list)  # term by id
    empty_doc_names: tuple[str, ...] = ()
    include_names: bool = True

    def doc_vector(self, doc: int) -> dict[str, float]:
        lo, hi = self.doc_indptr[doc], self.doc_indptr[doc + 1]
        return {
            self.terms[t]: w
            for t, w in zip(self.doc_tids[lo:hi], self.doc_weights[lo:hi])
        }

    def idf_of(self, term: str) -> float:
        tid = self.vocabulary.get(term)
        if tid is None:
            # df = 0 smoothing, consistent with the build formula
            return math.log((1 + self.doc_count) / 1.0) + 1.0
        return float(self.idf[tid])


def build_index(kb: KnowledgeBase, include_names: bool = True) -> TfIdfIndex:
    """Index every symbol's description (name appended unless disabled).

    Symbols whose text tokenizes to nothing get an empty vector and can
    never be retrieved; they are counted and reported via empty_doc_names.
    """
    names = [s.name for s in kb.symbols]
    doc_tokens = []
    for sym in kb.symbols:
        text = sym.description + " " + sym.name if include_names else sym.description
        doc_tokens.append(tokenize(text))

    terms = sorted({t for toks in doc_tokens for t in toks})
    vocabulary = {t: i for i, t in enumerate(terms)}
    n_docs = len(doc_tokens)
    df = np.zeros(len(terms), dtype=np.int64)
    for toks in doc_tokens:
        for tid in {vocabulary[t] for t in toks}:
            df[tid] += 1
    idf = np.log((1.0 + n_docs) / (1.0 + df)) + 1.0

    doc_indptr = [0]
    doc_tids: list[int] = []
    doc_weights: list[float] = []
    empty_docs = []
    for name, toks in zip(names, doc_tokens):
        counts: dict[int, int] = {}
        for t in toks:
            tid = vocabulary[t]
            counts[tid] = counts.get(tid, 0) + 1
        if not counts:
            empty_docs.append(name)
            doc_indptr.append(len(doc_tids))
            continue
        tids = sorted(counts)
        weights = np.array([counts[t] * idf[t] for t in tids], dtype=np.float64)
        weights /= np.linalg.norm(weights)
        doc_tids.extend(tids)
        doc_weights.extend(weights.tolist())
        doc_indptr.append(len(doc_tids))
    if empty_docs:
        logger.warning(
            "index: %d symbol(s) tokenize to nothing and are unretrievable: %s",
            len(empty_docs),
            ", ".join(empty_docs),
        )

    doc_indptr_arr = np.array(doc_indptr, dtype=np.int64)
    doc_tids_arr = np.array(doc_tids, dtype=np.int64)
    doc_weights_arr = np.array(doc_weights, dtype=np.float64)

    # invert to term-major postings, docs ascending within each term
    order = np.lexsort(
        (
            np.repeat(np.arange(n_docs), np.diff(doc_indptr_arr)),
            doc_tids_arr,
        )
    ) if len(doc_tids_arr) else np.array([], dtype=np.int64)
    post_doc_ids = np.repeat(np.arange(n_docs), np.diff(doc_indptr_arr))[order]
    post_tids = doc_tids_arr[order]
    post_weights = doc_weights_arr[order]
    post_indptr = np.zeros(len(terms) + 1, dtype=np.int64)
    np.add.at(post_indptr, post_tids + 1, 1)
    post_indptr = np.cumsum(post_indptr)

    return TfIdfIndex(
        vocabulary=vocabulary,
        document_frequency=df,
        idf=idf,
        doc_count=n_docs,
        symbol_names=list(names),
        doc_indptr=doc_indptr_arr,
        doc_tids=doc_tids_arr,
        doc_weights=doc_weights_arr,
        post_indptr=post_indptr,
        post_doc_ids=post_doc_ids,
        post_weights=post_weights,
        terms=terms,
        empty_doc_names=tuple(empty_docs),
        include_names=include_names,
    )


def query(index: TfIdfIndex, keywords: list[str] | tuple[str, ...], k: int) -> RetrievalResult:
    """Top-k cosine matches for the keyword terms; unknown terms dropped."""
    if k < 1:
        raise RetrievalError(f"k must be >= 1, got {k}")
    counts: dict[int, int] = {}
    for kw in keywords:
        tid = index.vocabulary.get(kw)
        if tid is not None:
            counts[tid] = counts.get(tid, 0) + 1
    if not counts:
        return RetrievalResult()
    q_tids = np.array(sorted(counts), dtype=np.int64)
    q_weights = np.array(
        [counts[t] * index.idf[t] for t in q_tids], dtype=np.float64
    )
    q_weights /= np.linalg.norm(q_weights)

    scores = _kernels.score_docs(
        index.post_indptr,
        index.post_doc_ids,
        index.post_weights,
        q_tids,
        q_weights,
        index.doc_count,
    )
    hits = [
        (index.symbol_names[d], min(1.0, float(scores[d])))
        for d in np.nonzero(scores > 0.0)[0]
    ]
    hits.sort(key=lambda pair: (-pair[1], pair[0]))
    return RetrievalResult(ranked=tuple(hits[:k]))


def save_index(index: TfIdfIndex, path: str | Path) -> None:
    payload = {
        "format": "dasynth-tfidf",
        "version": 1,
        "include_names": index.include_names,
        "doc_count": index.doc_count,
        "terms": index.terms,
        "document_frequency": index.document_frequency.tolist(),
        "symbol_names": index.symbol_names,
        "empty_doc_names": list(index.empty_doc_names),
        "doc_indptr": index.doc_indptr.tolist(),
        "doc_tids": index.doc_tids.tolist(),
        "doc_weights": index.doc_weights.tolist(),
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_index(path: str | Path) -> TfIdfIndex:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise RetrievalError(f"cannot load index {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != "dasynth-tfidf":
        raise RetrievalError(f"{path} is not a dasynth index file")
    if payload.get("version") != 1:
        raise RetrievalError(f"unsupported index version {payload.get('version')!r}")

    terms = payload["terms"]
    df = np.array(payload["document_frequency"], dtype=np.int64)
    n_docs = payload["doc_count"]
    doc_indptr = np.array(payload["doc_indptr"], dtype=np.int64)
    doc_tids = np.array(payload["doc_tids"], dtype=np.int64)
    doc_weights = np.array(payload["doc_weights"], dtype=np.float64)

    order = np.lexsort(
        (np.repeat(np.arange(n_docs), np.diff(doc_indptr)), doc_tids)
    ) if len(doc_tids) else np.array([], dtype=np.int64)
    post_doc_ids = np.repeat(np.arange(n_docs), np.diff(doc_indptr))[order]
    post_tids = doc_tids[order]
    post_weights = doc_weights[order]
    post_indptr = np.zeros(len(terms) + 1, dtype=np.int64)
    np.add.at(post_indptr, post_tids + 1, 1)
    post_indptr = np.cumsum(post_indptr)

    return TfIdfIndex(
        vocabulary={t: i for i, t in enumerate(terms)},
        document_frequency=df,
        idf=np.log((1.0 + n_docs) / (1.0 + df)) + 1.0,
        doc_count=n_docs,
        symbol_names=list(payload["symbol_names"]),
        doc_indptr=doc_indptr,
        doc_tids=doc_tids,
        doc_weights=doc_weights,
        post_indptr=post_indptr,
        post_doc_ids=post_doc_ids,
        post_weights=post_weights,
        terms=list(terms),
        empty_doc_names=tuple(payload["empty_doc_names"]),
        include_names=payload["include_names"],
    )
