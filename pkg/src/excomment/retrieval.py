"""BM25 code search over the training split, used to pick an exemplar comment."""

from __future__ import annotations

import heapq
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import ProcessedPair

K1 = 1.2
B = 0.75


class RetrievalError(ValueError):
    pass


@dataclass(frozen=True)
class Posting:
    doc_id: int
    term_freq: int


@dataclass
class InvertedIndex:
    postings: dict[str, list[Posting]]
    doc_length: dict[int, int]
    doc_count: int
    avg_doc_length: float

    def df(self, term: str) -> int:
        return len(self.postings.get(term, ()))

    def idf(self, term: str) -> float:
        df = self.df(term)
        return math.log(1.0 + (self.doc_count - df + 0.5) / (df + 0.5))

    def __eq__(self, other) -> bool:
        if not isinstance(other, InvertedIndex):
            return NotImplemented
        return (
            self.postings == other.postings
            and self.doc_length == other.doc_length
            and self.doc_count == other.doc_count
            and self.avg_doc_length == other.avg_doc_length
        )

    def save(self, path: str | Path) -> None:
        """Flat text format, tab separated.

        line 1:  ``# bm25 index v1``
        line 2:  ``N<TAB>avg_doc_length`` (avg as a round-trip float repr)
        then one ``D<TAB>doc_id<TAB>length`` line per document (ascending id)
        then one ``T<TAB>term<TAB>df<TAB>doc:tf doc:tf ...`` line per term (sorted).
        """
        lines = ["# bm25 index v1", f"{self.doc_count}\t{self.avg_doc_length!r}"]
        lines += [f"D\t{d}\t{n}" for d, n in sorted(self.doc_length.items())]
        for term in sorted(self.postings):
            plist = self.postings[term]
            body = " ".join(f"{p.doc_id}:{p.term_freq}" for p in plist)
            lines.append(f"T\t{term}\t{len(plist)}\t{body}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "InvertedIndex":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or not lines[0].startswith("# bm25 index"):
            raise RetrievalError(f"{path}: not a bm25 index file")
        n, avg = lines[1].split("\t")
        doc_length: dict[int, int] = {}
        postings: dict[str, list[Posting]] = {}
        for line in lines[2:]:
            kind, *fields = line.split("\t")
            if kind == "D":
                doc_length[int(fields[0])] = int(fields[1])
            elif kind == "T":
                term, df, body = fields
                plist = [Posting(int(d), int(tf)) for d, tf in (x.split(":") for x in body.split(" "))]
                if len(plist) != int(df):
                    raise RetrievalError(f"{path}: df mismatch for term {term!r}")
                postings[term] = plist
            else:
                raise RetrievalError(f"{path}: unknown record type {kind!r}")
        return cls(postings, doc_length, int(n), float(avg))


@dataclass(frozen=True)
class RetrievalResult:
    doc_id: int
    score: float


@dataclass(frozen=True)
class ExemplarTriple:
    input_code: tuple[str, ...]
    similar_code: tuple[str, ...]
    exemplar_comment: tuple[str, ...]
    retrieval_score: float
    similar_id: int | None = None

    @property
    def is_fallback(self) -> bool:
        return not self.exemplar_comment


def index_build(training_pairs: Iterable[ProcessedPair]) -> InvertedIndex:
    postings: dict[str, list[Posting]] = {}
    doc_length: dict[int, int] = {}
    for pair in sorted(training_pairs, key=lambda p: p.id):
        if pair.id in doc_length:
            raise RetrievalError(f"duplicate document id {pair.id}")
        doc_length[pair.id] = len(pair.code_tokens)
        for term, tf in Counter(pair.code_tokens).items():
            postings.setdefault(term, []).append(Posting(pair.id, tf))
    if not doc_length:
        raise RetrievalError("cannot build an index over an empty corpus")
    n = len(doc_length)
    return InvertedIndex(postings, doc_length, n, sum(doc_length.values()) / n)


def _term_weight(idf: float, tf: int, doc_len: int, avg_len: float, k1: float, b: float) -> float:
    return idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * doc_len / avg_len))


def bm25_score(
    index: InvertedIndex,
    query_tokens: Sequence[str],
    doc_id: int,
    k1: float = K1,
    b: float = B,
) -> float:
    if doc_id not in index.doc_length:
        raise RetrievalError(f"unknown document id {doc_id}")
    doc_len = index.doc_length[doc_id]
    score = 0.0
    for term in query_tokens:
        tf = next((p.term_freq for p in index.postings.get(term, ()) if p.doc_id == doc_id), 0)
        if tf:
            score += _term_weight(index.idf(term), tf, doc_len, index.avg_doc_length, k1, b)
    return score


def retrieve_top_k(
    index: InvertedIndex,
    query_tokens: Sequence[str],
    k: int = 1,
    exclude_id: int | None = None,
    k1: float = K1,
    b: float = B,
) -> list[RetrievalResult]:
    """Top-k documents by (score desc, doc_id asc); zero-score documents are dropped."""
    if k < 1:
        raise RetrievalError(f"k must be >= 1, got {k}")
    # Accumulate per term in query order; a repeated query term counts again.
    scores: dict[int, float] = {}
    idf_cache: dict[str, float] = {}
    for term in query_tokens:
        plist = index.postings.get(term)
        if not plist:
            continue
        idf = idf_cache.get(term)
        if idf is None:
            idf = idf_cache[term] = index.idf(term)
        for p in plist:
            w = _term_weight(idf, p.term_freq, index.doc_length[p.doc_id], index.avg_doc_length, k1, b)
            scores[p.doc_id] = scores.get(p.doc_id, 0.0) + w
    if exclude_id is not None:
        scores.pop(exclude_id, None)
    best = heapq.nsmallest(k, ((-s, d) for d, s in scores.items() if s > 0.0))
    return [RetrievalResult(d, -neg) for neg, d in best]


FALLBACK_SCORE = 0.0


def make_exemplar(
    pair: ProcessedPair,
    index: InvertedIndex,
    training_pairs: Mapping[int, ProcessedPair] | Sequence[ProcessedPair],
    k1: float = K1,
    b: float = B,
) -> ExemplarTriple:
    """Retrieve the first-ranked similar training function and take its comment.

    A training pair never retrieves itself (excluded by id).  When nothing
    overlaps, the exemplar fields are empty and the score is 0.
    """
    by_id = training_pairs if isinstance(training_pairs, Mapping) else {p.id: p for p in training_pairs}
    exclude = pair.id if pair.id in index.doc_length else None
    hits = retrieve_top_k(index, pair.code_tokens, 1, exclude_id=exclude, k1=k1, b=b)
    if not hits:
        return ExemplarTriple(pair.code_tokens, (), (), FALLBACK_SCORE, None)
    hit = hits[0]
    similar = by_id[hit.doc_id]
    return ExemplarTriple(pair.code_tokens, similar.code_tokens, similar.comment_tokens, hit.score, hit.doc_id)


def exemplar_record(pair_id: int, triple: ExemplarTriple) -> dict:
    return {
        "id": pair_id,
        "similar_id": triple.similar_id,
        "score": triple.retrieval_score,
        "exemplar_comment_tokens": list(triple.exemplar_comment),
    }
