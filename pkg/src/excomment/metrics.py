"""BLEU (corpus and smoothed sentence level) and METEOR for generated comments.

METEOR here has two matching stages, exact and stemmed, with no synonym
stage.  The stemmer strips one English suffix:

* words of three characters or fewer are left alone
* ``-ies`` -> ``-y`` and ``-sses`` -> ``-ss``
* otherwise the first of ``-ingly -edly -ing -ed -ly`` that leaves a stem of
  at least three characters is removed
* ``-es`` is removed after ``ch sh x z``; otherwise a final ``-s`` (not
  ``-ss``) is removed
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Sequence


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class EvalRecord:
    id: int
    hypothesis: tuple[str, ...]
    reference: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.reference:
            raise MetricError(f"record {self.id}: reference must be non-empty")


@dataclass
class ScoreReport:
    corpus_bleu: float
    sentence_bleu_mean: float
    meteor_mean: float
    precisions: list[float]
    brevity_penalty: float
    hypothesis_length: int
    reference_length: int
    num_records: int
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        rows = [
            ("records", f"{self.num_records}"),
            ("corpus BLEU (%)", f"{self.corpus_bleu:.2f}"),
            ("sentence BLEU mean (%)", f"{self.sentence_bleu_mean:.2f}"),
            ("METEOR mean (%)", f"{self.meteor_mean:.2f}"),
        ]
        rows += [(f"p{n}", f"{p:.4f}") for n, p in enumerate(self.precisions, 1)]
        rows += [
            ("brevity penalty", f"{self.brevity_penalty:.4f}"),
            ("hyp/ref length", f"{self.hypothesis_length}/{self.reference_length}"),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _clipped_counts(hyp: Sequence[str], ref: Sequence[str], n: int) -> tuple[int, int]:
    h = ngrams(hyp, n)
    r = ngrams(ref, n)
    matched = sum(min(c, r[g]) for g, c in h.items())
    return matched, max(len(hyp) - n + 1, 0)


def brevity_penalty(hyp_len: int, ref_len: int) -> float:
    if hyp_len == 0:
        return 0.0
    if hyp_len > ref_len:
        return 1.0
    return math.exp(1.0 - ref_len / hyp_len)


def corpus_bleu_stats(records: Sequence[EvalRecord], max_n: int = 4) -> tuple[float, list[float], float]:
    """Return (BLEU in [0, 1], per-order precisions, brevity penalty).

    Orders for which the hypotheses contain no n-grams at all are left out of
    the geometric mean.  Any used order with zero matches makes BLEU 0.
    """
    if not records:
        raise MetricError("corpus_bleu needs at least one record")
    matched = [0] * max_n
    total = [0] * max_n
    hyp_len = ref_len = 0
    for rec in records:
        hyp_len += len(rec.hypothesis)
        ref_len += len(rec.reference)
        for n in range(1, max_n + 1):
            m, t = _clipped_counts(rec.hypothesis, rec.reference, n)
            matched[n - 1] += m
            total[n - 1] += t
    precisions = [m / t if t else 0.0 for m, t in zip(matched, total)]
    bp = brevity_penalty(hyp_len, ref_len)
    used = [p for p, t in zip(precisions, total) if t]
    if not used or min(used) == 0.0:
        return 0.0, precisions, bp
    return bp * math.exp(sum(math.log(p) for p in used) / len(used)), precisions, bp


def corpus_bleu(records: Sequence[EvalRecord], max_n: int = 4) -> float:
    return 100.0 * corpus_bleu_stats(records, max_n)[0]


def sentence_bleu(record: EvalRecord, max_n: int = 4) -> float:
    """Single-sentence BLEU (percent); orders n >= 2 use add-one smoothing."""
    hyp, ref = record.hypothesis, record.reference
    logs = []
    for n in range(1, max_n + 1):
        m, t = _clipped_counts(hyp, ref, n)
        if t == 0:
            continue
        if n == 1:
            if m == 0:
                return 0.0
            logs.append(math.log(m / t))
        else:
            logs.append(math.log((m + 1) / (t + 1)))
    if not logs:
        return 0.0
    return 100.0 * brevity_penalty(len(hyp), len(ref)) * math.exp(sum(logs) / len(logs))


# METEOR ----------------------------------------------------------------------


def stem(word: str) -> str:
    if len(word) <= 3:
        return word
    if word.endswith("ies") and len(word) - 3 >= 2:
        return word[:-3] + "y"
    if word.endswith("sses"):
        return word[:-2]
    for suffix in ("ingly", "edly", "ing", "ed", "ly"):
        if word.endswith(suffix) and len(word) - len(suffix) >= 3:
            return word[: -len(suffix)]
    if word.endswith("es") and word[:-2].endswith(("ch", "sh", "x", "z")) and len(word) - 2 >= 3:
        return word[:-2]
    if word.endswith("s") and not word.endswith("ss") and len(word) - 1 >= 3:
        return word[:-1]
    return word


@dataclass(frozen=True)
class Alignment:
    pairs: tuple[tuple[int, int], ...]  # (hyp index, ref index), ascending hyp index
    exact: int
    chunks: int

    @property
    def matches(self) -> int:
        return len(self.pairs)


def align(hyp: Sequence[str], ref: Sequence[str]) -> Alignment:
    """One-to-one unigram alignment.

    Maximizes exact matches, then exact+stem matches, then minimizes the
    number of chunks.  Among equally good alignments, each hypothesis word
    takes the left-most available reference position.
    """
    hyp, ref = tuple(hyp), tuple(ref)
    hyp_stems = tuple(stem(w) for w in hyp)
    ref_stems = tuple(stem(w) for w in ref)
    options = []
    for i, w in enumerate(hyp):
        opts = []
        for j, r in enumerate(ref):
            if w == r:
                opts.append((j, 1))
            elif hyp_stems[i] == ref_stems[j]:
                opts.append((j, 0))
        options.append(tuple(opts))

    @lru_cache(maxsize=None)
    def best(i: int, used: int, prev: int) -> tuple[tuple[int, int, int], tuple[int, ...]]:
        # returns ((exact, matches, -chunks), choices) for hyp[i:]; prev = ref index matched by hyp[i-1] or -1
        if i == len(hyp):
            return (0, 0, 0), ()
        top = None
        for j, is_exact in options[i]:
            if used >> j & 1:
                continue
            (e, m, negc), rest = best(i + 1, used | (1 << j), j)
            new_chunk = 0 if (prev >= 0 and j == prev + 1) else 1
            cand = ((e + is_exact, m + 1, negc - new_chunk), (j, *rest))
            if top is None or cand[0] > top[0]:
                top = cand
        skip_val, skip_rest = best(i + 1, used, -1)
        cand = (skip_val, (-1, *skip_rest))
        if top is None or cand[0] > top[0]:
            top = cand
        return top

    (exact, _, negc), choice = best(0, 0, -1)
    pairs = tuple((i, j) for i, j in enumerate(choice) if j >= 0)
    return Alignment(pairs, exact, -negc)


def meteor(record: EvalRecord) -> float:
    """METEOR in [0, 1]: F_mean = 10PR / (R + 9P) times (1 - 0.5 (chunks / m)^3)."""
    hyp, ref = record.hypothesis, record.reference
    if not hyp:
        return 0.0
    a = align(hyp, ref)
    m = a.matches
    if m == 0:
        return 0.0
    p = m / len(hyp)
    r = m / len(ref)
    f_mean = 10.0 * p * r / (r + 9.0 * p)
    penalty = 0.5 * (a.chunks / m) ** 3
    return f_mean * (1.0 - penalty)


def score_records(records: Sequence[EvalRecord], max_n: int = 4) -> ScoreReport:
    records = sorted(records, key=lambda r: r.id)
    bleu, precisions, bp = corpus_bleu_stats(records, max_n)
    return ScoreReport(
        corpus_bleu=100.0 * bleu,
        sentence_bleu_mean=sum(sentence_bleu(r, max_n) for r in records) / len(records),
        meteor_mean=100.0 * sum(meteor(r) for r in records) / len(records),
        precisions=precisions,
        brevity_penalty=bp,
        hypothesis_length=sum(len(r.hypothesis) for r in records),
        reference_length=sum(len(r.reference) for r in records),
        num_records=len(records),
    )
