"""Ingest raw (code, doc comment) samples into tokenized, deduplicated, split pairs."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<s>", "</s>", "<unk>")

MAX_CODE_LEN = 200
MAX_COMMENT_LEN = 30


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class RawSample:
    code_text: str
    comment_text: str


@dataclass(frozen=True)
class ProcessedPair:
    id: int
    code_tokens: tuple[str, ...]
    comment_tokens: tuple[str, ...]

    def to_json(self) -> dict:
        return {"id": self.id, "code_tokens": list(self.code_tokens), "comment_tokens": list(self.comment_tokens)}

    @classmethod
    def from_json(cls, obj: dict) -> "ProcessedPair":
        return cls(int(obj["id"]), tuple(obj["code_tokens"]), tuple(obj["comment_tokens"]))


@dataclass
class DatasetSplit:
    train: list[ProcessedPair]
    valid: list[ProcessedPair]
    test: list[ProcessedPair]

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.valid), len(self.test)


# text normalization ----------------------------------------------------------

_DOC_OPEN = re.compile(r"^\s*/\*\*+")
_DOC_CLOSE = re.compile(r"\*+/\s*$")
_LINE_STAR = re.compile(r"^\s*\*+ ?", re.MULTILINE)
_INLINE_TAG = re.compile(r"\{@\w+\s*([^}]*)\}")
_HTML_TAG = re.compile(r"</?[a-zA-Z][^>]*>")
_BLOCK_TAG = re.compile(r"^\s*@\w+.*", re.MULTILINE | re.DOTALL)


def strip_doc_markup(comment_text: str) -> str:
    """Remove Javadoc delimiters, leading stars, block tags and HTML tags.

    ``{@code foo}`` and ``{@link Foo}`` keep their argument text.
    """
    text = _DOC_OPEN.sub("", comment_text)
    text = _DOC_CLOSE.sub("", text)
    text = _LINE_STAR.sub("", text)
    text = _BLOCK_TAG.sub("", text)
    text = _INLINE_TAG.sub(r"\1", text)
    text = _HTML_TAG.sub("", text)
    return text.strip()


_SENTENCE_END = re.compile(r"[.!?](?=\s|$)")


def extract_first_sentence(comment_text: str) -> str:
    text = comment_text.strip()
    if not text:
        return ""
    m = _SENTENCE_END.search(text)
    if m:
        return text[: m.end()].strip()
    return text.split("\n", 1)[0].strip()


_CODE_TOKEN = re.compile(r"[A-Za-z0-9_]+|[^\sA-Za-z0-9_]")
_CAMEL_PART = re.compile(r"[A-Z]+(?=[A-Z][a-z])|[A-Z]?[a-z]+|[A-Z]+|[0-9]+")
_COMMENT_TOKEN = re.compile(r"[A-Za-z0-9_]+|[^\sA-Za-z0-9_]")


def split_identifier(word: str) -> list[str]:
    """``HTTPServerError_v2`` -> ``['http', 'server', 'error', 'v', '2']``."""
    return [p.lower() for chunk in word.split("_") for p in _CAMEL_PART.findall(chunk)]


def tokenize_code(code_text: str) -> list[str]:
    tokens: list[str] = []
    for tok in _CODE_TOKEN.findall(code_text):
        if tok[0].isalnum() or tok[0] == "_":
            tokens.extend(split_identifier(tok))
        else:
            tokens.append(tok.lower())
    return tokens


def tokenize_comment(text: str) -> list[str]:
    return [t.lower() for t in _COMMENT_TOKEN.findall(text)]


def process_sample(
    sample_id: int,
    sample: RawSample,
    max_code_len: int = MAX_CODE_LEN,
    max_comment_len: int = MAX_COMMENT_LEN,
) -> ProcessedPair | None:
    """Tokenize one raw sample, or return None when either side ends up empty."""
    sentence = extract_first_sentence(strip_doc_markup(sample.comment_text))
    comment = tokenize_comment(sentence)[:max_comment_len]
    code = tokenize_code(sample.code_text)[:max_code_len]
    if not comment or not code:
        return None
    return ProcessedPair(sample_id, tuple(code), tuple(comment))


def deduplicate(pairs: Iterable[ProcessedPair]) -> list[ProcessedPair]:
    seen: set[tuple[tuple[str, ...], tuple[str, ...]]] = set()
    out = []
    for p in pairs:
        key = (p.code_tokens, p.comment_tokens)
        if key not in seen:
            seen.add(key)
            out.append(p)
    return out


def split_sizes(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    n_train = int(np.floor(n * ratios[0] + 0.5))
    n_valid = int(np.floor(n * ratios[1] + 0.5))
    n_valid = min(n_valid, n - n_train)
    return n_train, n_valid, n - n_train - n_valid


def split_dataset(
    pairs: Sequence[ProcessedPair],
    ratios: Sequence[float] = (0.9, 0.05, 0.05),
    seed: int = 0,
) -> DatasetSplit:
    """Shuffle deterministically under ``seed``, then cut contiguous train/valid/test blocks.

    Sizes round half up for train and valid; test takes the remainder.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise CorpusError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    if len(pairs) < 3:
        raise CorpusError(f"corpus too small to split: {len(pairs)} pairs (need at least 3)")
    order = np.random.default_rng(seed).permutation(len(pairs))
    shuffled = [pairs[i] for i in order]
    n_train, n_valid, _ = split_sizes(len(pairs), ratios)
    return DatasetSplit(
        train=shuffled[:n_train],
        valid=shuffled[n_train : n_train + n_valid],
        test=shuffled[n_train + n_valid :],
    )


# vocabulary ------------------------------------------------------------------


@dataclass
class Vocabulary:
    itos: list[str]
    stoi: dict[str, int] = field(init=False)

    def __post_init__(self) -> None:
        if tuple(self.itos[:4]) != RESERVED:
            raise CorpusError("vocabulary must start with the reserved tokens")
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise CorpusError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int], strip_special: bool = True) -> list[str]:
        out = []
        for i in ids:
            if strip_special and i in (PAD, BOS, EOS):
                continue
            out.append(self.itos[i])
        return out

    def save(self, path: str | Path) -> None:
        """One token per line after a header; the token on line k (0-based, header excluded) has id k + 4."""
        header = f"# vocabulary size={len(self)}; token on line k below has id k+4; ids 0-3 are {' '.join(RESERVED)}"
        Path(path).write_text("\n".join([header, *self.itos[4:]]) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text().split("\n")
        if not lines or not lines[0].startswith("#"):
            raise CorpusError(f"{path}: missing vocabulary header line")
        body = lines[1:]
        if body and body[-1] == "":
            body = body[:-1]
        return cls(list(RESERVED) + body)


def build_vocab(sequences: Iterable[Sequence[str]], max_size: int, min_count: int = 1) -> Vocabulary:
    """Rank tokens by (count desc, token asc) into ids 4.. up to ``max_size`` entries in total."""
    if max_size <= len(RESERVED):
        raise CorpusError(f"max_size must exceed {len(RESERVED)}, got {max_size}")
    counts = Counter(tok for seq in sequences for tok in seq)
    for tok in RESERVED:
        counts.pop(tok, None)
    ranked = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocabulary(list(RESERVED) + ranked[: max_size - len(RESERVED)])


# JSON-lines I/O --------------------------------------------------------------


def read_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    yield json.loads(line)
                except json.JSONDecodeError as e:
                    raise CorpusError(f"{path}:{lineno}: invalid JSON ({e.msg})") from None


def write_jsonl(path: str | Path, rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def read_raw_samples(path: str | Path) -> list[RawSample]:
    samples = []
    for i, obj in enumerate(read_jsonl(path)):
        if not isinstance(obj.get("code"), str) or not isinstance(obj.get("comment"), str):
            raise CorpusError(f"{path}: record {i} lacks string fields 'code' and 'comment'")
        samples.append(RawSample(obj["code"], obj["comment"]))
    return samples


def read_pairs(path: str | Path) -> list[ProcessedPair]:
    return [ProcessedPair.from_json(obj) for obj in read_jsonl(path)]


def write_pairs(path: str | Path, pairs: Iterable[ProcessedPair]) -> None:
    write_jsonl(path, (p.to_json() for p in pairs))


def ingest(
    samples: Sequence[RawSample],
    max_code_len: int = MAX_CODE_LEN,
    max_comment_len: int = MAX_COMMENT_LEN,
) -> list[ProcessedPair]:
    """Process and deduplicate; ids are the samples' positions in the input."""
    processed = (process_sample(i, s, max_code_len, max_comment_len) for i, s in enumerate(samples))
    return deduplicate(p for p in processed if p is not None)
