import pytest
from hypothesis import given
from hypothesis import strategies as st

from excomment import corpus
from excomment.corpus import (
    BOS,
    EOS,
    PAD,
    UNK,
    CorpusError,
    ProcessedPair,
    RawSample,
    build_vocab,
    deduplicate,
    extract_first_sentence,
    split_dataset,
    tokenize_code,
    tokenize_comment,
)


@pytest.mark.parametrize(
    "text, expected",
    [
        ("Returns the count. Use with care.", "Returns the count."),
        ("", ""),
        ("computes a hash\nover all fields", "computes a hash"),
        ("Is it done? Maybe", "Is it done?"),
        ("Version 1.2 of the API", "Version 1.2 of the API"),
    ],
)
def test_extract_first_sentence(text, expected):
    assert extract_first_sentence(text) == expected


@pytest.mark.parametrize(
    "code, expected",
    [
        ("getItemCount()", ["get", "item", "count", "(", ")"]),
        ("a_b = 1", ["a", "b", "=", "1"]),
        ("x", ["x"]),
        ("HTTPServer.parseURL", ["http", "server", ".", "parse", "url"]),
        ("==", ["=", "="]),
    ],
)
def test_tokenize_code(code, expected):
    assert tokenize_code(code) == expected


@pytest.mark.parametrize(
    "text, expected",
    [
        ("Returns the count.", ["returns", "the", "count", "."]),
        ("A", ["a"]),
        ("foo-bar", ["foo", "-", "bar"]),
        ("getItemCount", ["getitemcount"]),
    ],
)
def test_tokenize_comment(text, expected):
    assert tokenize_comment(text) == expected


@given(st.text())
def test_code_tokens_nonempty_and_lowercase(text):
    for tok in tokenize_code(text):
        assert tok
        assert tok == tok.lower()


def test_strip_doc_markup():
    raw = "/**\n * Returns the {@code size} of <b>this</b> list.\n * More text.\n * @return the size\n */"
    assert corpus.strip_doc_markup(raw) == "Returns the size of this list.\nMore text."


def test_process_sample_drops_empty_comment():
    assert corpus.process_sample(0, RawSample("int f() {}", "/** @return x */")) is None
    pair = corpus.process_sample(3, RawSample("int getSize() {}", "/** Returns size. Later. */"))
    assert pair == ProcessedPair(3, ("int", "get", "size", "(", ")", "{", "}"), ("returns", "size", "."))


def test_process_sample_truncates():
    pair = corpus.process_sample(0, RawSample("a b c d e", "w x y z."), max_code_len=3, max_comment_len=2)
    assert pair.code_tokens == ("a", "b", "c")
    assert pair.comment_tokens == ("w", "x")


P1 = ProcessedPair(1, ("a",), ("x",))
P2 = ProcessedPair(2, ("b",), ("y",))


def test_deduplicate():
    assert deduplicate([P1, P1, P2]) == [P1, P2]
    assert deduplicate([]) == []
    p1_other = ProcessedPair(3, ("a",), ("z",))
    assert deduplicate([P1, P2, p1_other]) == [P1, P2, p1_other]
    # same content under a new id is still a duplicate
    assert deduplicate([P1, ProcessedPair(9, ("a",), ("x",))]) == [P1]


pairs_strategy = st.lists(
    st.builds(
        ProcessedPair,
        st.integers(0, 10_000),
        st.lists(st.sampled_from("abc"), min_size=1, max_size=3).map(tuple),
        st.lists(st.sampled_from("xy"), min_size=1, max_size=2).map(tuple),
    ),
    max_size=30,
)


@given(pairs_strategy)
def test_deduplicate_idempotent(pairs):
    once = deduplicate(pairs)
    assert deduplicate(once) == once


def _pairs(n):
    return [ProcessedPair(i, (f"c{i}",), (f"d{i}",)) for i in range(n)]


@pytest.mark.parametrize(
    "n, ratios, sizes",
    [(100, (0.9, 0.05, 0.05), (90, 5, 5)), (20, (0.5, 0.25, 0.25), (10, 5, 5)), (50, (0.9, 0.05, 0.05), (45, 3, 2))],
)
def test_split_sizes(n, ratios, sizes):
    assert split_dataset(_pairs(n), ratios, seed=7).sizes() == sizes


def test_split_deterministic():
    a = split_dataset(_pairs(100), (0.9, 0.05, 0.05), seed=7)
    b = split_dataset(_pairs(100), (0.9, 0.05, 0.05), seed=7)
    assert a == b
    assert split_dataset(_pairs(100), seed=8) != a


@given(st.integers(3, 200), st.integers(0, 2**31))
def test_split_partitions(n, seed):
    split = split_dataset(_pairs(n), seed=seed)
    ids = [p.id for part in (split.train, split.valid, split.test) for p in part]
    assert sorted(ids) == list(range(n))


def test_split_errors():
    with pytest.raises(CorpusError, match="too small"):
        split_dataset(_pairs(2))
    with pytest.raises(CorpusError, match="summing to 1"):
        split_dataset(_pairs(10), (0.5, 0.5, 0.5))


def test_build_vocab_ranking():
    v = build_vocab([["a", "a", "b"]], max_size=10, min_count=1)
    assert v.stoi["a"] == 4 and v.stoi["b"] == 5
    assert v.encode(["zzz"]) == [UNK]
    assert (v.stoi["<pad>"], v.stoi["<s>"], v.stoi["</s>"], v.stoi["<unk>"]) == (PAD, BOS, EOS, UNK)


def test_build_vocab_limits():
    v = build_vocab([["b", "a", "c", "c"]], max_size=5)
    assert v.itos[4:] == ["c"]
    v = build_vocab([["b", "a", "c", "c"]], max_size=10, min_count=2)
    assert v.itos[4:] == ["c"]
    # count ties break alphabetically
    assert build_vocab([["b", "a"]], max_size=10).itos[4:] == ["a", "b"]
    with pytest.raises(CorpusError):
        build_vocab([["a"]], max_size=4)


@given(st.lists(st.lists(st.text(alphabet="abcdef", min_size=1, max_size=3), max_size=8), max_size=8))
def test_vocab_roundtrip(seqs):
    v = build_vocab(seqs, max_size=1000)
    for seq in seqs:
        assert v.decode(v.encode(seq)) == seq


def test_vocab_file_roundtrip(tmp_path):
    v = build_vocab([["x", "y", "y", "<tag>"]], max_size=10)
    v.save(tmp_path / "v.txt")
    lines = (tmp_path / "v.txt").read_text().splitlines()
    assert lines[0].startswith("#") and lines[1] == "y"
    assert corpus.Vocabulary.load(tmp_path / "v.txt").itos == v.itos


def test_ingest_jsonl(tmp_path):
    path = tmp_path / "raw.jsonl"
    corpus.write_jsonl(
        path,
        [
            {"code": "int getA() { return a; }", "comment": "/** Returns a. */"},
            {"code": "int getA() { return a; }", "comment": "/** Returns a. */"},
            {"code": "void f() {}", "comment": ""},
            {"code": "int getB() { return b; }", "comment": "Returns b.\nsecond line"},
        ],
    )
    pairs = corpus.ingest(corpus.read_raw_samples(path))
    assert [p.id for p in pairs] == [0, 3]
    corpus.write_pairs(tmp_path / "out.jsonl", pairs)
    assert corpus.read_pairs(tmp_path / "out.jsonl") == pairs
