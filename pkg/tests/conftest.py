import numpy as np
import pytest

from excomment.model import Example, ModelConfig, RefineModel

TINY = ModelConfig(code_vocab_size=20, comment_vocab_size=15, embed_dim=8, hidden_dim=12, max_decode_len=5)


def random_example(rng, config=TINY, max_len=5, exemplar=True, target=True):
    def seq(vocab, lo=1):
        return tuple(int(t) for t in rng.integers(3, vocab, size=int(rng.integers(lo, max_len + 1))))

    code = seq(config.code_vocab_size)
    similar = seq(config.code_vocab_size) if exemplar else ()
    ex = seq(config.comment_vocab_size) if exemplar else ()
    y = seq(config.comment_vocab_size) if target else ()
    return Example(code, similar, ex, y)


def params_of(model):
    return {name: p.data for name, p in model.params.items()}


@pytest.fixture
def tiny_model():
    return RefineModel(TINY, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria report one line each at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
