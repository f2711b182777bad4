"""Small reproducible experiments: memorizing a fixture and measuring what the exemplar adds."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

from . import corpus
from . import numerics as nx
from . import synthetic
from .config import PipelineConfig
from .corpus import ProcessedPair, RawSample
from .metrics import corpus_bleu
from .model import ModelConfig, RefineModel
from .pipeline import build_vocabs, decode_split, model_config, prepare, train_config
from .retrieval import index_build, make_exemplar
from .training import encode_example, evaluate_loss, make_batches, train, train_step

log = logging.getLogger(__name__)


@dataclass
class MemorizeResult:
    epochs: int
    final_loss: float
    exact_matches: int
    total: int
    seconds: float
    losses: list[float] = field(default_factory=list)

    @property
    def exact_fraction(self) -> float:
        return self.exact_matches / self.total

    def first_epoch_below(self, threshold: float) -> int | None:
        return next((i for i, loss in enumerate(self.losses, 1) if loss < threshold), None)


def memorize(
    pairs: Sequence[ProcessedPair],
    target_loss: float = 0.05,
    max_epochs: int = 500,
    embed_dim: int = 32,
    hidden_dim: int = 64,
    lr: float = 0.01,
    batch_size: int = 4,
    seed: int = 0,
) -> MemorizeResult:
    """Train on ``pairs`` (exemplars retrieved among themselves) until the training loss drops below ``target_loss``."""
    start = time.perf_counter()
    config = PipelineConfig(min_count=1)
    code_vocab, comment_vocab = build_vocabs(pairs, config)
    index = index_build(pairs)
    by_id = {p.id: p for p in pairs}
    examples = [
        encode_example(p.id, make_exemplar(p, index, by_id), p.comment_tokens, code_vocab, comment_vocab) for p in pairs
    ]
    longest = max(len(p.comment_tokens) for p in pairs) + 1
    model = RefineModel(
        ModelConfig(len(code_vocab), len(comment_vocab), embed_dim, hidden_dim, max_decode_len=max(longest, 2)),
        seed=seed,
    )
    optimizer = nx.Adam(model.parameters(), lr=lr)
    full = make_batches(examples, len(examples))
    losses: list[float] = []
    epoch = 0
    while epoch < max_epochs:
        epoch += 1
        for batch in make_batches(examples, batch_size, seed=seed * 100003 + epoch):
            train_step(model, batch, optimizer, clip_norm=5.0)
        losses.append(evaluate_loss(model, full))
        if losses[-1] < target_loss:
            break
    exact = sum(model.greedy_decode(ex) == list(ex.target_ids) for ex in examples)
    return MemorizeResult(epoch, losses[-1], exact, len(examples), time.perf_counter() - start, losses)


@dataclass
class BenefitResult:
    full_bleu: float
    ablated_bleu: float
    full_epochs: int
    ablated_epochs: int
    retrieval_hits: int  # test items whose exemplar comes from the same family
    test_size: int
    seconds: float

    @property
    def gap(self) -> float:
        return self.full_bleu - self.ablated_bleu


BENEFIT_CONFIG = PipelineConfig(
    embed_dim=32,
    hidden_dim=64,
    lr=0.005,
    epochs=80,
    patience=10,
    batch_size=32,
    beam_width=1,
    max_decode_len=20,
    split_ratios=(0.8, 0.1, 0.1),
    seed=0,
)


def exemplar_benefit(
    samples: Sequence[RawSample] | None = None,
    config: PipelineConfig = BENEFIT_CONFIG,
) -> BenefitResult:
    """Train the full model and an exemplar-ablated twin on the same data and seeds; score both on the test split.

    The ablated twin sees sentinel (empty) exemplars in training, validation
    and test, which makes it a plain attention seq2seq over the input code.
    """
    start = time.perf_counter()
    if samples is None:
        samples = synthetic.template_corpus()
    pairs = corpus.ingest(samples, config.max_code_len, config.max_comment_len)
    prep = prepare(pairs, config)
    hits = sum(
        _same_template(t.exemplar_comment, p.comment_tokens) for t, p in zip(prep.triples["test"], prep.split.test)
    )
    scores, epochs = {}, {}
    for ablate in (False, True):
        sets = {
            name: [e.without_exemplar() for e in exs] if ablate else list(exs) for name, exs in prep.examples.items()
        }
        model = RefineModel(model_config(config, prep.code_vocab, prep.comment_vocab), seed=config.sub_seed("init"))
        result = train(model, sets["train"], sets["valid"], train_config(config))
        records = decode_split(model, prep.split.test, sets["test"], prep.comment_vocab, config)
        scores[ablate] = corpus_bleu(records)
        epochs[ablate] = len(result.history)
        log.info("ablated=%s: BLEU %.2f after %d epochs", ablate, scores[ablate], epochs[ablate])
    return BenefitResult(
        scores[False], scores[True], epochs[False], epochs[True], hits, len(prep.split.test), time.perf_counter() - start
    )


def _same_template(a: Sequence[str], b: Sequence[str]) -> bool:
    return len(a) == len(b) and sum(x != y for x, y in zip(a, b)) <= 1
