"""End-to-end stages: ingest, build-index, retrieve, train, generate, evaluate.

In-memory helpers (``prepare``, ``decode_split``) serve experiments; the
``run_*`` functions read and write the artifacts in ``work_dir``.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from . import corpus
from .config import PipelineConfig
from .corpus import DatasetSplit, ProcessedPair, Vocabulary
from .metrics import EvalRecord, ScoreReport, score_records
from .model import Example, ModelConfig, RefineModel
from .retrieval import ExemplarTriple, InvertedIndex, exemplar_record, index_build, make_exemplar
from .training import TrainConfig, TrainResult, encode_example, train

log = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")


class MissingArtifact(FileNotFoundError):
    def __init__(self, path: Path, hint: str) -> None:
        super().__init__(f"missing artifact {path} ({hint})")
        self.path = path


class ArtifactMismatch(RuntimeError):
    pass


@dataclass
class Artifacts:
    root: Path

    def __post_init__(self) -> None:
        self.root = Path(self.root)

    def split(self, name: str) -> Path:
        return self.root / f"{name}.jsonl"

    @property
    def processed(self) -> Path:
        return self.root / "processed.jsonl"

    @property
    def code_vocab(self) -> Path:
        return self.root / "code.vocab"

    @property
    def comment_vocab(self) -> Path:
        return self.root / "comment.vocab"

    @property
    def index(self) -> Path:
        return self.root / "index.txt"

    def exemplars(self, name: str) -> Path:
        return self.root / f"exemplars.{name}.jsonl"

    @property
    def checkpoint(self) -> Path:
        return self.root / "model.ckpt.json"

    @property
    def manifest(self) -> Path:
        return self.root / "manifest.json"

    @property
    def train_log(self) -> Path:
        return self.root / "train_log.jsonl"

    @property
    def hypotheses(self) -> Path:
        return self.root / "hypotheses.jsonl"

    @property
    def report(self) -> Path:
        return self.root / "report.json"

    @property
    def report_table(self) -> Path:
        return self.root / "report.txt"

    def require(self, path: Path, hint: str) -> Path:
        if not path.exists():
            raise MissingArtifact(path, hint)
        return path


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# in-memory building blocks ---------------------------------------------------


@dataclass
class Prepared:
    split: DatasetSplit
    code_vocab: Vocabulary
    comment_vocab: Vocabulary
    index: InvertedIndex
    triples: dict[str, list[ExemplarTriple]]
    examples: dict[str, list[Example]]


def build_vocabs(train_pairs: Sequence[ProcessedPair], config: PipelineConfig) -> tuple[Vocabulary, Vocabulary]:
    code_vocab = corpus.build_vocab((p.code_tokens for p in train_pairs), config.code_vocab_size, config.min_count)
    comment_vocab = corpus.build_vocab(
        (p.comment_tokens for p in train_pairs), config.comment_vocab_size, config.min_count
    )
    return code_vocab, comment_vocab


def exemplars_for(pairs: Sequence[ProcessedPair], index: InvertedIndex, train_by_id: dict, config: PipelineConfig):
    return [make_exemplar(p, index, train_by_id, k1=config.k1, b=config.b) for p in pairs]


def prepare(pairs: Sequence[ProcessedPair], config: PipelineConfig) -> Prepared:
    split = corpus.split_dataset(pairs, config.split_ratios, seed=config.sub_seed("split"))
    code_vocab, comment_vocab = build_vocabs(split.train, config)
    index = index_build(split.train)
    train_by_id = {p.id: p for p in split.train}
    triples, examples = {}, {}
    for name in SPLITS:
        part = getattr(split, name)
        triples[name] = exemplars_for(part, index, train_by_id, config)
        examples[name] = [
            encode_example(p.id, t, p.comment_tokens, code_vocab, comment_vocab) for p, t in zip(part, triples[name])
        ]
    return Prepared(split, code_vocab, comment_vocab, index, triples, examples)


def model_config(config: PipelineConfig, code_vocab: Vocabulary, comment_vocab: Vocabulary) -> ModelConfig:
    return ModelConfig(
        code_vocab_size=len(code_vocab),
        comment_vocab_size=len(comment_vocab),
        embed_dim=config.embed_dim,
        hidden_dim=config.hidden_dim,
        max_decode_len=config.max_decode_len,
    )


def train_config(config: PipelineConfig) -> TrainConfig:
    return TrainConfig(
        batch_size=config.batch_size,
        lr=config.lr,
        epochs=config.epochs,
        patience=config.patience,
        clip_norm=config.clip_norm,
        seed=config.sub_seed("shuffle"),
    )


def decode_split(
    model: RefineModel,
    pairs: Sequence[ProcessedPair],
    examples: Sequence[Example],
    comment_vocab: Vocabulary,
    config: PipelineConfig,
) -> list[EvalRecord]:
    records = []
    for pair, ex in zip(pairs, examples):
        ids = model.beam_search(ex, config.beam_width, config.max_decode_len, config.length_penalty)
        records.append(EvalRecord(pair.id, tuple(comment_vocab.decode(ids)), pair.comment_tokens))
    return records


# artifact stages -------------------------------------------------------------


def run_ingest(config: PipelineConfig) -> DatasetSplit:
    art = Artifacts(config.work_dir)
    dataset = Path(config.dataset)
    if not dataset.exists():
        raise MissingArtifact(dataset, "dataset JSON-lines file")
    art.root.mkdir(parents=True, exist_ok=True)
    samples = corpus.read_raw_samples(dataset)
    pairs = corpus.ingest(samples, config.max_code_len, config.max_comment_len)
    split = corpus.split_dataset(pairs, config.split_ratios, seed=config.sub_seed("split"))
    corpus.write_pairs(art.processed, pairs)
    for name in SPLITS:
        corpus.write_pairs(art.split(name), getattr(split, name))
    code_vocab, comment_vocab = build_vocabs(split.train, config)
    code_vocab.save(art.code_vocab)
    comment_vocab.save(art.comment_vocab)
    log.info("ingest: %d raw samples -> %d pairs, split %s", len(samples), len(pairs), split.sizes())
    return split


def _read_split(art: Artifacts, name: str) -> list[ProcessedPair]:
    return corpus.read_pairs(art.require(art.split(name), "run `ingest` first"))


def run_build_index(config: PipelineConfig) -> InvertedIndex:
    art = Artifacts(config.work_dir)
    index = index_build(_read_split(art, "train"))
    index.save(art.index)
    log.info("build-index: %d documents, %d terms", index.doc_count, len(index.postings))
    return index


def run_retrieve(config: PipelineConfig) -> None:
    art = Artifacts(config.work_dir)
    index = InvertedIndex.load(art.require(art.index, "run `build-index` first"))
    train_by_id = {p.id: p for p in _read_split(art, "train")}
    for name in SPLITS:
        pairs = _read_split(art, name)
        triples = exemplars_for(pairs, index, train_by_id, config)
        corpus.write_jsonl(art.exemplars(name), (exemplar_record(p.id, t) for p, t in zip(pairs, triples)))
        fallbacks = sum(t.is_fallback for t in triples)
        log.info("retrieve: %s, %d queries, %d without exemplar", name, len(pairs), fallbacks)


def _load_examples(art: Artifacts, name: str, code_vocab: Vocabulary, comment_vocab: Vocabulary) -> tuple[list[ProcessedPair], list[Example]]:
    pairs = _read_split(art, name)
    train_by_id = {p.id: p for p in _read_split(art, "train")}
    records = {
        r["id"]: r for r in corpus.read_jsonl(art.require(art.exemplars(name), "run `retrieve` first"))
    }
    examples = []
    for p in pairs:
        if p.id not in records:
            raise ArtifactMismatch(f"{art.exemplars(name)} has no exemplar for pair {p.id}; rerun `retrieve`")
        r = records[p.id]
        similar = train_by_id[r["similar_id"]].code_tokens if r["similar_id"] is not None else ()
        triple = ExemplarTriple(p.code_tokens, similar, tuple(r["exemplar_comment_tokens"]), r["score"], r["similar_id"])
        examples.append(encode_example(p.id, triple, p.comment_tokens, code_vocab, comment_vocab))
    return pairs, examples


def _load_vocabs(art: Artifacts) -> tuple[Vocabulary, Vocabulary]:
    code_vocab = Vocabulary.load(art.require(art.code_vocab, "run `ingest` first"))
    comment_vocab = Vocabulary.load(art.require(art.comment_vocab, "run `ingest` first"))
    return code_vocab, comment_vocab


def run_train(config: PipelineConfig) -> TrainResult:
    art = Artifacts(config.work_dir)
    code_vocab, comment_vocab = _load_vocabs(art)
    _, train_examples = _load_examples(art, "train", code_vocab, comment_vocab)
    _, valid_examples = _load_examples(art, "valid", code_vocab, comment_vocab)
    if not valid_examples:
        raise ArtifactMismatch("validation split is empty; adjust split_ratios")
    model = RefineModel(model_config(config, code_vocab, comment_vocab), seed=config.sub_seed("init"))
    result = train(model, train_examples, valid_examples, train_config(config), log_path=art.train_log)
    model.save(art.checkpoint, {"best_epoch": result.best_epoch, "valid_loss": result.best_valid_loss})
    manifest = {
        "model_config": model.config.__dict__,
        "pipeline_config": config.to_json(),
        "code_vocab_sha256": sha256_file(art.code_vocab),
        "comment_vocab_sha256": sha256_file(art.comment_vocab),
        "checkpoint_sha256": sha256_file(art.checkpoint),
        "best_epoch": result.best_epoch,
        "best_valid_loss": result.best_valid_loss,
    }
    art.manifest.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return result


def load_trained_model(art: Artifacts) -> RefineModel:
    manifest = json.loads(art.require(art.manifest, "run `train` first").read_text())
    art.require(art.checkpoint, "run `train` first")
    for key, path in (("code_vocab_sha256", art.code_vocab), ("comment_vocab_sha256", art.comment_vocab)):
        if sha256_file(art.require(path, "run `ingest` first")) != manifest[key]:
            raise ArtifactMismatch(f"{path} does not match the vocabulary the model was trained with")
    if sha256_file(art.checkpoint) != manifest["checkpoint_sha256"]:
        raise ArtifactMismatch(f"{art.checkpoint} does not match the manifest")
    return RefineModel.load(art.checkpoint)


def run_generate(config: PipelineConfig, split: str = "test") -> list[EvalRecord]:
    art = Artifacts(config.work_dir)
    art.require(art.index, "run `build-index` first")
    model = load_trained_model(art)
    code_vocab, comment_vocab = _load_vocabs(art)
    pairs, examples = _load_examples(art, split, code_vocab, comment_vocab)
    records = decode_split(model, pairs, examples, comment_vocab, config)
    corpus.write_jsonl(
        art.hypotheses,
        ({"id": r.id, "hypothesis": list(r.hypothesis), "reference": list(r.reference)} for r in records),
    )
    return records


def read_eval_records(path: Path) -> list[EvalRecord]:
    return [EvalRecord(int(r["id"]), tuple(r["hypothesis"]), tuple(r["reference"])) for r in corpus.read_jsonl(path)]


def run_evaluate(config: PipelineConfig, hypotheses: str | Path | None = None) -> ScoreReport:
    art = Artifacts(config.work_dir)
    path = Path(hypotheses) if hypotheses else art.hypotheses
    if not path.exists():
        raise MissingArtifact(path, "run `generate` first")
    report = score_records(read_eval_records(path))
    art.root.mkdir(parents=True, exist_ok=True)
    art.report.write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n")
    art.report_table.write_text(report.table() + "\n")
    return report


def run_pipeline(config: PipelineConfig) -> ScoreReport:
    run_ingest(config)
    run_build_index(config)
    run_retrieve(config)
    run_train(config)
    run_generate(config)
    return run_evaluate(config)
