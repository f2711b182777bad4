"""Mini-batch teacher-forced training with early stopping on validation loss."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numerics as nx
from .corpus import Vocabulary
from .model import Batch, Example, RefineModel
from .retrieval import ExemplarTriple

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr: float = 1e-3
    epochs: int = 100
    patience: int = 5
    clip_norm: float = 5.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")


@dataclass
class TrainState:
    epoch: int = 0
    best_valid_loss: float = math.inf
    best_epoch: int = 0
    bad_epochs: int = 0
    seed: int = 0
    optimizer: dict = field(default_factory=dict)


@dataclass
class TrainResult:
    best_valid_loss: float
    best_epoch: int
    history: list[dict]
    state: TrainState


def encode_example(
    pair_id: int,
    triple: ExemplarTriple,
    target: Sequence[str],
    code_vocab: Vocabulary,
    comment_vocab: Vocabulary,
) -> Example:
    return Example(
        code_ids=tuple(code_vocab.encode(triple.input_code)),
        similar_ids=tuple(code_vocab.encode(triple.similar_code)),
        exemplar_ids=tuple(comment_vocab.encode(triple.exemplar_comment)),
        target_ids=tuple(comment_vocab.encode(target)),
        id=pair_id,
    )


def make_batches(
    examples: Sequence[Example],
    batch_size: int,
    seed: int | None = None,
) -> list[Batch]:
    """Cut ``examples`` into padded batches, shuffled under ``seed`` (or in order if None)."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(examples)) if seed is None else np.random.default_rng(seed).permutation(len(examples))
    return [
        Batch.from_examples([examples[i] for i in order[start : start + batch_size]])
        for start in range(0, len(examples), batch_size)
    ]


def evaluate_loss(model: RefineModel, batches: Sequence[Batch]) -> float:
    """Token-weighted mean cross-entropy over all batches (no tape, no parameter change)."""
    total, count = 0.0, 0.0
    for batch in batches:
        total += model.batch_loss(batch).item()
        count += batch.token_count
    return total / count


def train_step(model: RefineModel, batch: Batch, optimizer: nx.Adam, clip_norm: float) -> float:
    model.zero_grad()
    with nx.Tape() as tape:
        loss = model.mean_loss(batch)
    value = loss.item()
    if not math.isfinite(value):
        raise TrainingError(f"non-finite loss {value} on batch with ids {batch.ids}")
    nx.backward(tape, loss)
    nx.clip_grad_norm(model.parameters(), clip_norm)
    optimizer.step()
    return value


def train(
    model: RefineModel,
    train_examples: Sequence[Example],
    valid_examples: Sequence[Example],
    config: TrainConfig,
    log_path: str | Path | None = None,
    checkpoint_path: str | Path | None = None,
    checkpoint_meta: dict | None = None,
) -> TrainResult:
    """Train until ``config.epochs`` or until ``patience`` epochs pass without a validation improvement.

    On return the model holds the parameters of the best validation epoch.
    """
    optimizer = nx.Adam(model.parameters(), lr=config.lr)
    state = TrainState(seed=config.seed)
    valid_batches = make_batches(valid_examples, config.batch_size)
    best_params = model.state_dict()
    history: list[dict] = []
    log_fh = open(log_path, "w") if log_path else None
    try:
        for epoch in range(1, config.epochs + 1):
            start = time.perf_counter()
            batches = make_batches(train_examples, config.batch_size, seed=config.seed * 100003 + epoch)
            total, count = 0.0, 0.0
            for index, batch in enumerate(batches):
                try:
                    loss = train_step(model, batch, optimizer, config.clip_norm)
                except (TrainingError, FloatingPointError) as e:
                    raise TrainingError(f"epoch {epoch}, batch {index}: {e}") from e
                total += loss * batch.token_count
                count += batch.token_count
            valid_loss = evaluate_loss(model, valid_batches)
            state.epoch = epoch
            record = {
                "epoch": epoch,
                "train_loss": total / count,
                "valid_loss": valid_loss,
                "seconds": round(time.perf_counter() - start, 3),
            }
            history.append(record)
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
            log.info("epoch %d train %.4f valid %.4f", epoch, record["train_loss"], valid_loss)
            if valid_loss < state.best_valid_loss:
                state.best_valid_loss = valid_loss
                state.best_epoch = epoch
                state.bad_epochs = 0
                best_params = model.state_dict()
                if checkpoint_path:
                    model.save(checkpoint_path, {"epoch": epoch, "valid_loss": valid_loss, **(checkpoint_meta or {})})
            else:
                state.bad_epochs += 1
                if state.bad_epochs >= config.patience:
                    break
    finally:
        if log_fh:
            log_fh.close()
    model.load_state_dict(best_params)
    state.optimizer = optimizer.state_dict()
    return TrainResult(state.best_valid_loss, state.best_epoch, history, state)
