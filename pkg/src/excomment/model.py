"""The refine network.

Three LSTM encoders read the input code (x), the retrieved similar code (x')
and the similar code's comment (y').  A sigmoid gate over the final code
states gives a scalar similarity ``s`` that weights the exemplar everywhere
it enters the decoder: the initial state is ``blend(h_x, h_y, s)`` and every
step's attention context is ``blend(ctx_x, ctx_y, s)``.  An example whose
exemplar is empty gets ``s = 0`` exactly, which leaves a plain attention
seq2seq over x.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numerics as nx
from .corpus import BOS, EOS, PAD
from .numerics import Parameter, ShapeError, Tensor

ENCODERS = ("input_code", "similar_code", "exemplar_comment")
_ENCODER_PREFIX = {"input_code": "enc_x", "similar_code": "enc_xp", "exemplar_comment": "enc_y"}


@dataclass(frozen=True)
class ModelConfig:
    code_vocab_size: int
    comment_vocab_size: int
    embed_dim: int = 128
    hidden_dim: int = 256
    max_decode_len: int = 30

    def __post_init__(self) -> None:
        for name, value in asdict(self).items():
            if not isinstance(value, int) or value < 1:
                raise ValueError(f"ModelConfig.{name} must be a positive integer, got {value!r}")
        if self.max_decode_len < 2:
            raise ValueError("ModelConfig.max_decode_len must be at least 2")
        if self.comment_vocab_size < 4:
            raise ValueError("comment vocabulary must hold the four reserved ids")


@dataclass(frozen=True)
class Example:
    """One model input: token ids for x, x', y' and (for training) the target y."""

    code_ids: tuple[int, ...]
    similar_ids: tuple[int, ...] = ()
    exemplar_ids: tuple[int, ...] = ()
    target_ids: tuple[int, ...] = ()
    id: int = -1

    @property
    def has_exemplar(self) -> bool:
        return len(self.exemplar_ids) > 0

    def without_exemplar(self) -> "Example":
        return Example(self.code_ids, (), (), self.target_ids, self.id)


def pad_ids(seqs: Sequence[Sequence[int]], width: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    width = max(int(lengths.max(initial=0)), width or 0)
    out = np.full((len(seqs), width), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out, lengths


@dataclass
class Batch:
    x: np.ndarray
    x_len: np.ndarray
    xp: np.ndarray
    xp_len: np.ndarray
    yp: np.ndarray
    yp_len: np.ndarray
    dec_in: np.ndarray
    dec_out: np.ndarray
    mask: np.ndarray
    has_exemplar: np.ndarray
    ids: list[int]

    @classmethod
    def from_examples(cls, examples: Sequence[Example], extra_pad: int = 0) -> "Batch":
        """Pad every field with PAD; ``extra_pad`` appends that many additional PAD columns."""

        def padded(seqs):
            widest = max((len(s) for s in seqs), default=0)
            return pad_ids(seqs, widest + extra_pad)

        x, x_len = padded([e.code_ids for e in examples])
        xp, xp_len = padded([e.similar_ids for e in examples])
        yp, yp_len = padded([e.exemplar_ids for e in examples])
        dec_in, _ = padded([(BOS, *e.target_ids) for e in examples])
        dec_out, out_len = padded([(*e.target_ids, EOS) for e in examples])
        mask = (np.arange(dec_out.shape[1])[None, :] < out_len[:, None]).astype(np.float64)
        has = np.array([e.has_exemplar for e in examples], dtype=bool)
        return cls(x, x_len, xp, xp_len, yp, yp_len, dec_in, dec_out, mask, has, [e.id for e in examples])

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def token_count(self) -> float:
        return float(self.mask.sum())


@dataclass
class EncoderState:
    hiddens: Tensor  # (B, T, H)
    mask: np.ndarray  # (B, T) attendable positions
    h: Tensor  # (B, H)
    c: Tensor  # (B, H)

    def select(self, rows: np.ndarray) -> "EncoderState":
        return EncoderState(
            Tensor(self.hiddens.data[rows]), self.mask[rows], Tensor(self.h.data[rows]), Tensor(self.c.data[rows])
        )


@dataclass
class AttentionOutput:
    context: Tensor
    weights: np.ndarray


@dataclass
class DecoderMemory:
    """Encoder outputs and the gate value, shared by all decoder steps."""

    enc_x: EncoderState
    enc_y: EncoderState | None
    keys_x: Tensor
    keys_y: Tensor | None
    s: Tensor  # (B, 1)

    def select(self, rows: np.ndarray) -> "DecoderMemory":
        has_y = self.enc_y is not None
        return DecoderMemory(
            self.enc_x.select(rows),
            self.enc_y.select(rows) if has_y else None,
            Tensor(self.keys_x.data[rows]),
            Tensor(self.keys_y.data[rows]) if has_y else None,
            Tensor(self.s.data[rows]),
        )


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    score: float
    finished: bool

    @property
    def output(self) -> list[int]:
        return [t for t in self.tokens if t != EOS]


def lstm_step(W: Tensor, b: Tensor, x: Tensor, h_prev: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
    """Standard LSTM cell; gate blocks in ``W``/``b`` are ordered input, forget, candidate, output."""
    H = h_prev.shape[-1]
    if W.shape != (x.shape[-1] + H, 4 * H) or b.shape != (4 * H,) or c_prev.shape != h_prev.shape:
        raise ShapeError(
            f"lstm_step: input {x.shape}, hidden {h_prev.shape}, cell {c_prev.shape} "
            f"do not fit weights {W.shape} and bias {b.shape}"
        )
    z = nx.concat([x, h_prev], axis=-1) @ W + b
    i = nx.sigmoid(z[..., :H])
    f = nx.sigmoid(z[..., H : 2 * H])
    g = nx.tanh(z[..., 2 * H : 3 * H])
    o = nx.sigmoid(z[..., 3 * H :])
    c = f * c_prev + i * g
    h = o * nx.tanh(c)
    return h, c


def init_decoder_state(h_x: Tensor, c_x: Tensor, h_y: Tensor, c_y: Tensor, s: Tensor) -> tuple[Tensor, Tensor]:
    return nx.blend(h_x, h_y, s), nx.blend(c_x, c_y, s)


def fuse_contexts(ctx_x: Tensor, ctx_y: Tensor, s: Tensor) -> Tensor:
    return nx.blend(ctx_x, ctx_y, s)


class RefineModel:
    def __init__(self, config: ModelConfig, seed: int = 0) -> None:
        self.config = config
        self.params: dict[str, Parameter] = {}
        rng = np.random.default_rng(seed)
        E, H = config.embed_dim, config.hidden_dim
        shapes = [
            ("emb.code", (config.code_vocab_size, E)),
            ("emb.comment", (config.comment_vocab_size, E)),
        ]
        for prefix in ("enc_x", "enc_xp", "enc_y"):
            shapes += [(f"{prefix}.W", (E + H, 4 * H)), (f"{prefix}.b", (4 * H,))]
        shapes += [("gate.w", (2 * H, 1)), ("gate.b", (1,))]
        for prefix in ("attn_x", "attn_y"):
            shapes += [(f"{prefix}.W", (H, H)), (f"{prefix}.U", (H, H)), (f"{prefix}.v", (H, 1))]
        shapes += [
            ("dec.W", (E + H + H, 4 * H)),
            ("dec.b", (4 * H,)),
            ("out.W", (H, config.comment_vocab_size)),
            ("out.b", (config.comment_vocab_size,)),
        ]
        for name, shape in shapes:
            if len(shape) == 2:
                value = nx.glorot_uniform(rng, shape)
            else:
                value = np.zeros(shape)
                if name.endswith(".b") and shape == (4 * H,):
                    value[H : 2 * H] = 1.0  # forget gate
            self.params[name] = Parameter(name, value)

    def __getitem__(self, name: str) -> Parameter:
        return self.params[name]

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            missing = sorted(set(self.params) - set(state))
            extra = sorted(set(state) - set(self.params))
            raise ValueError(f"checkpoint mismatch: missing {missing}, unexpected {extra}")
        for name, value in state.items():
            if value.shape != self.params[name].shape:
                raise ShapeError(f"checkpoint tensor {name!r} has shape {value.shape}, expected {self.params[name].shape}")
            self.params[name].data = np.array(value, dtype=np.float64)

    def save(self, path: str | Path, meta: dict | None = None) -> None:
        nx.save_tensors(path, self.state_dict(), {"config": asdict(self.config), **(meta or {})})

    @classmethod
    def load(cls, path: str | Path) -> "RefineModel":
        tensors, meta = nx.load_tensors(path)
        model = cls(ModelConfig(**meta["config"]))
        model.load_state_dict(tensors)
        return model

    # encoders ----------------------------------------------------------------

    def encode_batch(self, encoder_id: str, ids: np.ndarray, lengths: np.ndarray) -> EncoderState:
        """Left-to-right pass over padded ``ids``; rows stop updating after their length.

        A row of length 0 keeps the zero state; its attention mask opens
        position 0 (a zero vector) so softmax stays defined.
        """
        prefix = _ENCODER_PREFIX[encoder_id]
        table = self.params["emb.comment" if encoder_id == "exemplar_comment" else "emb.code"]
        W, b = self.params[f"{prefix}.W"], self.params[f"{prefix}.b"]
        H = self.config.hidden_dim
        B = ids.shape[0]
        if ids.shape[1] == 0:
            ids = np.full((B, 1), PAD, dtype=np.int64)
        T = ids.shape[1]
        emb = nx.embedding(table, ids)
        h = Tensor(np.zeros((B, H)))
        c = Tensor(np.zeros((B, H)))
        steps = []
        for t in range(T):
            live = t < lengths
            if not live.any():
                steps.append(h)
                continue
            h_new, c_new = lstm_step(W, b, emb[:, t], h, c)
            if live.all():
                h, c = h_new, c_new
            else:
                m = live[:, None].astype(np.float64)
                h, c = nx.blend(h, h_new, m), nx.blend(c, c_new, m)
            steps.append(h)
        mask = np.arange(T)[None, :] < lengths[:, None]
        mask[lengths == 0, 0] = True
        return EncoderState(nx.stack(steps, axis=1), mask, h, c)

    def encode(self, encoder_id: str, token_ids: Sequence[int]) -> EncoderState:
        if encoder_id not in ENCODERS:
            raise ValueError(f"unknown encoder {encoder_id!r}; expected one of {ENCODERS}")
        if not token_ids and encoder_id == "input_code":
            raise ValueError("input code must be non-empty")
        ids, lengths = pad_ids([token_ids])
        return self.encode_batch(encoder_id, ids, lengths)

    # gate and attention ------------------------------------------------------

    def similarity_gate(self, h_x: Tensor, h_xprime: Tensor, has_exemplar: np.ndarray) -> Tensor:
        """Scalar gate per row, (B, 1).  Rows without an exemplar get exactly 0."""
        z = nx.concat([h_x, h_xprime], axis=-1) @ self.params["gate.w"] + self.params["gate.b"]
        return nx.sigmoid(z) * np.asarray(has_exemplar, dtype=np.float64).reshape(-1, 1)

    def attention_keys(self, enc: EncoderState, which: str) -> Tensor:
        return enc.hiddens @ self.params[f"attn_{which}.U"]

    def attend(self, decoder_h: Tensor, enc: EncoderState, which: str, keys: Tensor | None = None) -> AttentionOutput:
        """Additive attention: e_i = v . tanh(W d + U h_i), weights = softmax(e)."""
        if keys is None:
            keys = self.attention_keys(enc, which)
        B, T, A = keys.shape
        query = nx.reshape(decoder_h @ self.params[f"attn_{which}.W"], (B, 1, A))
        energy = nx.reshape(nx.tanh(keys + query) @ self.params[f"attn_{which}.v"], (B, T))
        weights = nx.softmax(energy, mask=enc.mask)
        context = nx.sum_axis(enc.hiddens * nx.reshape(weights, (B, T, 1)), axis=1)
        return AttentionOutput(context, weights.data)

    # decoder -----------------------------------------------------------------

    def prepare(self, batch: Batch) -> tuple[DecoderMemory, Tensor, Tensor]:
        """Run the encoders and gate; return decoder memory and initial (h, c)."""
        enc_x = self.encode_batch("input_code", batch.x, batch.x_len)
        keys_x = self.attention_keys(enc_x, "x")
        if not batch.has_exemplar.any():
            # every row is a fallback: s = 0, so the y side cannot affect anything
            s = Tensor(np.zeros((len(batch), 1)))
            return DecoderMemory(enc_x, None, keys_x, None, s), enc_x.h, enc_x.c
        enc_xp = self.encode_batch("similar_code", batch.xp, batch.xp_len)
        enc_y = self.encode_batch("exemplar_comment", batch.yp, batch.yp_len)
        s = self.similarity_gate(enc_x.h, enc_xp.h, batch.has_exemplar)
        h0, c0 = init_decoder_state(enc_x.h, enc_x.c, enc_y.h, enc_y.c, s)
        memory = DecoderMemory(enc_x, enc_y, keys_x, self.attention_keys(enc_y, "y"), s)
        return memory, h0, c0

    def decoder_step(
        self, prev_ids: np.ndarray, h_prev: Tensor, c_prev: Tensor, memory: DecoderMemory
    ) -> tuple[Tensor, Tensor, Tensor]:
        """Attend with the previous state, feed [emb(prev); fused context] to the LSTM, project to logits."""
        ctx = self.attend(h_prev, memory.enc_x, "x", memory.keys_x).context
        if memory.enc_y is not None:
            ctx_y = self.attend(h_prev, memory.enc_y, "y", memory.keys_y).context
            ctx = fuse_contexts(ctx, ctx_y, memory.s)
        emb = nx.embedding(self.params["emb.comment"], np.asarray(prev_ids, dtype=np.int64))
        h, c = lstm_step(self.params["dec.W"], self.params["dec.b"], nx.concat([emb, ctx], axis=-1), h_prev, c_prev)
        logits = h @ self.params["out.W"] + self.params["out.b"]
        return logits, h, c

    def batch_loss(self, batch: Batch) -> Tensor:
        """Summed masked cross-entropy over all target positions (teacher forcing)."""
        memory, h, c = self.prepare(batch)
        total = None
        for t in range(batch.dec_in.shape[1]):
            logits, h, c = self.decoder_step(batch.dec_in[:, t], h, c, memory)
            ce = nx.cross_entropy(logits, batch.dec_out[:, t], batch.mask[:, t])
            total = ce if total is None else total + ce
        return total

    def mean_loss(self, batch: Batch) -> Tensor:
        return self.batch_loss(batch) * (1.0 / batch.token_count)

    def forward_loss(self, example: Example) -> Tensor:
        if not example.target_ids:
            raise ValueError("target comment must be non-empty")
        return self.mean_loss(Batch.from_examples([example]))

    def step_distributions(self, example: Example) -> np.ndarray:
        """Teacher-forced per-step output distributions, shape (len(target) + 1, V)."""
        batch = Batch.from_examples([example])
        memory, h, c = self.prepare(batch)
        rows = []
        for t in range(batch.dec_in.shape[1]):
            logits, h, c = self.decoder_step(batch.dec_in[:, t], h, c, memory)
            rows.append(nx.softmax(logits).data[0])
        return np.array(rows)

    # inference ---------------------------------------------------------------

    def _log_probs(self, logits: Tensor) -> np.ndarray:
        logp = nx.log_softmax(logits).data.copy()
        logp[:, PAD] = -np.inf
        logp[:, BOS] = -np.inf
        return logp

    def greedy_decode(self, example: Example, max_decode_len: int | None = None) -> list[int]:
        max_len = max_decode_len or self.config.max_decode_len
        base = Example(example.code_ids, example.similar_ids, example.exemplar_ids)
        memory, h, c = self.prepare(Batch.from_examples([base]))
        prev = np.array([BOS])
        out: list[int] = []
        for _ in range(max_len):
            logits, h, c = self.decoder_step(prev, h, c, memory)
            token = int(np.argmax(self._log_probs(logits)[0]))
            if token == EOS:
                break
            out.append(token)
            prev = np.array([token])
        return out

    def beam_search_hypotheses(
        self,
        example: Example,
        width: int = 5,
        max_decode_len: int | None = None,
        length_penalty: float = 0.0,
    ) -> list[Hypothesis]:
        """All completed hypotheses, best first.

        Candidates are ranked by summed log-probability, ties toward the
        lexicographically smaller id sequence.  A hypothesis reaching
        ``max_decode_len`` tokens without EOS is completed as is.  Completed
        hypotheses are ranked by score / len**length_penalty.
        """
        if width < 1:
            raise ValueError(f"beam width must be >= 1, got {width}")
        max_len = max_decode_len or self.config.max_decode_len
        base = Example(example.code_ids, example.similar_ids, example.exemplar_ids)
        memory, h, c = self.prepare(Batch.from_examples([base]))
        live = [Hypothesis((), 0.0, False)]
        finished: list[Hypothesis] = []
        for step in range(max_len):
            prev = np.array([hyp.tokens[-1] if hyp.tokens else BOS for hyp in live])
            logits, h, c = self.decoder_step(prev, h, c, memory)
            totals = np.array([hyp.score for hyp in live])[:, None] + self._log_probs(logits)
            flat = totals.reshape(-1)
            finite = np.isfinite(flat)
            n_cand = int(finite.sum())
            if n_cand > width:
                kth = np.partition(flat[finite], n_cand - width)[n_cand - width]
                chosen = np.flatnonzero(finite & (flat >= kth))
            else:
                chosen = np.flatnonzero(finite)
            V = totals.shape[1]
            cands = sorted(
                ((float(flat[k]), live[k // V].tokens + (int(k % V),), k // V) for k in chosen),
                key=lambda t: (-t[0], t[1]),
            )[:width]
            last = step == max_len - 1
            next_live, rows = [], []
            for score, tokens, row in cands:
                if tokens[-1] == EOS or last:
                    finished.append(Hypothesis(tokens, score, True))
                else:
                    next_live.append(Hypothesis(tokens, score, False))
                    rows.append(row)
            if not next_live:
                break
            if length_penalty == 0.0 and finished:
                # log-probs only decrease, so no live hypothesis can overtake
                if max(f.score for f in finished) > max(hyp.score for hyp in next_live):
                    break
            rows_arr = np.array(rows)
            h, c = Tensor(h.data[rows_arr]), Tensor(c.data[rows_arr])
            memory = memory.select(rows_arr)
            live = next_live

        def rank(hyp: Hypothesis):
            n = max(len(hyp.output), 1)
            return (-hyp.score / (n**length_penalty), hyp.tokens)

        return sorted(finished, key=rank)

    def beam_search(
        self,
        example: Example,
        width: int = 5,
        max_decode_len: int | None = None,
        length_penalty: float = 0.0,
    ) -> list[int]:
        hyps = self.beam_search_hypotheses(example, width, max_decode_len, length_penalty)
        return hyps[0].output if hyps else []
