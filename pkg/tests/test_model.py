import itertools
import math

import numpy as np
import pytest
from conftest import TINY, params_of, random_example
from hypothesis import given, settings
from hypothesis import strategies as st

import reference as ref
from excomment import numerics as nx
from excomment.corpus import BOS, EOS, PAD
from excomment.model import Batch, Example, ModelConfig, RefineModel, init_decoder_state, lstm_step
from excomment.numerics import ShapeError, Tape, Tensor


def jitter(model, rng, scale=0.5):
    """Move every parameter (biases included) away from its initial value."""
    for p in model.parameters():
        p.data = p.data + rng.uniform(-scale, scale, size=p.shape)
    return model


# LSTM cell -----------------------------------------------------------------


def test_lstm_zero_weights_keep_half_cell():
    H, E = 3, 2
    W = Tensor(np.zeros((E + H, 4 * H)))
    b = Tensor(np.zeros(4 * H))
    c0 = np.array([[0.4, -1.0, 2.0]])
    h, c = lstm_step(W, b, Tensor(np.ones((1, E))), Tensor(np.zeros((1, H))), Tensor(c0))
    # all gates are sigmoid(0) = 0.5 and the candidate is tanh(0) = 0
    np.testing.assert_allclose(c.data, 0.5 * c0, rtol=0, atol=1e-15)
    np.testing.assert_allclose(h.data, 0.5 * np.tanh(0.5 * c0), rtol=0, atol=1e-15)


def test_lstm_matches_reference(rng):
    E, H = 4, 5
    W, b = rng.normal(size=(E + H, 4 * H)), rng.normal(size=4 * H)
    x, h0, c0 = rng.normal(size=E), rng.normal(size=H), rng.normal(size=H)
    h, c = lstm_step(Tensor(W), Tensor(b), Tensor(x[None]), Tensor(h0[None]), Tensor(c0[None]))
    rh, rc = ref.lstm(W, b, x, h0, c0)
    np.testing.assert_allclose(h.data[0], rh, rtol=0, atol=1e-14)
    np.testing.assert_allclose(c.data[0], rc, rtol=0, atol=1e-14)


def test_lstm_shape_error():
    with pytest.raises(ShapeError):
        lstm_step(Tensor(np.zeros((5, 12))), Tensor(np.zeros(12)), Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 3))))


def test_forget_bias_initialised_to_one(tiny_model):
    H = TINY.hidden_dim
    for prefix in ("enc_x", "enc_xp", "enc_y", "dec"):
        b = tiny_model[f"{prefix}.b"].data
        assert np.all(b[H : 2 * H] == 1.0)
        assert np.all(np.delete(b, np.s_[H : 2 * H]) == 0.0)
    assert np.all(tiny_model["gate.b"].data == 0.0)


def test_same_seed_same_parameters():
    a, b = RefineModel(TINY, seed=3), RefineModel(TINY, seed=3)
    for name in a.params:
        assert np.array_equal(a[name].data, b[name].data)
    c = RefineModel(TINY, seed=4)
    assert not np.array_equal(a["out.W"].data, c["out.W"].data)


# encoders, gate, attention -------------------------------------------------


def test_encoder_matches_reference(tiny_model, rng):
    jitter(tiny_model, rng)
    P = params_of(tiny_model)
    ids = (4, 9, 3, 17)
    enc = tiny_model.encode("input_code", ids)
    states, h, c = ref.encode(P, "enc_x", "emb.code", ids)
    np.testing.assert_allclose(enc.hiddens.data[0], states, rtol=0, atol=1e-13)
    np.testing.assert_allclose(enc.h.data[0], h, rtol=0, atol=1e-13)
    np.testing.assert_allclose(enc.c.data[0], c, rtol=0, atol=1e-13)


def test_batched_encoder_ignores_padding(tiny_model, rng):
    jitter(tiny_model, rng)
    seqs = [(4, 5), (6, 7, 8, 9, 10), (11,)]
    from excomment.model import pad_ids

    ids, lengths = pad_ids(seqs)
    enc = tiny_model.encode_batch("input_code", ids, lengths)
    for row, s in enumerate(seqs):
        single = tiny_model.encode("input_code", s)
        np.testing.assert_allclose(enc.h.data[row], single.h.data[0], rtol=0, atol=1e-14)
        np.testing.assert_allclose(enc.hiddens.data[row, : len(s)], single.hiddens.data[0], rtol=0, atol=1e-14)
        assert enc.mask[row].sum() == len(s)


def test_encode_rejects_bad_input(tiny_model):
    with pytest.raises(ValueError):
        tiny_model.encode("input_code", ())
    with pytest.raises(ValueError):
        tiny_model.encode("decoder", (4,))


def test_gate_hand_value(tiny_model):
    H = TINY.hidden_dim
    tiny_model["gate.w"].data = np.full((2 * H, 1), 0.1)
    tiny_model["gate.b"].data = np.array([-0.3])
    h_x = Tensor(np.full((1, H), 0.5))
    h_xp = Tensor(np.full((1, H), -0.25))
    s = tiny_model.similarity_gate(h_x, h_xp, np.array([True]))
    expected = 1.0 / (1.0 + math.exp(-(0.1 * 0.5 * H - 0.1 * 0.25 * H - 0.3)))
    assert s.shape == (1, 1)
    assert abs(s.data[0, 0] - expected) < 1e-15
    zero = tiny_model.similarity_gate(h_x, h_xp, np.array([False]))
    assert zero.data[0, 0] == 0.0


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.integers(0, 2**31))
def test_initial_state_blend_is_linear(s, seed):
    g = np.random.default_rng(seed)
    hx, cx, hy, cy = (g.normal(size=(1, 4)) for _ in range(4))
    h, c = init_decoder_state(Tensor(hx), Tensor(cx), Tensor(hy), Tensor(cy), Tensor(np.array([[s]])))
    np.testing.assert_allclose(h.data, (1 - s) * hx + s * hy, rtol=0, atol=1e-14)
    np.testing.assert_allclose(c.data, (1 - s) * cx + s * cy, rtol=0, atol=1e-14)
    if s == 0.0:
        assert np.array_equal(h.data, hx)
    if s == 1.0:
        assert np.array_equal(h.data, hy)


def test_attention_single_position_returns_that_state(tiny_model, rng):
    jitter(tiny_model, rng)
    enc = tiny_model.encode("input_code", (5,))
    out = tiny_model.attend(Tensor(rng.normal(size=(1, TINY.hidden_dim))), enc, "x")
    assert out.weights[0, 0] == 1.0
    np.testing.assert_array_equal(out.context.data, enc.hiddens.data[:, 0])


def test_attention_uniform_when_scores_flat(tiny_model, rng):
    tiny_model["attn_x.v"].data[:] = 0.0
    enc = tiny_model.encode("input_code", (4, 5, 6, 7))
    out = tiny_model.attend(Tensor(rng.normal(size=(1, TINY.hidden_dim))), enc, "x")
    np.testing.assert_allclose(out.weights, 0.25, rtol=0, atol=1e-15)
    np.testing.assert_allclose(out.context.data[0], enc.hiddens.data[0].mean(axis=0), rtol=0, atol=1e-15)


def test_attention_matches_formula(tiny_model, rng):
    jitter(tiny_model, rng)
    P = params_of(tiny_model)
    enc = tiny_model.encode("exemplar_comment", (4, 8, 12))
    d = rng.normal(size=TINY.hidden_dim)
    out = tiny_model.attend(Tensor(d[None]), enc, "y")
    np.testing.assert_allclose(out.context.data[0], ref.attend(P, "y", d, enc.hiddens.data[0]), rtol=0, atol=1e-12)
    assert abs(out.weights.sum() - 1.0) < 1e-15


# decoder and loss ----------------------------------------------------------


@pytest.mark.parametrize("seed", range(5))
def test_step_distributions_match_reference(seed):
    g = np.random.default_rng(seed)
    model = jitter(RefineModel(TINY, seed=seed), g)
    ex = random_example(g)
    got = model.step_distributions(ex)
    want = ref.distributions(params_of(model), ex.code_ids, ex.similar_ids, ex.exemplar_ids, ex.target_ids)
    assert got.shape == (len(ex.target_ids) + 1, TINY.comment_vocab_size)
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_fallback_equals_vanilla_seq2seq(seed):
    g = np.random.default_rng(100 + seed)
    model = jitter(RefineModel(TINY, seed=seed), g)
    ex = random_example(g, exemplar=False)
    got = model.step_distributions(ex)
    want = ref.vanilla_distributions(params_of(model), ex.code_ids, ex.target_ids)
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_fallback_row_in_mixed_batch_ignores_exemplar_side(rng):
    model = jitter(RefineModel(TINY, seed=2), rng)
    plain = random_example(rng, exemplar=False)
    other = random_example(rng)
    batch = Batch.from_examples([plain, other])
    memory, _, _ = model.prepare(batch)
    assert memory.s.data[0, 0] == 0.0
    assert 0.0 < memory.s.data[1, 0] < 1.0
    single = model.forward_loss(plain).item()
    per_row = []
    for ex in (plain, other):
        b = Batch.from_examples([ex])
        per_row.append(model.batch_loss(b).item())
    mixed = model.batch_loss(batch).item()
    assert abs(mixed - sum(per_row)) < 1e-12
    assert abs(single * (len(plain.target_ids) + 1) - per_row[0]) < 1e-12


def test_uniform_output_gives_log_vocab_loss(rng):
    model = RefineModel(TINY, seed=0)
    model["out.W"].data[:] = 0.0
    model["out.b"].data[:] = 0.0
    loss = model.forward_loss(random_example(rng)).item()
    assert abs(loss - math.log(TINY.comment_vocab_size)) < 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_loss_non_negative_and_finite(seed):
    g = np.random.default_rng(seed)
    model = jitter(RefineModel(TINY, seed=seed % 97), g, scale=2.0)
    loss = model.forward_loss(random_example(g)).item()
    assert math.isfinite(loss) and loss >= 0.0


def test_loss_is_mean_negative_log_likelihood(tiny_model, rng):
    jitter(tiny_model, rng)
    ex = random_example(rng)
    rows = ref.distributions(params_of(tiny_model), ex.code_ids, ex.similar_ids, ex.exemplar_ids, ex.target_ids)
    targets = (*ex.target_ids, EOS)
    nll = -np.mean([math.log(rows[t][tok]) for t, tok in enumerate(targets)])
    assert abs(tiny_model.forward_loss(ex).item() - nll) < 1e-12


def test_forward_loss_rejects_empty_target(tiny_model):
    with pytest.raises(ValueError):
        tiny_model.forward_loss(Example((4, 5)))


def test_gradient_spot_check(rng):
    model = jitter(RefineModel(TINY, seed=1), rng)
    ex = random_example(rng)
    model.zero_grad()
    with Tape() as tape:
        loss = model.forward_loss(ex)
    nx.backward(tape, loss)
    h = 1e-6
    for name in ("gate.w", "attn_y.U", "enc_xp.W", "dec.b", "emb.comment"):
        p = model[name]
        flat = p.data.reshape(-1)
        for idx in rng.choice(flat.size, size=4, replace=False):
            orig = flat[idx]
            flat[idx] = orig + h
            up = model.forward_loss(ex).item()
            flat[idx] = orig - h
            down = model.forward_loss(ex).item()
            flat[idx] = orig
            numeric = (up - down) / (2 * h)
            analytic = p.grad.reshape(-1)[idx]
            assert abs(numeric - analytic) <= 1e-6 * max(1.0, abs(numeric)), (name, idx, numeric, analytic)


# decoding ------------------------------------------------------------------


def test_greedy_equals_beam_width_one(rng):
    for seed in range(5):
        model = jitter(RefineModel(TINY, seed=seed), rng)
        ex = random_example(rng, target=False)
        assert model.greedy_decode(ex) == model.beam_search(ex, width=1)


def test_generation_never_emits_pad_or_bos(rng):
    model = RefineModel(TINY, seed=0)
    model["out.b"].data[PAD] = 50.0
    model["out.b"].data[BOS] = 40.0
    ex = random_example(rng, target=False)
    for out in (model.greedy_decode(ex), model.beam_search(ex, width=3)):
        assert PAD not in out and BOS not in out


def test_hypothesis_without_eos_stops_at_max_length(rng):
    model = RefineModel(TINY, seed=0)
    model["out.b"].data[EOS] = -50.0
    ex = random_example(rng, target=False)
    assert len(model.greedy_decode(ex, max_decode_len=4)) == 4
    hyps = model.beam_search_hypotheses(ex, width=3, max_decode_len=4)
    assert all(len(h.tokens) == 4 and h.finished for h in hyps)


def exhaustive_best(P, ex, vocab, max_len):
    """Highest-scoring sequence among all EOS-terminated ones of length <= max_len and
    all unterminated ones of length exactly max_len; ties toward the smaller id tuple."""
    words = [t for t in range(vocab) if t not in (PAD, BOS, EOS)]
    candidates = []
    for n in range(max_len):
        for body in itertools.product(words, repeat=n):
            candidates.append((*body, EOS))
    candidates += list(itertools.product(words, repeat=max_len))
    scored = [(ref.sequence_logprob(P, ex.code_ids, ex.similar_ids, ex.exemplar_ids, c), c) for c in candidates]
    best = min(scored, key=lambda t: (-t[0], t[1]))
    return [t for t in best[1] if t != EOS], best[0]


@pytest.mark.parametrize("seed", range(4))
def test_wide_beam_finds_exhaustive_optimum(seed):
    cfg = ModelConfig(code_vocab_size=10, comment_vocab_size=7, embed_dim=6, hidden_dim=8, max_decode_len=3)
    g = np.random.default_rng(seed)
    model = jitter(RefineModel(cfg, seed=seed), g, scale=1.0)
    ex = random_example(g, cfg, max_len=4, target=False)
    hyps = model.beam_search_hypotheses(ex, width=64, max_decode_len=3)
    want, score = exhaustive_best(params_of(model), ex, cfg.comment_vocab_size, 3)
    assert hyps[0].output == want
    assert abs(hyps[0].score - score) < 1e-10


def test_beam_hypotheses_sorted_and_scores_consistent(rng):
    model = jitter(RefineModel(TINY, seed=5), rng)
    ex = random_example(rng, target=False)
    hyps = model.beam_search_hypotheses(ex, width=4)
    scores = [h.score for h in hyps]
    assert scores == sorted(scores, reverse=True)
    P = params_of(model)
    for h in hyps:
        assert abs(ref.sequence_logprob(P, ex.code_ids, ex.similar_ids, ex.exemplar_ids, h.tokens) - h.score) < 1e-10


def test_beam_rejects_zero_width(tiny_model, rng):
    with pytest.raises(ValueError):
        tiny_model.beam_search(random_example(rng), width=0)


def test_length_penalty_prefers_longer_outputs(rng):
    # with alpha > 0 the normalised score of a finished hypothesis can only improve with length
    model = jitter(RefineModel(TINY, seed=8), rng)
    ex = random_example(rng, target=False)
    base = model.beam_search_hypotheses(ex, width=5, length_penalty=0.0)
    long = model.beam_search_hypotheses(ex, width=5, length_penalty=1.0)
    best = long[0]
    n = max(len(best.output), 1)
    assert all(best.score / n >= h.score / max(len(h.output), 1) - 1e-12 for h in long)
    assert base[0].score >= max(h.score for h in long) - 1e-12


# checkpoints ---------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path, rng):
    model = jitter(RefineModel(TINY, seed=3), rng)
    path = tmp_path / "m.json"
    model.save(path, {"note": "x"})
    again = RefineModel.load(path)
    assert again.config == model.config
    for name in model.params:
        assert np.array_equal(again[name].data, model[name].data)
    ex = random_example(rng, target=False)
    assert again.beam_search(ex, 3) == model.beam_search(ex, 3)


def test_load_state_dict_rejects_mismatch(tiny_model):
    state = tiny_model.state_dict()
    state.pop("gate.b")
    with pytest.raises(ValueError):
        tiny_model.load_state_dict(state)
    state = tiny_model.state_dict()
    state["gate.b"] = np.zeros(3)
    with pytest.raises(ShapeError):
        tiny_model.load_state_dict(state)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(code_vocab_size=0, comment_vocab_size=10)
    with pytest.raises(ValueError):
        ModelConfig(code_vocab_size=10, comment_vocab_size=10, max_decode_len=1)
