"""Plain-numpy re-implementation of the refine network, used as a test oracle.

Written from the architecture description, not from the package code: one
example at a time, no tape, no batching, no masking tricks.
"""

import numpy as np

PAD, BOS, EOS = 0, 1, 2


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def softmax(e):
    z = np.exp(e - e.max())
    return z / z.sum()


def lstm(W, b, x, h, c):
    H = h.shape[0]
    z = np.concatenate([x, h]) @ W + b
    i, f, g, o = sigmoid(z[:H]), sigmoid(z[H : 2 * H]), np.tanh(z[2 * H : 3 * H]), sigmoid(z[3 * H :])
    c = f * c + i * g
    return o * np.tanh(c), c


def encode(P, prefix, table, ids):
    H = P[prefix + ".b"].shape[0] // 4
    h, c = np.zeros(H), np.zeros(H)
    states = []
    for t in ids:
        h, c = lstm(P[prefix + ".W"], P[prefix + ".b"], P[table][t], h, c)
        states.append(h)
    return np.array(states).reshape(len(ids), H), h, c


def attend(P, which, d, states):
    if len(states) == 0:
        return np.zeros_like(d)
    e = np.array([P[f"attn_{which}.v"][:, 0] @ np.tanh(P[f"attn_{which}.W"].T @ d + P[f"attn_{which}.U"].T @ s) for s in states])
    return softmax(e) @ states


def distributions(P, code, similar, exemplar, target):
    """Teacher-forced per-step softmax rows for one example; an empty exemplar gives vanilla seq2seq."""
    xs, hx, cx = encode(P, "enc_x", "emb.code", code)
    if exemplar:
        _, hxp, _ = encode(P, "enc_xp", "emb.code", similar)
        ys, hy, cy = encode(P, "enc_y", "emb.comment", exemplar)
        s = sigmoid(np.concatenate([hx, hxp]) @ P["gate.w"][:, 0] + P["gate.b"][0])
        h, c = (1 - s) * hx + s * hy, (1 - s) * cx + s * cy
    else:
        h, c = hx, cx
    rows = []
    for prev in (BOS, *target):
        ctx = attend(P, "x", h, xs)
        if exemplar:
            ctx = (1 - s) * ctx + s * attend(P, "y", h, ys)
        h, c = lstm(P["dec.W"], P["dec.b"], np.concatenate([P["emb.comment"][prev], ctx]), h, c)
        rows.append(softmax(h @ P["out.W"] + P["out.b"]))
    return np.array(rows)


def vanilla_distributions(P, code, target):
    """Attention seq2seq using only the x-side parameters and the decoder."""
    xs, h, c = encode(P, "enc_x", "emb.code", code)
    rows = []
    for prev in (BOS, *target):
        ctx = attend(P, "x", h, xs)
        h, c = lstm(P["dec.W"], P["dec.b"], np.concatenate([P["emb.comment"][prev], ctx]), h, c)
        rows.append(softmax(h @ P["out.W"] + P["out.b"]))
    return np.array(rows)


def sequence_logprob(P, code, similar, exemplar, tokens):
    """Sum of log-probs of ``tokens`` (which may or may not end in EOS)."""
    rows = distributions(P, code, similar, exemplar, tuple(tokens[:-1]))
    return float(sum(np.log(rows[t][tok]) for t, tok in enumerate(tokens)))
