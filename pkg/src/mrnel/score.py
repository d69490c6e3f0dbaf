"""Potential functions: context mapping, local scores, relation weights
and pairwise bilinear scores.

Everything here is expressed with tape ops so one code path serves both
training (recording tape) and evaluation (non-recording tape).
"""

from __future__ import annotations

import numpy as np

from .params import MENT_NORM, REL_NORM

__all__ = ["NEG_INF", "make_leaves", "pair_context_features", "map_context",
           "candidate_arrays", "local_scores", "alpha_relnorm",
           "alpha_mentnorm", "pairwise_scores"]

# Large finite mask value; true -inf breeds NaNs in backward.
NEG_INF = -1e9


def make_leaves(tape, params):
    """Register every trainable tensor as a float64 tape leaf."""
    return {name: tape.leaf(np.asarray(getattr(params, name), dtype=np.float64),
                            name=name)
            for name in params.trainable_names()}


def _avg_rows(table, tokens):
    if not tokens:
        return np.zeros(table.dim)
    return table.rows(tokens).astype(np.float64).sum(axis=0) / len(tokens)


def pair_context_features(document, params):
    """Raw f-network inputs: [avg left-window words ; avg right-window words].

    Window size is config.pair_window per side; an empty side contributes a
    zero half. Returns a constant (n, 2d) float array.
    """
    cfg = params.config
    w = cfg.pair_window
    rows = []
    for m in document.mentions:
        left = document.tokens[max(0, m.start - w):m.start]
        right = document.tokens[m.end:m.end + w]
        rows.append(np.concatenate([_avg_rows(params.word_emb, left),
                                    _avg_rows(params.word_emb, right)]))
    return np.stack(rows) if rows else np.zeros((0, 2 * cfg.dim))


def map_context(tape, document, params, leaves, train=False, dropout_rng=None):
    """f(m_i, c_i) for all mentions: dropout(tanh(W [avg_l; avg_r] + b)).

    Dropout (inverted, rate config.dropout) is applied only when train=True,
    drawing the mask from dropout_rng.
    """
    ctx = pair_context_features(document, params)  # (n, 2d) constant
    h = tape.tanh(tape.matmul(tape.wrap(ctx), tape.transpose(leaves["f_W"], (1, 0)))
                  + leaves["f_b"])
    if train and params.config.dropout > 0.0:
        rate = params.config.dropout
        mask = (dropout_rng.random(h.value.shape) >= rate) / (1.0 - rate)
        h = h * tape.wrap(mask)
    return h


def candidate_arrays(document, params):
    """Dense per-document candidate tensors.

    Returns (ids, mask, E, priors, counts): ids is an (n, C) list-of-lists of
    entity ids padded with None, mask an (n, C) bool validity array, E the
    (n, C, d) frozen embeddings (zero rows when invalid or unknown), priors
    the (n, C) p_hat values.
    """
    n = len(document.mentions)
    cmax = max((len(m.candidates) for m in document.mentions), default=1)
    cmax = max(cmax, 1)
    d = params.config.dim
    ids = [[None] * cmax for _ in range(n)]
    mask = np.zeros((n, cmax), dtype=bool)
    E = np.zeros((n, cmax, d))
    priors = np.zeros((n, cmax))
    for i, m in enumerate(document.mentions):
        for c, (entity, prior) in enumerate(m.candidates):
            ids[i][c] = entity
            mask[i, c] = True
            vec = params.entity_emb.get(entity)
            if vec is not None:
                E[i, c] = vec
            priors[i, c] = prior
    return ids, mask, E, priors


def local_scores(tape, document, params, leaves, E, mask):
    """Hard-attention local model Psi(e, c) = e^T diag(B) f(c).

    Context words in a config.local_window token window per side are scored
    by u(w) = max_e e^T diag(A) w over the mention's candidates; the top
    config.local_top_words words are kept and softmax-combined into f(c).
    Mentions without context words get an all-zero row.
    """
    cfg = params.config
    n, cmax = mask.shape
    rows = []
    for i, m in enumerate(document.mentions):
        nvalid = int(mask[i].sum())
        lo = max(0, m.start - cfg.local_window)
        hi = min(len(document.tokens), m.end + cfg.local_window)
        toks = document.tokens[lo:m.start] + document.tokens[m.end:hi]
        W = np.stack([params.word_emb.get(t) for t in toks
                      if t in params.word_emb]) if toks else None
        if W is None or len(W) == 0 or nvalid == 0:
            rows.append(tape.wrap(np.zeros((1, cmax))))
            continue
        W = np.asarray(W, dtype=np.float64)
        Ei = tape.wrap(E[i, :nvalid])                       # (c, d) frozen
        scored = tape.matmul(Ei * leaves["A"], tape.wrap(W.T))  # (c, n_w)
        u = tape.max(scored, axis=0)                        # (n_w,)
        if len(W) > cfg.local_top_words:
            keep = np.sort(np.argsort(-u.value)[:cfg.local_top_words])
            u = tape.getitem(u, keep)
            W = W[keep]
        beta = tape.softmax(tape.reshape(u, (1, -1)), axis=1)   # (1, n_w)
        f_ctx = tape.matmul(beta, tape.wrap(W))                 # (1, d)
        psi = tape.matmul(Ei * leaves["B"],
                          tape.transpose(f_ctx, (1, 0)))        # (c, 1)
        psi = tape.transpose(psi, (1, 0))                       # (1, c)
        if nvalid < cmax:
            psi = tape.concat([psi, tape.wrap(np.zeros((1, cmax - nvalid)))],
                              axis=1)
        rows.append(psi)
    if not rows:
        return tape.wrap(np.zeros((0, cmax)))
    return tape.concat(rows, axis=0)


def _bilinear_logits(tape, F_left, F_right, Dm, d):
    """Stacked f_i^T diag(D_k) f_j / sqrt(d) as a (K, n_l, n_r) node."""
    k = Dm.value.shape[0]
    per_k = []
    Ft = tape.transpose(F_right, (1, 0))
    for ki in range(k):
        Dk = tape.getitem(Dm, ki)              # (d,)
        per_k.append(tape.reshape(tape.matmul(F_left * Dk, Ft),
                                  (1,) + (F_left.value.shape[0],
                                          F_right.value.shape[0])))
    logits = tape.concat(per_k, axis=0)
    return logits * (1.0 / np.sqrt(d))


def alpha_relnorm(tape, F, leaves, config):
    """Relation-normalized attention: softmax over k per mention pair.

    Returns an (n, n, K) node; the diagonal i == j is zeroed and excluded.
    """
    n = F.value.shape[0]
    logits = _bilinear_logits(tape, F, F, leaves["Dm"], config.dim)  # (K, n, n)
    alpha = tape.softmax(logits, axis=0)
    alpha = tape.transpose(alpha, (1, 2, 0))                         # (n, n, K)
    off_diag = (1.0 - np.eye(n))[:, :, None]
    return alpha * tape.wrap(off_diag)


def alpha_mentnorm(tape, F, f_pad, leaves, config):
    """Mention-normalized attention: softmax over j (real mentions plus the
    padding mention) per (i, k).

    Returns an (n, n+1, K) node; column n is the padding mention, the i == j
    diagonal is masked out of the normalization and zeroed.
    """
    n = F.value.shape[0]
    F_all = tape.concat([F, tape.reshape(f_pad, (1, -1))], axis=0)   # (n+1, d)
    logits = _bilinear_logits(tape, F, F_all, leaves["Dm"], config.dim)
    diag_mask = np.zeros((1, n, n + 1))
    diag_mask[0, np.arange(n), np.arange(n)] = NEG_INF
    alpha = tape.softmax(logits + tape.wrap(diag_mask), axis=2)      # (K, n, n+1)
    alpha = tape.transpose(alpha, (1, 2, 0))                         # (n, n+1, K)
    zero_diag = np.ones((n, n + 1, 1))
    zero_diag[np.arange(n), np.arange(n), 0] = 0.0
    return alpha * tape.wrap(zero_diag)


def pairwise_scores(tape, alpha, E_all, leaves, config, n_real):
    """Phi(e_i, e_j) = sum_k alpha_ijk e_i^T diag(R_k) e_j.

    E_all is an (N, C, d) node over all variables (N = n_real plus padding
    under ment-norm, where the sender rows beyond n_real contribute zero).
    Returns an (N, N, C, C) node of ordered-pair score tables.
    """
    N, cmax, d = E_all.value.shape
    k = alpha.value.shape[2]
    flat = tape.reshape(E_all, (N * cmax, d))
    flat_t = tape.transpose(flat, (1, 0))
    phi = None
    for ki in range(k):
        Rk = tape.getitem(leaves["R"], ki)
        G = tape.matmul(flat * Rk, flat_t)                    # (N*C, N*C)
        G = tape.reshape(G, (N, cmax, N, cmax))
        G = tape.transpose(G, (0, 2, 1, 3))                   # (N, N, C, C)
        # embed the (n_real, N') alpha block into an (N, N) weight grid
        ak = tape.getitem(alpha, (slice(None), slice(None), ki))  # (n_real, N')
        cols = ak.value.shape[1]
        if cols < N:
            ak = tape.concat([ak, tape.wrap(np.zeros((n_real, N - cols)))],
                             axis=1)
        if n_real < N:
            ak = tape.concat([ak, tape.wrap(np.zeros((N - n_real, N)))], axis=0)
        term = G * tape.reshape(ak, (N, N, 1, 1))
        phi = term if phi is None else phi + term
    return phi
