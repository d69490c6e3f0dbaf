"""Max-product loopy belief propagation, an exact enumeration oracle, and
the final candidate scoring head.

Messages live in the log domain, are max-normalized to zero after every
synchronous round, and are damped. Because the final beliefs go through a
softmax, the normalization shift is gradient-exact when treated as a
constant (shift invariance), which keeps the unrolled graph small.
"""

from __future__ import annotations

import itertools

import numpy as np

from .score import NEG_INF

__all__ = ["lbp_max_marginals", "exact_max_marginals", "final_scores",
           "decode", "InstanceTooLarge"]

EXACT_LIMIT = 10 ** 7


class InstanceTooLarge(ValueError):
    """Raised when exact enumeration would exceed the assignment limit."""


def _mask_add(mask):
    return np.where(mask, 0.0, NEG_INF)


def lbp_max_marginals(tape, psi, phi, mask, iters=10, damping=0.5):
    """Synchronous max-product LBP on a fully connected instance.

    psi: (N, C) node of local scores; phi: (N, N, C, C) node of ordered-pair
    scores (phi[i, j, a, b] scores e_i=a with e_j=b); mask: (N, C) bool
    validity. The edge potential combines both orderings so beliefs match
    the global objective, which sums over ordered pairs. Returns the (N, C)
    belief-softmax node q_hat.
    """
    n, cmax = mask.shape
    psi = psi + tape.wrap(_mask_add(mask))
    if n > 1:
        # U[i, j, a, b]: total potential of the {i, j} edge
        U = phi + tape.transpose(phi, (1, 0, 3, 2))
        off_diag = tape.wrap((1.0 - np.eye(n))[:, :, None])
        M = tape.wrap(np.zeros((n, n, cmax)))  # M[i, j]: message i -> j
        for _ in range(iters):
            S = tape.sum(M, axis=0)                        # incoming sums
            M_T = tape.transpose(M, (1, 0, 2))             # M_T[i, j] = M[j, i]
            base = psi + S                                 # (N, C)
            scores = (tape.reshape(base, (n, 1, cmax, 1)) + U
                      - tape.reshape(M_T, (n, n, cmax, 1)))
            M_new = tape.max(scores, axis=2)               # max over e_i
            shift = np.max(M_new.value, axis=2, keepdims=True)
            M_new = (M_new - tape.wrap(shift)) * off_diag
            M = M * damping + M_new * (1.0 - damping)
        beliefs = psi + tape.sum(M, axis=0)
    else:
        beliefs = psi
    return tape.softmax(beliefs, axis=1)


def exact_max_marginals(psi, phi, mask):
    """Brute-force max-marginals by full enumeration (plain numpy).

    Same conventions as lbp_max_marginals but operates on arrays; refuses
    instances with more than 10^7 joint assignments.
    """
    n, cmax = mask.shape
    counts = mask.sum(axis=1).astype(int)
    if np.any(counts == 0):
        raise ValueError("every variable needs at least one candidate")
    total = np.prod(counts.astype(float))
    if total > EXACT_LIMIT:
        raise InstanceTooLarge(f"{total:.3g} assignments exceed {EXACT_LIMIT}")

    assignments = np.array(list(itertools.product(
        *[range(c) for c in counts])), dtype=int)        # (M, n)
    scores = np.zeros(len(assignments))
    for i in range(n):
        scores += psi[i, assignments[:, i]]
        for j in range(n):
            if i != j:
                scores += phi[i, j][assignments[:, i], assignments[:, j]]

    beliefs = np.full((n, cmax), NEG_INF)
    for i in range(n):
        row = np.full(counts[i], -np.inf)
        np.maximum.at(row, assignments[:, i], scores)
        beliefs[i, :counts[i]] = row

    shifted = beliefs - beliefs.max(axis=1, keepdims=True)
    q = np.exp(np.where(mask, shifted, -np.inf))
    q = q / q.sum(axis=1, keepdims=True)
    return q, beliefs


def final_scores(tape, qhat, priors, leaves):
    """rho_i(e) = g([q_hat, p_hat]) through the two-layer mixer network."""
    n, cmax = qhat.value.shape
    x = tape.concat([tape.reshape(qhat, (n * cmax, 1)),
                     tape.reshape(tape.wrap(np.asarray(priors, dtype=np.float64)),
                                  (n * cmax, 1))], axis=1)
    h = tape.tanh(tape.matmul(x, tape.transpose(leaves["g_W1"], (1, 0)))
                  + leaves["g_b1"])
    out = tape.matmul(h, tape.reshape(leaves["g_w2"], (-1, 1))) + leaves["g_b2"]
    return tape.reshape(out, (n, cmax))


def decode(rho, mask, ids):
    """Argmax per mention; exact score ties break on ascending entity id.

    Mentions without candidates yield None.
    """
    out = []
    for i in range(mask.shape[0]):
        valid = np.flatnonzero(mask[i])
        if len(valid) == 0:
            out.append(None)
            continue
        row = rho[i, valid]
        best = row.max()
        tied = [ids[i][c] for c in valid[row == best]]
        out.append(min(tied))
    return out
