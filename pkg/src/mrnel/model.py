"""Per-document forward pass: potentials -> inference -> final scores.

The padding mention (ment-norm) joins the graph as one extra variable with
a single candidate whose embedding is the trainable e_pad; its local score
is zero and it sends no attention-weighted pairwise terms of its own.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tape
from .corpus import Document
from .inference import (decode, exact_max_marginals, final_scores,
                        lbp_max_marginals)
from .params import MENT_NORM
from .score import (alpha_mentnorm, alpha_relnorm, candidate_arrays,
                    local_scores, make_leaves, map_context, pairwise_scores)

__all__ = ["ForwardResult", "forward_document", "predict_document",
           "prior_only_predict"]


@dataclass
class ForwardResult:
    tape: Tape
    leaves: dict
    rho: object            # (n, C) node of final scores
    qhat: object           # (n, C) node over real mentions
    alpha: object          # attention node, axis layout per mode
    ids: list              # (n, C) entity ids, None-padded
    mask: np.ndarray       # (n, C) candidate validity
    priors: np.ndarray     # (n, C)
    mentions: list         # the scored Mention objects, graph order
    skipped: int           # mentions dropped for empty candidate lists

    def predictions(self):
        return decode(self.rho.value, self.mask, self.ids)


def forward_document(tape, document, params, train=False, dropout_rng=None,
                     inference="lbp"):
    """Run the full model on one document.

    Mentions with empty candidate lists cannot enter the CRF and are
    skipped (counted in the result). inference is "lbp" or "exact".
    """
    cfg = params.config
    kept = [m for m in document.mentions if m.candidates]
    skipped = len(document.mentions) - len(kept)
    view = Document(doc_id=document.doc_id, tokens=document.tokens,
                    mentions=kept)
    leaves = make_leaves(tape, params)
    n = len(kept)
    if n == 0:
        zero = tape.wrap(np.zeros((0, 1)))
        return ForwardResult(tape, leaves, zero, zero, zero, [],
                             np.zeros((0, 1), dtype=bool),
                             np.zeros((0, 1)), [], skipped)

    ids, mask, E, priors = candidate_arrays(view, params)
    cmax = mask.shape[1]
    psi = local_scores(tape, view, params, leaves, E, mask)
    F = map_context(tape, view, params, leaves, train=train,
                    dropout_rng=dropout_rng)

    if cfg.mode == MENT_NORM:
        alpha = alpha_mentnorm(tape, F, leaves["f_pad"], leaves, cfg)
        pad_row = tape.concat(
            [tape.reshape(leaves["e_pad"], (1, 1, cfg.dim)),
             tape.wrap(np.zeros((1, cmax - 1, cfg.dim)))], axis=1) \
            if cmax > 1 else tape.reshape(leaves["e_pad"], (1, 1, cfg.dim))
        E_all = tape.concat([tape.wrap(E), pad_row], axis=0)
        mask_all = np.vstack([mask, [True] + [False] * (cmax - 1)])
        psi_all = tape.concat([psi, tape.wrap(np.zeros((1, cmax)))], axis=0)
    else:
        alpha = alpha_relnorm(tape, F, leaves, cfg)
        E_all = tape.wrap(E)
        mask_all = mask
        psi_all = psi

    phi = pairwise_scores(tape, alpha, E_all, leaves, cfg, n_real=n)

    if inference == "lbp":
        qhat_all = lbp_max_marginals(tape, psi_all, phi, mask_all,
                                     iters=cfg.lbp_iters,
                                     damping=cfg.lbp_damping)
        qhat = tape.getitem(qhat_all, slice(0, n))
    elif inference == "exact":
        q, _ = exact_max_marginals(psi_all.value, phi.value, mask_all)
        qhat = tape.wrap(q[:n])
    else:
        raise ValueError(f"unknown inference mode {inference!r}")

    rho = final_scores(tape, qhat, priors, leaves)
    return ForwardResult(tape, leaves, rho, qhat, alpha, ids, mask, priors,
                         kept, skipped)


def predict_document(document, params, inference="lbp"):
    """Forward-only prediction: {mention -> entity id or None}."""
    tape = Tape(recording=False)
    result = forward_document(tape, document, params, inference=inference)
    preds = result.predictions()
    return dict(zip(range(len(result.mentions)), preds)), result


def prior_only_predict(document):
    """Baseline decoder: argmax p_hat, ties on ascending entity id."""
    preds = []
    for m in document.mentions:
        if not m.candidates:
            preds.append(None)
            continue
        best = max(p for _, p in m.candidates)
        preds.append(min(e for e, p in m.candidates if p == best))
    return preds
