"""End-to-end training: margin ranking loss, relation-diversity
regularizer, Adam, the epoch loop with dev-F1 early stopping, and a
finite-difference gradient checker.
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field

import numpy as np

from .autograd import GradientError, Tape
from .model import forward_document
from .params import MENT_NORM

__all__ = ["TrainConfig", "AdamState", "ranking_loss", "dist",
           "diversity_regularizer", "adam_step", "fit", "gradient_check",
           "document_loss"]


@dataclass
class TrainConfig:
    gamma: float = 0.01
    lr_initial: float = 1e-4
    lr_reduced: float = 1e-5
    dev_f1_switch: float | None = None   # None: prior-only dev F1 + 0.01
    patience: int = 20
    max_epochs: int = 200
    lambda1: float = -1e-7
    lambda2: float = -1e-7
    seed: int = 0

    def validate(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


def ranking_loss(tape, rho, gold_idx, scored, mask, gamma):
    """Sum over scored mentions and candidates of
    max(0, gamma - rho(gold) + rho(e)).

    The e = gold term is kept and contributes exactly gamma. gold_idx is an
    (n,) int array (-1 when unscored), scored an (n,) bool, mask the (n, C)
    candidate validity. Returns (loss node, scored mention count).
    """
    n, cmax = mask.shape
    if n == 0 or not scored.any():
        return tape.wrap(np.zeros(())), 0
    safe_idx = np.where(scored, gold_idx, 0).reshape(n, 1)
    gold_rho = tape.take_along(rho, safe_idx, axis=1)        # (n, 1)
    hinge = tape.relu(rho - gold_rho + gamma)                # (n, C)
    weight = (mask & scored[:, None]).astype(float)
    loss = tape.sum(hinge * tape.wrap(weight))
    return loss, int(scored.sum())


def dist(tape, x, y):
    """dist(x, y) = || x/|x| - y/|y| ||_2 on L2-normalized vectors.

    Convention for degenerate inputs: two zero vectors are at distance 0,
    a zero vector is at distance 2 from any nonzero vector.
    """
    x, y = tape.wrap(x), tape.wrap(y)
    nx = float(np.linalg.norm(x.value))
    ny = float(np.linalg.norm(y.value))
    if nx == 0.0 and ny == 0.0:
        return tape.wrap(np.zeros(()))
    if nx == 0.0 or ny == 0.0:
        return tape.wrap(np.asarray(2.0))
    xn = tape.div(x, tape.sqrt(tape.dot(x, x)))
    yn = tape.div(y, tape.sqrt(tape.dot(y, y)))
    diff = xn - yn
    return tape.sqrt(tape.dot(diff, diff))


def diversity_regularizer(tape, leaves, lambda1, lambda2):
    """lambda1 sum_{i<j} dist(R_i, R_j) + lambda2 sum_{i<j} dist(D_i, D_j).

    With negative lambdas this rewards pairwise distance, pushing the
    relation embeddings apart instead of letting them collapse.
    """
    R, Dm = leaves["R"], leaves["Dm"]
    k = R.value.shape[0]
    total = tape.wrap(np.zeros(()))
    for i in range(k):
        for j in range(i + 1, k):
            total = total + dist(tape, tape.getitem(R, i),
                                 tape.getitem(R, j)) * lambda1
            total = total + dist(tape, tape.getitem(Dm, i),
                                 tape.getitem(Dm, j)) * lambda2
    return total


def _gold_arrays(result):
    n = len(result.mentions)
    gold_idx = np.full(n, -1, dtype=int)
    scored = np.zeros(n, dtype=bool)
    for i, m in enumerate(result.mentions):
        if m.unlinkable:
            continue
        gi = m.gold_index()
        if gi is not None:
            gold_idx[i] = gi
            scored[i] = True
    return gold_idx, scored


def document_loss(tape, document, params, train_cfg, train=True,
                  dropout_rng=None):
    """Forward one document and assemble ranking loss plus regularizer.

    Returns (total loss node, ranking-loss value, scored count, result).
    """
    result = forward_document(tape, document, params, train=train,
                              dropout_rng=dropout_rng)
    gold_idx, scored = _gold_arrays(result)
    rank, n_scored = ranking_loss(tape, result.rho, gold_idx, scored,
                                  result.mask, train_cfg.gamma)
    reg = diversity_regularizer(tape, result.leaves,
                                train_cfg.lambda1, train_cfg.lambda2)
    return rank + reg, float(rank.value), n_scored, result


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update on the trainable tensors in-place."""
    state.t += 1
    t = state.t
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        state.m[name] = beta1 * state.m[name] + (1 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1 - beta2) * g * g
        m_hat = state.m[name] / (1 - beta1 ** t)
        v_hat = state.v[name] / (1 - beta2 ** t)
        new = getattr(params, name).astype(np.float64) \
            - lr * m_hat / (np.sqrt(v_hat) + eps)
        setattr(params, name, new.astype(np.float32))


def _collect_grads(params, leaves):
    grads = {}
    for name, leaf in leaves.items():
        g = leaf.grad
        if g is None:
            g = np.zeros_like(leaf.value)
        if not np.isfinite(g).all():
            raise GradientError(f"non-finite gradient for {name}")
        grads[name] = g
    return grads


def fit(corpus_train, corpus_dev, params, train_cfg, log_fh=None,
        progress=None):
    """Train with per-document updates and dev-F1 early stopping.

    Shuffles documents each epoch (seeded), applies one Adam step per
    document, evaluates dev micro-F1 with LBP decoding after each epoch,
    drops the learning rate on the first crossing of dev_f1_switch, and
    stops once the dev F1 has not improved for `patience` epochs. Returns
    (best-dev ModelParams, log rows).
    """
    from .evaluation import evaluate_corpus  # local import: no cycle at load

    train_cfg.validate()
    if len(corpus_train) == 0:
        raise ValueError("empty training corpus")

    switch = train_cfg.dev_f1_switch
    if switch is None:
        base = evaluate_corpus(corpus_dev, params, mode="prior-only").micro_f1
        switch = (base or 0.0) + 0.01

    shuffle_rng = np.random.default_rng(train_cfg.seed)
    dropout_rng = np.random.default_rng(train_cfg.seed + 1)
    state = AdamState()
    lr = train_cfg.lr_initial
    switched = False
    best_f1 = -1.0
    best_params = copy.deepcopy(params)
    since_best = 0
    log = []

    for epoch in range(1, train_cfg.max_epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(len(corpus_train.documents))
        epoch_loss = 0.0
        for di in order:
            doc = corpus_train.documents[di]
            tape = Tape()
            loss, rank_val, n_scored, result = document_loss(
                tape, doc, params, train_cfg, train=True,
                dropout_rng=dropout_rng)
            epoch_loss += rank_val
            if n_scored == 0:
                continue
            tape.backward(loss)
            adam_step(params, _collect_grads(params, result.leaves),
                      state, lr)
        dev_f1 = evaluate_corpus(corpus_dev, params, mode="lbp").micro_f1
        dev_f1 = dev_f1 if dev_f1 is not None else 0.0
        seconds = time.perf_counter() - t0
        row = {"epoch": epoch, "loss": epoch_loss, "dev_f1": dev_f1,
               "lr": lr, "seconds": seconds}
        log.append(row)
        if log_fh is not None:
            log_fh.write(f"{epoch},{epoch_loss:.6f},{dev_f1:.6f},"
                         f"{lr:.2e},{seconds:.3f}\n")
        if progress is not None:
            progress(row)
        if not switched and dev_f1 >= switch:
            lr = train_cfg.lr_reduced
            switched = True
        if dev_f1 > best_f1:
            best_f1 = dev_f1
            best_params = copy.deepcopy(params)
            since_best = 0
        else:
            since_best += 1
            if since_best >= train_cfg.patience:
                break
    return best_params, log


def gradient_check(params, documents, train_cfg=None, eps=1e-4,
                   train=False, dropout_seed=None):
    """Compare backward gradients with central finite differences.

    Returns the max of |analytic - numeric| / max(1, |numeric|) over every
    trainable component and document. With train=True a dropout mask is
    held fixed by reseeding the dropout RNG per forward.
    """
    if train_cfg is None:
        train_cfg = TrainConfig()
    worst = 0.0

    def run(p, want_grads):
        tape = Tape(recording=want_grads)
        rng = (np.random.default_rng(dropout_seed)
               if dropout_seed is not None else None)
        loss, _, _, result = document_loss(tape, doc, p, train_cfg,
                                           train=train, dropout_rng=rng)
        if want_grads:
            tape.backward(loss)
            return loss, _collect_grads(p, result.leaves)
        return float(loss.value)

    for doc in documents:
        _, grads = run(params, True)
        for name in grads:
            base = np.asarray(getattr(params, name), dtype=np.float64)
            num = np.zeros_like(base)
            it = np.nditer(base, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                for sign in (1.0, -1.0):
                    p2 = copy.copy(params)
                    arr = base.copy()
                    arr[idx] += sign * eps
                    setattr(p2, name, arr)
                    num[idx] += sign * run(p2, False) / (2 * eps)
            rel = np.abs(grads[name] - num) / np.maximum(1.0, np.abs(num))
            worst = max(worst, float(rel.max()))
    return worst
