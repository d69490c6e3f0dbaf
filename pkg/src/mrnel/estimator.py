"""Scikit-learn style wrapper around the linker.

The estimator consumes Corpus objects (gold labels travel inside the
mentions, so y is unused) and exposes the usual fit/predict/score plus
get_params/set_params so it composes with sklearn tooling.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .corpus import Corpus, split_corpus
from .evaluation import evaluate_corpus
from .model import predict_document
from .params import ModelConfig, init_params
from .training import TrainConfig, fit

__all__ = ["RelationalLinker", "check_corpus"]


def check_corpus(X):
    if not isinstance(X, Corpus):
        raise TypeError(f"expected a Corpus, got {type(X).__name__}")
    if len(X) == 0:
        raise ValueError("corpus is empty")
    return X


class RelationalLinker(BaseEstimator):
    """Multi-relational entity linker with latent relation induction.

    Parameters mirror the model/training configuration; word_embeddings and
    entity_embeddings are frozen EmbeddingTable lookups that must cover the
    corpora passed to fit/predict.
    """

    def __init__(self, word_embeddings=None, entity_embeddings=None,
                 mode="ment-norm", num_relations=3, hidden=100,
                 gamma=0.01, lr_initial=1e-4, lr_reduced=1e-5,
                 dev_f1_switch=None, patience=20, max_epochs=200,
                 lambda1=-1e-7, lambda2=-1e-7, dropout=0.3,
                 lbp_iters=10, lbp_damping=0.5, seed=0):
        self.word_embeddings = word_embeddings
        self.entity_embeddings = entity_embeddings
        self.mode = mode
        self.num_relations = num_relations
        self.hidden = hidden
        self.gamma = gamma
        self.lr_initial = lr_initial
        self.lr_reduced = lr_reduced
        self.dev_f1_switch = dev_f1_switch
        self.patience = patience
        self.max_epochs = max_epochs
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.dropout = dropout
        self.lbp_iters = lbp_iters
        self.lbp_damping = lbp_damping
        self.seed = seed

    def _configs(self):
        model_cfg = ModelConfig(
            dim=self.word_embeddings.dim, num_relations=self.num_relations,
            mode=self.mode, hidden=self.hidden, dropout=self.dropout,
            lbp_iters=self.lbp_iters, lbp_damping=self.lbp_damping)
        train_cfg = TrainConfig(
            gamma=self.gamma, lr_initial=self.lr_initial,
            lr_reduced=self.lr_reduced, dev_f1_switch=self.dev_f1_switch,
            patience=self.patience, max_epochs=self.max_epochs,
            lambda1=self.lambda1, lambda2=self.lambda2, seed=self.seed)
        return model_cfg, train_cfg

    def fit(self, X, y=None, dev=None):
        """Train on corpus X; dev defaults to a held-out 20% tail of X."""
        check_corpus(X)
        if self.word_embeddings is None or self.entity_embeddings is None:
            raise ValueError("word_embeddings and entity_embeddings are required")
        if dev is None:
            train, dev, _ = split_corpus(X, train_frac=0.8, dev_frac=0.2)
        else:
            train = X
        model_cfg, train_cfg = self._configs()
        params = init_params(model_cfg, self.seed, self.word_embeddings,
                             self.entity_embeddings)
        self.params_, self.log_ = fit(train, dev, params, train_cfg)
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("call fit before predict/score")

    def predict(self, X):
        """Entity id per mention, per document (None for empty candidates)."""
        self._check_fitted()
        check_corpus(X)
        out = []
        for doc in X:
            _, result = predict_document(doc, self.params_)
            by_mention = dict(zip((id(m) for m in result.mentions),
                                  result.predictions()))
            out.append([by_mention.get(id(m)) for m in doc.mentions])
        return out

    def score(self, X, y=None):
        """Micro-F1 over linkable mentions."""
        self._check_fitted()
        check_corpus(X)
        report = evaluate_corpus(X, self.params_, mode="lbp")
        return report.micro_f1 if report.micro_f1 is not None else float("nan")
