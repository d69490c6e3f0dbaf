"""Multi-relational named-entity linking with latent relations.

Mention-entity assignments are scored by a fully connected pairwise CRF
whose potentials mix bilinear relation scores under learned attention
weights; decoding uses unrolled max-product loopy belief propagation and
everything trains end-to-end from linking supervision.
"""

from .corpus import (Corpus, Document, EmbeddingTable, Mention, SynthSpec,
                     gen_synthetic, load_corpus, select_candidates,
                     split_corpus)
from .estimator import RelationalLinker
from .evaluation import evaluate_corpus, micro_f1, multi_seed_report, oracle_eval
from .params import ModelConfig, ModelParams, init_params, load_checkpoint, save_checkpoint
from .training import TrainConfig, fit, gradient_check

__version__ = "0.1.0"

__all__ = [
    "Corpus", "Document", "Mention", "EmbeddingTable", "SynthSpec",
    "gen_synthetic", "load_corpus", "select_candidates", "split_corpus",
    "RelationalLinker", "evaluate_corpus", "micro_f1", "multi_seed_report",
    "oracle_eval", "ModelConfig", "ModelParams", "init_params",
    "load_checkpoint", "save_checkpoint", "TrainConfig", "fit",
    "gradient_check", "__version__",
]
