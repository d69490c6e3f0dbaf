import numpy as np
import pytest

from mrnel.corpus import EmbeddingTable, SynthSpec, gen_synthetic
from mrnel.params import ModelConfig, init_params


@pytest.fixture(scope="session")
def tiny_world():
    """Small deterministic corpus plus embedding tables (d=8)."""
    spec = SynthSpec(num_docs=6, tokens_per_doc=60, num_entities=40,
                     num_mentions_per_doc=4, num_coref_clusters=2,
                     topic_count=5, embedding_dim=8, noise=0.4, seed=13)
    corpus, word_emb, entity_emb, priors = gen_synthetic(spec)
    return spec, corpus, word_emb, entity_emb, priors


@pytest.fixture
def params_factory(tiny_world):
    _, _, word_emb, entity_emb, _ = tiny_world

    def make(mode="ment-norm", num_relations=2, seed=0, **kwargs):
        cfg = ModelConfig(dim=8, num_relations=num_relations, mode=mode,
                          **kwargs)
        return init_params(cfg, seed, word_emb, entity_emb)

    return make


def random_tables(rng, d=4):
    """Embedding tables with random unit rows, for hand-built documents."""
    words = [f"w{i}" for i in range(30)]
    wv = rng.normal(size=(30, d))
    wv /= np.linalg.norm(wv, axis=1, keepdims=True)
    entities = [f"E{i}" for i in range(20)]
    ev = rng.normal(size=(20, d))
    ev /= np.linalg.norm(ev, axis=1, keepdims=True)
    return EmbeddingTable(words, wv), EmbeddingTable(entities, ev)
