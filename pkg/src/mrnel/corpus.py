"""Corpus data model, file I/O, candidate selection and synthetic data.

A corpus is a list of tokenized documents; each document carries mentions
with gold entities and candidate lists holding prior probabilities
p_hat(e|m). The synthetic generator plants topical coherence and local
context cues so that priors alone are insufficient to disambiguate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CorpusError", "Mention", "Document", "Corpus", "EmbeddingTable",
    "SynthSpec", "load_corpus", "save_corpus", "load_prior_table",
    "save_prior_table", "select_candidates", "reinsert_gold",
    "apply_candidate_selection", "gen_synthetic", "split_corpus",
    "save_embeddings", "load_embeddings", "DEFAULT_SYNTH_SPEC",
]

MAX_CANDIDATES = 7


class CorpusError(ValueError):
    """Raised on malformed corpus or prior-table input."""


@dataclass
class Mention:
    start: int
    end: int  # exclusive token index
    surface: str
    gold: str | None
    candidates: list[tuple[str, float]]  # sorted by prior desc, entity id asc
    unlinkable: bool = False

    def candidate_ids(self):
        return [e for e, _ in self.candidates]

    def gold_index(self):
        for i, (e, _) in enumerate(self.candidates):
            if e == self.gold:
                return i
        return None


@dataclass
class Document:
    doc_id: str
    tokens: list[str]
    mentions: list[Mention]

    def linkable_mentions(self):
        return [m for m in self.mentions if not m.unlinkable]


@dataclass
class Corpus:
    documents: list[Document] = field(default_factory=list)

    def __len__(self):
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)

    def num_mentions(self):
        return sum(len(d.mentions) for d in self.documents)


class EmbeddingTable:
    """Immutable name -> vector lookup backed by a dense matrix."""

    def __init__(self, names, vectors):
        vectors = np.asarray(vectors)
        if len(names) != vectors.shape[0]:
            raise ValueError("names/vectors length mismatch")
        self.names = list(names)
        self.vectors = vectors
        self._index = {n: i for i, n in enumerate(self.names)}

    @property
    def dim(self):
        return self.vectors.shape[1]

    def __contains__(self, name):
        return name in self._index

    def __getitem__(self, name):
        return self.vectors[self._index[name]]

    def get(self, name, default=None):
        i = self._index.get(name)
        return self.vectors[i] if i is not None else default

    def rows(self, names, missing="zero"):
        """Stack vectors for `names`; unknown names become zero rows."""
        out = np.zeros((len(names), self.dim), dtype=self.vectors.dtype)
        for i, n in enumerate(names):
            j = self._index.get(n)
            if j is not None:
                out[i] = self.vectors[j]
            elif missing == "error":
                raise KeyError(n)
        return out


def _sort_candidates(cands):
    return sorted(cands, key=lambda c: (-c[1], c[0]))


def _finish_mention(m):
    """Apply the linkability rule: gold must exist and be in candidates."""
    m.candidates = _sort_candidates(m.candidates)
    m.unlinkable = (
        m.gold is None
        or not m.candidates
        or all(e != m.gold for e, _ in m.candidates)
    )
    return m


def load_corpus(path):
    """Read a JSONL corpus file; validates spans, priors and doc ids."""
    documents = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {lineno}: invalid JSON: {exc}") from exc
            try:
                doc = _parse_document(obj)
            except CorpusError as exc:
                raise CorpusError(f"line {lineno}: {exc}") from exc
            if doc.doc_id in seen:
                raise CorpusError(f"line {lineno}: duplicate doc_id {doc.doc_id!r}")
            seen.add(doc.doc_id)
            documents.append(doc)
    return Corpus(documents)


def _parse_document(obj):
    doc_id = obj.get("doc_id")
    tokens = obj.get("tokens")
    if not isinstance(doc_id, str) or not isinstance(tokens, list):
        raise CorpusError("doc_id must be a string and tokens a list")
    mentions = []
    for mo in obj.get("mentions", []):
        start, end = mo.get("start"), mo.get("end")
        if not (isinstance(start, int) and isinstance(end, int)
                and 0 <= start < end <= len(tokens)):
            raise CorpusError(f"mention span [{start}, {end}) out of bounds "
                              f"for {len(tokens)} tokens")
        cands = []
        for co in mo.get("candidates", []):
            prior = float(co["prior"])
            if not 0.0 <= prior <= 1.0:
                raise CorpusError(f"prior {prior} outside [0, 1]")
            cands.append((str(co["entity"]), prior))
        if len(cands) > MAX_CANDIDATES:
            raise CorpusError(f"{len(cands)} candidates exceed the "
                              f"{MAX_CANDIDATES}-candidate limit")
        mentions.append(_finish_mention(Mention(
            start=start, end=end, surface=str(mo.get("surface", "")),
            gold=mo.get("gold"), candidates=cands)))
    mentions.sort(key=lambda m: m.start)
    return Document(doc_id=doc_id, tokens=tokens, mentions=mentions)


def save_corpus(corpus, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for doc in corpus:
            obj = {
                "doc_id": doc.doc_id,
                "tokens": doc.tokens,
                "mentions": [
                    {
                        "start": m.start, "end": m.end, "surface": m.surface,
                        "gold": m.gold,
                        "candidates": [{"entity": e, "prior": p}
                                       for e, p in m.candidates],
                    }
                    for m in doc.mentions
                ],
            }
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def load_prior_table(path):
    """TSV lines "surface<TAB>entity<TAB>prior" -> {surface: [(entity, prior)]}."""
    table = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise CorpusError(f"line {lineno}: expected 3 tab-separated fields")
            surface, entity, prior = parts[0], parts[1], float(parts[2])
            if not 0.0 <= prior <= 1.0:
                raise CorpusError(f"line {lineno}: prior {prior} outside [0, 1]")
            table.setdefault(surface, []).append((entity, prior))
    for surface in table:
        table[surface] = _sort_candidates(table[surface])
    return table


def save_prior_table(table, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for surface in sorted(table):
            for entity, prior in table[surface]:
                fh.write(f"{surface}\t{entity}\t{prior:.17g}\n")


def select_candidates(mention, document, prior_table, word_embeddings,
                      entity_embeddings, context_window=50,
                      top_by_prior=30, keep_prior=4, keep_context=3):
    """Prune a mention's candidate pool to at most 7 entries.

    Takes the 30 highest-prior entities for the surface, then keeps the 4
    best by prior plus the 3 best by e^T (sum of word vectors in the
    surrounding 50-token window), deduplicated. Order of the input pool
    does not matter; ties break on ascending entity id.
    """
    pool = prior_table.get(mention.surface)
    if not pool:
        return []
    pool = _sort_candidates(pool)[:top_by_prior]

    by_prior = pool[:keep_prior]

    lo = max(0, mention.start - context_window)
    hi = min(len(document.tokens), mention.end + context_window)
    ctx = np.zeros(entity_embeddings.dim)
    for tok in document.tokens[lo:mention.start] + document.tokens[mention.end:hi]:
        vec = word_embeddings.get(tok)
        if vec is not None:
            ctx = ctx + vec

    def ctx_score(entity):
        vec = entity_embeddings.get(entity)
        return float(vec @ ctx) if vec is not None else float("-inf")

    by_context = sorted(pool, key=lambda c: (-ctx_score(c[0]), c[0]))[:keep_context]

    chosen = {}
    for entity, prior in by_prior + by_context:
        chosen.setdefault(entity, prior)
    return _sort_candidates(list(chosen.items()))


def reinsert_gold(candidates, gold, prior_table_row):
    """Training-time gold recovery: replace the lowest-ranked candidate."""
    if any(e == gold for e, _ in candidates):
        return candidates
    gold_prior = next((p for e, p in prior_table_row if e == gold), 0.0)
    kept = candidates[:-1] if candidates else []
    return _sort_candidates(kept + [(gold, gold_prior)])


def apply_candidate_selection(corpus, prior_table, word_embeddings,
                              entity_embeddings, for_training=False,
                              **select_kwargs):
    """Re-run candidate selection over a corpus in place.

    With for_training=True a pruned gold entity is re-inserted in place of
    the lowest-ranked kept candidate; at evaluation time pruning the gold
    counts as an error (the mention becomes unlinkable).
    """
    for doc in corpus:
        for m in doc.mentions:
            cands = select_candidates(m, doc, prior_table, word_embeddings,
                                      entity_embeddings, **select_kwargs)
            if for_training and m.gold is not None and cands:
                cands = reinsert_gold(cands, m.gold,
                                      prior_table.get(m.surface, []))
            m.candidates = cands
            _finish_mention(m)
    return corpus


def save_embeddings(path, word_table, entity_table):
    np.savez(path,
             word_names=np.array(word_table.names),
             word_vectors=word_table.vectors,
             entity_names=np.array(entity_table.names),
             entity_vectors=entity_table.vectors)


def load_embeddings(path):
    with np.load(path, allow_pickle=False) as z:
        word = EmbeddingTable([str(n) for n in z["word_names"]],
                              z["word_vectors"])
        entity = EmbeddingTable([str(n) for n in z["entity_names"]],
                                z["entity_vectors"])
    return word, entity


# ---------------------------------------------------------------------------
# Synthetic corpora
# ---------------------------------------------------------------------------

@dataclass
class SynthSpec:
    num_docs: int = 200
    tokens_per_doc: int = 120
    num_entities: int = 500
    num_mentions_per_doc: int = 8
    num_coref_clusters: int = 3
    topic_count: int = 20
    embedding_dim: int = 32
    noise: float = 0.4
    seed: int = 0

    def validate(self):
        for name in ("num_docs", "tokens_per_doc", "num_entities",
                     "num_mentions_per_doc", "num_coref_clusters",
                     "topic_count", "embedding_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")


DEFAULT_SYNTH_SPEC = SynthSpec()

_NUM_FILLER_WORDS = 200


def _unit(v):
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def gen_synthetic(spec):
    """Deterministic synthetic corpus with planted structure.

    Entities cluster into topics with correlated embeddings; documents draw
    coreference clusters of same-topic entities; every entity's surface is
    ambiguous with off-topic distractors, and a noise-controlled fraction of
    surfaces has a wrong top-prior candidate, so context and coherence are
    needed to beat the prior-only baseline. Roughly a third of mentions get
    no local cue words and are resolvable only through coherence.

    Returns (corpus, word_embeddings, entity_embeddings, prior_table).
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    d = spec.embedding_dim

    centers = np.stack([_unit(rng.normal(size=d)) for _ in range(spec.topic_count)])

    entity_names = [f"e{i:04d}" for i in range(spec.num_entities)]
    entity_topic = np.array([i % spec.topic_count for i in range(spec.num_entities)])
    entity_vecs = np.stack([
        _unit(centers[entity_topic[i]] + 0.4 * rng.normal(size=d))
        for i in range(spec.num_entities)
    ])

    sig_names = [f"w{i:04d}" for i in range(spec.num_entities)]
    sig_vecs = np.stack([_unit(entity_vecs[i] + 0.3 * rng.normal(size=d))
                         for i in range(spec.num_entities)])
    topic_names = [f"t{j:02d}" for j in range(spec.topic_count)]
    topic_vecs = np.stack([_unit(centers[j] + 0.2 * rng.normal(size=d))
                           for j in range(spec.topic_count)])
    filler_names = [f"x{j:03d}" for j in range(_NUM_FILLER_WORDS)]
    filler_vecs = np.stack([_unit(rng.normal(size=d))
                            for _ in range(_NUM_FILLER_WORDS)])
    surface_names = [f"s{i:04d}" for i in range(spec.num_entities)]
    surface_vecs = np.stack([_unit(rng.normal(size=d))
                             for _ in range(spec.num_entities)])

    word_table = EmbeddingTable(
        sig_names + topic_names + filler_names + surface_names,
        np.concatenate([sig_vecs, topic_vecs, filler_vecs, surface_vecs])
        .astype(np.float32))
    entity_table = EmbeddingTable(entity_names, entity_vecs.astype(np.float32))

    # Prior table: each entity owns one surface, shared with 3-5 off-topic
    # distractors. A noise-scaled fraction of surfaces ranks a distractor on
    # top, which the model has to overrule via context/coherence.
    prior_table = {}
    for i in range(spec.num_entities):
        n_distract = int(rng.integers(3, 6))
        distractors = []
        while len(distractors) < n_distract:
            j = int(rng.integers(spec.num_entities))
            if j != i and entity_topic[j] != entity_topic[i] \
                    and j not in distractors:
                distractors.append(j)
        flawed = rng.random() < 0.5 * spec.noise
        if flawed:
            gold_prior = 0.30 + 0.05 * rng.random()
            top_prior = 0.40 + 0.05 * rng.random()
        else:
            gold_prior = 0.55 + 0.10 * rng.random()
            top_prior = None
        rest = 1.0 - gold_prior - (top_prior or 0.0)
        weights = rng.random(n_distract - (1 if flawed else 0)) + 0.2
        weights = rest * weights / weights.sum()
        entries = [(entity_names[i], float(gold_prior))]
        di = 0
        if flawed:
            entries.append((entity_names[distractors[0]], float(top_prior)))
            di = 1
        for w, j in zip(weights, distractors[di:]):
            entries.append((entity_names[j], float(min(w, gold_prior * 0.99))))
        prior_table[surface_names[i]] = _sort_candidates(entries)

    documents = []
    block = max(3, spec.tokens_per_doc // spec.num_mentions_per_doc)
    for doc_idx in range(spec.num_docs):
        topic = int(rng.integers(spec.topic_count))
        topic_entities = np.flatnonzero(entity_topic == topic)
        n_clusters = min(spec.num_coref_clusters, len(topic_entities))
        clusters = rng.choice(topic_entities, size=n_clusters, replace=False)
        golds = [int(clusters[m % n_clusters])
                 for m in range(spec.num_mentions_per_doc)]

        tokens, mentions = [], []
        for gold in golds:
            context_poor = rng.random() < 0.35
            before, after = [], []
            for side in (before, after):
                for _ in range((block - 1) // 2):
                    r = rng.random()
                    if context_poor or r < 0.35:
                        side.append(filler_names[int(rng.integers(_NUM_FILLER_WORDS))])
                    elif r < 0.8:
                        side.append(sig_names[gold])
                    else:
                        side.append(topic_names[topic])
            tokens.extend(before)
            pos = len(tokens)
            tokens.append(surface_names[gold])
            tokens.extend(after)
            mentions.append(_finish_mention(Mention(
                start=pos, end=pos + 1, surface=surface_names[gold],
                gold=entity_names[gold],
                candidates=list(prior_table[surface_names[gold]]))))
        documents.append(Document(doc_id=f"synth{doc_idx:04d}",
                                  tokens=tokens, mentions=mentions))

    return Corpus(documents), word_table, entity_table, prior_table


def split_corpus(corpus, train_frac=0.6, dev_frac=0.2):
    """Deterministic contiguous train/dev/test split."""
    n = len(corpus)
    n_train = int(round(n * train_frac))
    n_dev = int(round(n * dev_frac))
    docs = corpus.documents
    return (Corpus(docs[:n_train]),
            Corpus(docs[n_train:n_train + n_dev]),
            Corpus(docs[n_train + n_dev:]))
