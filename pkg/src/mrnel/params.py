"""Trainable parameter storage, initialization and checkpointing.

All diagonal matrices are kept as d-vectors. Tensors are float32 so that
checkpoints (little-endian f32) round-trip bit-exactly; the forward and
backward passes upcast to float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .corpus import EmbeddingTable

__all__ = ["ModelConfig", "ModelParams", "CheckpointError", "init_params",
           "save_checkpoint", "load_checkpoint", "param_count"]

MAGIC = b"MRNEL1"
REL_NORM = "rel-norm"
MENT_NORM = "ment-norm"


class CheckpointError(IOError):
    """Raised on unreadable, truncated or mismatching checkpoints."""


@dataclass
class ModelConfig:
    dim: int = 32
    num_relations: int = 3
    mode: str = MENT_NORM          # "rel-norm" | "ment-norm"
    hidden: int = 100              # width of the q/p mixer network
    local_window: int = 50         # context tokens per side for local scores
    local_top_words: int = 25      # words kept by hard attention
    pair_window: int = 6           # context tokens per side for f
    dropout: float = 0.3
    lbp_iters: int = 10
    lbp_damping: float = 0.5

    def validate(self):
        if self.dim <= 0:
            raise ValueError("dim must be positive")
        if self.num_relations <= 0:
            raise ValueError("num_relations must be positive")
        if self.mode not in (REL_NORM, MENT_NORM):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.hidden <= 0:
            raise ValueError("hidden must be positive")


@dataclass
class ModelParams:
    config: ModelConfig
    word_emb: EmbeddingTable       # frozen
    entity_emb: EmbeddingTable     # frozen
    A: np.ndarray                  # (d,) local attention diagonal
    B: np.ndarray                  # (d,) local score diagonal
    R: np.ndarray                  # (K, d) relation diagonals
    Dm: np.ndarray                 # (K, d) attention-weight diagonals
    f_W: np.ndarray                # (d, 2d) context mapping weights
    f_b: np.ndarray                # (d,)
    g_W1: np.ndarray               # (hidden, 2) mixer layer 1
    g_b1: np.ndarray               # (hidden,)
    g_w2: np.ndarray               # (hidden,) mixer layer 2
    g_b2: np.ndarray               # (1,)
    f_pad: np.ndarray              # (d,) padding mention feature (ment-norm)
    e_pad: np.ndarray              # (d,) padding entity embedding (ment-norm)
    seed: int = 0

    TRAINABLE = ("A", "B", "R", "Dm", "f_W", "f_b",
                 "g_W1", "g_b1", "g_w2", "g_b2", "f_pad", "e_pad")

    def trainable_names(self):
        names = list(self.TRAINABLE)
        if self.config.mode == REL_NORM:
            names.remove("f_pad")
            names.remove("e_pad")
        return names

    def tensors(self):
        out = {name: getattr(self, name) for name in self.TRAINABLE}
        out["word_emb"] = self.word_emb.vectors
        out["entity_emb"] = self.entity_emb.vectors
        return out

    def equals(self, other):
        if self.config != other.config:
            return False
        a, b = self.tensors(), other.tensors()
        return all(np.array_equal(a[k], b[k]) for k in a)


def param_count(config):
    """Number of trainable scalars, excluding the frozen embedding tables."""
    d, k, h = config.dim, config.num_relations, config.hidden
    n = 2 * d               # A, B
    n += 2 * k * d          # R, Dm
    n += d * 2 * d + d      # f_W, f_b
    n += h * 2 + h + h + 1  # g_W1, g_b1, g_w2, g_b2
    if config.mode == MENT_NORM:
        n += 2 * d          # f_pad, e_pad
    return n


def _xavier(rng, shape):
    fan_in, fan_out = shape[1], shape[0]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_params(config, seed, word_emb, entity_emb):
    """Draw initial parameters.

    Relation and attention diagonals start at N(0, 0.1^2); under ment-norm
    the first relation diagonal starts at N(1, 0.1^2) so it begins close to
    the coherence-only identity relation. Mapping/mixer weights use the
    balanced-variance uniform init with zero biases.
    """
    config.validate()
    d, k = config.dim, config.num_relations
    if word_emb.dim != d or entity_emb.dim != d:
        raise ValueError("embedding dimension does not match config.dim")
    rng = np.random.default_rng(seed)

    def f32(x):
        return np.asarray(x, dtype=np.float32)

    R = rng.normal(0.0, 0.1, size=(k, d))
    if config.mode == MENT_NORM:
        R[0] = rng.normal(1.0, 0.1, size=d)
    Dm = rng.normal(0.0, 0.1, size=(k, d))

    return ModelParams(
        config=config,
        word_emb=word_emb,
        entity_emb=entity_emb,
        A=f32(rng.normal(1.0, 0.1, size=d)),
        B=f32(rng.normal(1.0, 0.1, size=d)),
        R=f32(R),
        Dm=f32(Dm),
        f_W=f32(_xavier(rng, (d, 2 * d))),
        f_b=f32(np.zeros(d)),
        g_W1=f32(_xavier(rng, (config.hidden, 2))),
        g_b1=f32(np.zeros(config.hidden)),
        g_w2=f32(_xavier(rng, (1, config.hidden))[0]),
        g_b2=f32(np.zeros(1)),
        f_pad=f32(rng.normal(0.0, 0.1, size=d)),
        e_pad=f32(rng.normal(0.0, 0.1, size=d)),
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Checkpoint format: MAGIC, u32 metadata length, metadata "key=value" lines,
# u32 tensor count, then (u32 name_len, name, u32 ndims, u32 dims..., f32 data).
# Little-endian throughout.
# ---------------------------------------------------------------------------

def save_checkpoint(params, path):
    cfg = params.config
    meta = {
        "version": "1",
        "mode": cfg.mode,
        "dim": str(cfg.dim),
        "num_relations": str(cfg.num_relations),
        "hidden": str(cfg.hidden),
        "local_window": str(cfg.local_window),
        "local_top_words": str(cfg.local_top_words),
        "pair_window": str(cfg.pair_window),
        "dropout": repr(cfg.dropout),
        "lbp_iters": str(cfg.lbp_iters),
        "lbp_damping": repr(cfg.lbp_damping),
        "seed": str(params.seed),
        "word_vocab": "\t".join(params.word_emb.names),
        "entity_vocab": "\t".join(params.entity_emb.names),
    }
    meta_blob = "".join(f"{k}={v}\n" for k, v in meta.items()).encode("utf-8")
    tensors = params.tensors()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(meta_blob)))
        fh.write(meta_blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            blob = name.encode("utf-8")
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def _read_exact(fh, n, what):
    blob = fh.read(n)
    if len(blob) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return blob


def load_checkpoint(path, expect_config=None):
    with open(path, "rb") as fh:
        if _read_exact(fh, len(MAGIC), "magic") != MAGIC:
            raise CheckpointError("bad magic bytes; not a MRNEL1 checkpoint")
        (meta_len,) = struct.unpack("<I", _read_exact(fh, 4, "metadata length"))
        meta = {}
        for line in _read_exact(fh, meta_len, "metadata").decode("utf-8").splitlines():
            key, _, value = line.partition("=")
            meta[key] = value
        if meta.get("version") != "1":
            raise CheckpointError(f"unsupported version {meta.get('version')!r}")
        (n_tensors,) = struct.unpack("<I", _read_exact(fh, 4, "tensor count"))
        tensors = {}
        for _ in range(n_tensors):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4, "name length"))
            name = _read_exact(fh, name_len, "tensor name").decode("utf-8")
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4, "ndims"))
            dims = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, "dims"))
            count = int(np.prod(dims)) if ndim else 1
            data = _read_exact(fh, 4 * count, f"tensor {name}")
            tensors[name] = np.frombuffer(data, dtype="<f4").reshape(dims).copy()

    config = ModelConfig(
        dim=int(meta["dim"]),
        num_relations=int(meta["num_relations"]),
        mode=meta["mode"],
        hidden=int(meta["hidden"]),
        local_window=int(meta["local_window"]),
        local_top_words=int(meta["local_top_words"]),
        pair_window=int(meta["pair_window"]),
        dropout=float(meta["dropout"]),
        lbp_iters=int(meta["lbp_iters"]),
        lbp_damping=float(meta["lbp_damping"]),
    )
    if expect_config is not None:
        for attr in ("dim", "num_relations", "mode", "hidden"):
            if getattr(expect_config, attr) != getattr(config, attr):
                raise CheckpointError(
                    f"checkpoint {attr}={getattr(config, attr)!r} does not "
                    f"match expected {getattr(expect_config, attr)!r}")

    expected = {"A": (config.dim,), "B": (config.dim,),
                "R": (config.num_relations, config.dim),
                "Dm": (config.num_relations, config.dim),
                "f_W": (config.dim, 2 * config.dim), "f_b": (config.dim,),
                "g_W1": (config.hidden, 2), "g_b1": (config.hidden,),
                "g_w2": (config.hidden,), "g_b2": (1,),
                "f_pad": (config.dim,), "e_pad": (config.dim,)}
    for name, shape in expected.items():
        if name not in tensors:
            raise CheckpointError(f"missing tensor {name}")
        if tensors[name].shape != shape:
            raise CheckpointError(f"tensor {name} has shape "
                                  f"{tensors[name].shape}, expected {shape}")

    word_vocab = meta["word_vocab"].split("\t") if meta["word_vocab"] else []
    entity_vocab = meta["entity_vocab"].split("\t") if meta["entity_vocab"] else []
    word_emb = EmbeddingTable(word_vocab, tensors["word_emb"])
    entity_emb = EmbeddingTable(entity_vocab, tensors["entity_emb"])

    return ModelParams(
        config=config, word_emb=word_emb, entity_emb=entity_emb,
        seed=int(meta.get("seed", "0")),
        **{name: tensors[name] for name in ModelParams.TRAINABLE})
