"""Flat "key = value" configuration files with flag overrides.

Unknown keys are rejected so typos fail loudly. MRNEL_SEED in the
environment overrides any configured seed.
"""

from __future__ import annotations

import os

from .corpus import SynthSpec
from .params import ModelConfig
from .training import TrainConfig

__all__ = ["ConfigError", "parse_config_file", "build_synth_spec",
           "build_model_config", "build_train_config", "resolve_seed",
           "format_resolved"]


class ConfigError(ValueError):
    """Raised on unparsable config files or unknown keys."""


def parse_config_file(path):
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            values[key.strip()] = value.strip()
    return values


_SYNTH_KEYS = {
    "num_docs": int, "tokens_per_doc": int, "num_entities": int,
    "num_mentions_per_doc": int, "num_coref_clusters": int,
    "topic_count": int, "embedding_dim": int, "noise": float, "seed": int,
}

_MODEL_KEYS = {
    "dim": int, "num_relations": int, "mode": str, "hidden": int,
    "local_window": int, "local_top_words": int, "pair_window": int,
    "dropout": float, "lbp_iters": int, "lbp_damping": float,
}

_TRAIN_KEYS = {
    "gamma": float, "lr_initial": float, "lr_reduced": float,
    "dev_f1_switch": float, "patience": int, "max_epochs": int,
    "lambda1": float, "lambda2": float, "seed": int,
}

# keys a train config file may carry that are consumed elsewhere
_EXTRA_KEYS = {"embeddings": str}


def _build(cls, values, keys, ignore=()):
    kwargs = {}
    for key, value in values.items():
        if key in ignore:
            continue
        if key not in keys:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            kwargs[key] = keys[key](value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r}") from exc
    return cls(**kwargs)


def build_synth_spec(values):
    return _build(SynthSpec, values, _SYNTH_KEYS)


def build_model_config(values):
    known = dict(_MODEL_KEYS)
    ignore = set(values) & (set(_TRAIN_KEYS) | set(_EXTRA_KEYS))
    return _build(ModelConfig, values, known, ignore=ignore)


def build_train_config(values):
    ignore = set(values) & (set(_MODEL_KEYS) | set(_EXTRA_KEYS))
    return _build(TrainConfig, values, _TRAIN_KEYS, ignore=ignore)


def validate_keys(values, allowed):
    for key in values:
        if key not in allowed:
            raise ConfigError(f"unknown config key {key!r}")


def resolve_seed(seed):
    env = os.environ.get("MRNEL_SEED")
    return int(env) if env is not None else seed


def format_resolved(obj):
    """Render a dataclass as sorted "key = value" lines."""
    fields = sorted(vars(obj).items())
    return "\n".join(f"{k} = {v}" for k, v in fields)
