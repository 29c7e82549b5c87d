"""Run configuration: dataclass sections, file loading and flag overrides.

Precedence is defaults < config file < command-line flags. ``TOPICFLOW_SEED`` supplies
the seed when neither the file nor the flags set one.
"""
from __future__ import annotations

import dataclasses
import json
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .training import TrainConfig


@dataclass
class CorpusSection:
    min_count: int = 1
    stopwords: str | None = None
    bow_max_size: int | None = None
    bow_keep_punct: bool = False
    n_max: int = 256
    m_max: int = 64


@dataclass
class NtmSection:
    n_topics: int = 100
    d_z: int | None = None
    ntm_hidden: int = 256
    flow_length: int = 4
    theta_mode: str = "mean"


@dataclass
class ModelSection:
    layers_enc: int = 2
    layers_dec: int = 2
    d_model: int = 128
    heads: int = 4
    ffn_dim: int = 256
    max_positions: int = 512
    dropout: float = 0.1
    tie_embeddings: bool = True
    use_topic: bool = True
    force_gate: float | None = None


@dataclass
class DecodeSection:
    beam: int = 8
    decode_max_len: int = 64
    length_penalty: float = 1.0
    window: int = 110
    k: int = 10
    result_aggregate: str = "mean"


@dataclass
class PathSection:
    data: str | None = None
    valid: str | None = None
    test: str | None = None
    vocab_dir: str | None = None
    out_dir: str = "run"
    checkpoint: str | None = None
    ntm_checkpoint: str | None = None
    outputs: str | None = None
    refs: str | None = None
    out: str | None = None


SECTIONS = {
    "corpus": CorpusSection,
    "ntm": NtmSection,
    "model": ModelSection,
    "training": TrainConfig,
    "decode": DecodeSection,
    "paths": PathSection,
}


@dataclass
class RunConfig:
    corpus: CorpusSection = field(default_factory=CorpusSection)
    ntm: NtmSection = field(default_factory=NtmSection)
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainConfig = field(default_factory=TrainConfig)
    decode: DecodeSection = field(default_factory=DecodeSection)
    paths: PathSection = field(default_factory=PathSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def field_index() -> dict[str, tuple[str, dataclasses.Field, type]]:
    """flag name -> (section, field, resolved type); field names are unique across sections."""
    out = {}
    for sec, cls in SECTIONS.items():
        hints = typing.get_type_hints(cls)
        for f in dataclasses.fields(cls):
            if f.name in out:
                raise RuntimeError(f"duplicate config field {f.name}")
            out[f.name] = (sec, f, hints[f.name])
    return out


def base_type(tp) -> tuple[type, bool]:
    """(scalar type, optional?) for annotations like ``int | None``."""
    args = typing.get_args(tp)
    if args and type(None) in args:
        inner = [a for a in args if a is not type(None)][0]
        return inner, True
    return tp, False


def parse_value(text: str, tp):
    scalar, optional = base_type(tp)
    if optional and text.lower() in ("none", "null", ""):
        return None
    if scalar is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    return scalar(text)


def load_file(path) -> dict:
    path = Path(path)
    if path.suffix.lower() == ".json":
        return json.loads(path.read_text("utf-8"))
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # python < 3.11
            import tomli as tomllib
        return tomllib.loads(path.read_text("utf-8"))
    raise ValueError(f"{path}: config must be .toml or .json")


def build_config(file_values: dict | None = None, overrides: dict | None = None,
                 env: typing.Mapping[str, str] | None = None) -> RunConfig:
    env = os.environ if env is None else env
    index = field_index()
    values: dict[str, dict] = {sec: {} for sec in SECTIONS}
    for sec, body in (file_values or {}).items():
        if sec not in SECTIONS:
            raise ValueError(f"unknown config section [{sec}]")
        for key, val in body.items():
            if key not in index or index[key][0] != sec:
                raise ValueError(f"unknown config field {sec}.{key}")
            values[sec][key] = val
    if "seed" not in values["training"] and env.get("TOPICFLOW_SEED"):
        values["training"]["seed"] = int(env["TOPICFLOW_SEED"])
    for key, val in (overrides or {}).items():
        values[index[key][0]][key] = val
    return RunConfig(**{sec: cls(**values[sec]) for sec, cls in SECTIONS.items()})
