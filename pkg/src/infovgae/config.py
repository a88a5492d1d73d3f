"""Run configuration: one YAML file, validated in full before any work starts.

Grammar (every key optional unless marked)::

    seed: 0                     # required integer
    output: out                 # output directory
    data:
      edges: edges.tsv          # edge-list TSV, or
      rollcall:                 # roll-call CSVs (exactly one of edges/rollcall)
        members: members.csv
        votes: votes.csv
        parties: [D, R]
        reject_unknown: true
      labels: labels.tsv
      ideology: ideology.tsv
      min_degree: 1
      exclude_from_target: []
    model: {latent_dim: 3, hidden_dims: [32], rectified: true}
    train: {epochs: 500, lr_vae: 0.01, ...}   # any TrainConfig field except seed
    analysis: {k_axes: 2}

Relative paths resolve against the directory holding the config file.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields

import yaml

from .model import ModelConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


DATA_KEYS = {"edges", "rollcall", "labels", "ideology", "min_degree", "exclude_from_target"}
ROLLCALL_KEYS = {"members", "votes", "parties", "reject_unknown"}
ANALYSIS_KEYS = {"k_axes"}
TOP_KEYS = {"seed", "output", "data", "model", "train", "analysis"}


@dataclass
class DataConfig:
    edges: str | None = None
    rollcall: dict | None = None
    labels: str | None = None
    ideology: str | None = None
    min_degree: int = 1
    exclude_from_target: list = field(default_factory=list)


@dataclass
class RunConfig:
    seed: int
    output: str
    data: DataConfig
    model: ModelConfig
    train: TrainConfig
    k_axes: int = 2
    source: str | None = None

    def echo(self) -> dict:
        """Plain-dict view for checkpoints; paths are left out so output is relocatable."""
        from dataclasses import asdict
        return {"seed": self.seed, "model": asdict(self.model), "train": asdict(self.train),
                "k_axes": self.k_axes}


def _section(raw, name, allowed):
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"'{name}' must be a mapping")
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in '{name}': {', '.join(unknown)}")
    return dict(raw)


def _resolve(base, path, key, must_exist=True):
    if not isinstance(path, str) or not path:
        raise ConfigError(f"'{key}' must be a non-empty path")
    full = path if os.path.isabs(path) else os.path.join(base, path)
    if must_exist and not os.path.exists(full):
        raise ConfigError(f"'{key}' path does not exist: {full}")
    return full


def _build(cls, raw, name):
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid '{name}' section: {exc}") from None


def _check_types(raw, cls, name):
    for f in fields(cls):
        if f.name not in raw:
            continue
        v = raw[f.name]
        default = f.default if f.default is not f.default_factory else None
        if isinstance(default, bool) and not isinstance(v, bool):
            raise ConfigError(f"'{name}.{f.name}' must be true or false")
        if isinstance(default, (int, float)) and not isinstance(default, bool):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"'{name}.{f.name}' must be a number")
            if isinstance(default, float):
                raw[f.name] = float(v)


def parse_config(raw: dict, base_dir: str = ".", source=None) -> RunConfig:
    top = _section(raw, "<top level>", TOP_KEYS)
    if "seed" not in top:
        raise ConfigError("'seed' is required")
    seed = top["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("'seed' must be a non-negative integer")

    data_raw = _section(top.get("data"), "data", DATA_KEYS)
    if ("edges" in data_raw) == ("rollcall" in data_raw):
        raise ConfigError("'data' needs exactly one of 'edges' or 'rollcall'")
    if "edges" in data_raw:
        data_raw["edges"] = _resolve(base_dir, data_raw["edges"], "data.edges")
    else:
        rc = _section(data_raw["rollcall"], "data.rollcall", ROLLCALL_KEYS)
        for key in ("members", "votes"):
            if key not in rc:
                raise ConfigError(f"'data.rollcall.{key}' is required")
            rc[key] = _resolve(base_dir, rc[key], f"data.rollcall.{key}")
        data_raw["rollcall"] = rc
    for key in ("labels", "ideology"):
        if data_raw.get(key) is not None:
            data_raw[key] = _resolve(base_dir, data_raw[key], f"data.{key}")
    _check_types(data_raw, DataConfig, "data")
    data = _build(DataConfig, data_raw, "data")

    model_raw = _section(top.get("model"), "model", {f.name for f in fields(ModelConfig)})
    _check_types(model_raw, ModelConfig, "model")
    model = _build(ModelConfig, model_raw, "model")

    train_keys = {f.name for f in fields(TrainConfig)} - {"seed"}
    train_raw = _section(top.get("train"), "train", train_keys)
    _check_types(train_raw, TrainConfig, "train")
    train = _build(TrainConfig, dict(train_raw, seed=seed), "train")

    analysis = _section(top.get("analysis"), "analysis", ANALYSIS_KEYS)
    k_axes = analysis.get("k_axes", 2)
    if isinstance(k_axes, bool) or not isinstance(k_axes, int) or not 1 <= k_axes <= model.latent_dim:
        raise ConfigError(f"'analysis.k_axes' must be an integer in [1, {model.latent_dim}]")

    output = _resolve(base_dir, top.get("output", "out"), "output", must_exist=False)
    return RunConfig(seed=seed, output=output, data=data, model=model, train=train,
                     k_axes=k_axes, source=source)


def load_config(path) -> RunConfig:
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return parse_config(raw, os.path.dirname(os.path.abspath(path)), source=path)
