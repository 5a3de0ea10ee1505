"""YAML experiment configs with strict key checking.

A config has five top-level keys::

    dataset:
      name: rotated_moons      # rotated_moons | shifted_blobs | idx
      n: 500
      noise: 0.1
      angle: 45
      seed: 0
    model:
      generator_hidden: [32]
      feature_dim: 32
      head_hidden: [32]
    train:                     # any TrainConfig field except variant
      lam: 0.1
      k: 4
    output_dir: runs/moons
    variants: [source_only, mmen]

Errors carry the file name, line and dotted field path.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import yaml

from .data import DomainPair, load_idx, make_rotated_moons_pair, make_shifted_blobs
from .trainer import VARIANTS, ModelConfig, TrainConfig

__all__ = ["ConfigError", "DatasetConfig", "ExperimentConfig", "load_config", "parse_config", "OUTPUT_DIR_ENV"]

OUTPUT_DIR_ENV = "MMEN_OUTPUT_DIR"


class ConfigError(ValueError):
    def __init__(self, source: str, line: Optional[int], field: str, message: str):
        self.source, self.line, self.field = source, line, field
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {field}: {message}" if field else f"{where}: {message}")


# Per dataset: field -> (type, default, lower bound). A default of ... means required.
_DATASETS = {
    "rotated_moons": {
        "n": (int, 500, 2),
        "noise": (float, 0.1, 0.0),
        "angle": (float, 45.0, None),
        "seed": (int, 0, 0),
    },
    "shifted_blobs": {
        "n_classes": (int, 12, 2),
        "n_per_class": (int, 50, 1),
        "shift": (list, ..., None),
        "spread": (float, 1.0, 0.0),
        "seed": (int, 0, 0),
        "target_noise_seed": (int, None, 0),
    },
    "idx": {
        "source_images": (str, ..., None),
        "source_labels": (str, ..., None),
        "target_images": (str, ..., None),
        "target_labels": (str, ..., None),
        "max_source": (int, None, 1),
        "max_target": (int, None, 1),
        "downsample_to": (int, None, 1),
        "n_classes": (int, 10, 2),
    },
}

_TOP_KEYS = ("dataset", "model", "train", "output_dir", "variants")


@dataclass(frozen=True)
class DatasetConfig:
    name: str
    params: dict

    def build(self) -> DomainPair:
        p = self.params
        if self.name == "rotated_moons":
            return make_rotated_moons_pair(p["n"], p["noise"], p["angle"], p["seed"])
        if self.name == "shifted_blobs":
            return make_shifted_blobs(
                p["n_classes"], p["n_per_class"], p["shift"], p["spread"], p["seed"], p["target_noise_seed"]
            )
        src = load_idx(p["source_images"], p["source_labels"], p["max_source"], p["downsample_to"],
                       "source", p["n_classes"])
        tgt = load_idx(p["target_images"], p["target_labels"], p["max_target"], p["downsample_to"],
                       "target", p["n_classes"])
        return DomainPair(src, tgt)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig
    model: ModelConfig
    train: TrainConfig
    output_dir: Path
    variants: tuple


class _Reader:
    """Walks a composed YAML tree, remembering line numbers for diagnostics."""

    def __init__(self, source: str):
        self.source = source

    def fail(self, node, field, message):
        line = node.start_mark.line + 1 if node is not None else None
        raise ConfigError(self.source, line, field, message)

    def mapping(self, node, field, allowed) -> dict:
        if not isinstance(node, yaml.MappingNode):
            self.fail(node, field, "expected a mapping")
        out = {}
        for key_node, value_node in node.value:
            key = key_node.value
            path = f"{field}.{key}" if field else key
            if key not in allowed:
                self.fail(key_node, path, f"unknown key (allowed: {', '.join(allowed)})")
            if key in out:
                self.fail(key_node, path, "duplicate key")
            out[key] = value_node
        return out

    def scalar(self, node, field, kind, lower=None):
        value = yaml.safe_load(yaml.serialize(node)) if node is not None else None
        if kind is list:
            if not isinstance(value, list) or not all(_is_number(v) for v in value):
                self.fail(node, field, "expected a list of numbers")
            return [float(v) for v in value]
        if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
            self.fail(node, field, f"expected an integer, got {value!r}")
        if kind is float:
            if not _is_number(value):
                self.fail(node, field, f"expected a number, got {value!r}")
            value = float(value)
        if kind is str and not isinstance(value, str):
            self.fail(node, field, f"expected a string, got {value!r}")
        if kind is bool and not isinstance(value, bool):
            self.fail(node, field, f"expected true/false, got {value!r}")
        if lower is not None and value < lower:
            self.fail(node, field, f"must be >= {lower}, got {value}")
        return value

    def int_list(self, node, field):
        if not isinstance(node, yaml.SequenceNode):
            self.fail(node, field, "expected a list of integers")
        return tuple(self.scalar(item, field, int, 1) for item in node.value)


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def parse_config(text: str, source: str = "<config>", base_dir: Optional[Path] = None) -> ExperimentConfig:
    """Parse config text; relative IDX paths and output_dir resolve against ``base_dir``."""
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(source, mark.line + 1 if mark else None, "", f"YAML syntax error: {exc}") from None
    r = _Reader(source)
    if root is None:
        raise ConfigError(source, None, "", "config is empty")
    top = r.mapping(root, "", _TOP_KEYS)
    for key in ("dataset", "variants"):
        if key not in top:
            r.fail(root, key, "required key is missing")

    dataset = _parse_dataset(r, top["dataset"], base_dir)
    model = _parse_model(r, top.get("model"))
    train = _parse_train(r, top.get("train"))

    variants_node = top["variants"]
    if not isinstance(variants_node, yaml.SequenceNode) or not variants_node.value:
        r.fail(variants_node, "variants", "expected a non-empty list")
    variants = []
    for item in variants_node.value:
        name = r.scalar(item, "variants", str)
        if name not in VARIANTS:
            r.fail(item, "variants", f"unknown variant {name!r} (allowed: {', '.join(VARIANTS)})")
        if name in variants:
            r.fail(item, "variants", f"variant {name!r} listed twice")
        variants.append(name)

    out = r.scalar(top["output_dir"], "output_dir", str) if "output_dir" in top else "runs"
    env = os.environ.get(OUTPUT_DIR_ENV)
    output_dir = Path(env) if env else base_dir / out
    return ExperimentConfig(dataset, model, train, output_dir, tuple(variants))


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), None, "", f"cannot read config: {exc.strerror}") from None
    return parse_config(text, str(path), path.parent)


def _parse_dataset(r: _Reader, node, base_dir: Path) -> DatasetConfig:
    if not isinstance(node, yaml.MappingNode):
        r.fail(node, "dataset", "expected a mapping")
    name_node = next((v for k, v in node.value if k.value == "name"), None)
    if name_node is None:
        r.fail(node, "dataset.name", "required key is missing")
    name = r.scalar(name_node, "dataset.name", str)
    if name not in _DATASETS:
        r.fail(name_node, "dataset.name", f"unknown dataset (allowed: {', '.join(_DATASETS)})")
    schema = _DATASETS[name]
    raw = r.mapping(node, "dataset", ("name",) + tuple(schema))
    params = {}
    for key, (kind, default, lower) in schema.items():
        field = f"dataset.{key}"
        if key not in raw:
            if default is ...:
                r.fail(node, field, "required key is missing")
            params[key] = default
            continue
        value = r.scalar(raw[key], field, kind, lower)
        if kind is str:
            value = base_dir / value
            if not value.exists():
                r.fail(raw[key], field, f"file not found: {value}")
        params[key] = value
    if name == "shifted_blobs" and len(params["shift"]) < 2:
        r.fail(raw["shift"], "dataset.shift", "needs at least 2 components")
    return DatasetConfig(name, params)


def _parse_model(r: _Reader, node) -> ModelConfig:
    if node is None:
        return ModelConfig()
    raw = r.mapping(node, "model", ("generator_hidden", "feature_dim", "head_hidden"))
    kwargs = {}
    for key in ("generator_hidden", "head_hidden"):
        if key in raw:
            kwargs[key] = r.int_list(raw[key], f"model.{key}")
    if "feature_dim" in raw:
        kwargs["feature_dim"] = r.scalar(raw["feature_dim"], "model.feature_dim", int, 1)
    return ModelConfig(**kwargs)


_TRAIN_KINDS = {f.name: type(f.default) for f in fields(TrainConfig) if f.name != "variant"}


def _parse_train(r: _Reader, node) -> TrainConfig:
    if node is None:
        return TrainConfig()
    raw = r.mapping(node, "train", tuple(_TRAIN_KINDS))
    kwargs = {key: r.scalar(value, f"train.{key}", _TRAIN_KINDS[key]) for key, value in raw.items()}
    try:
        return TrainConfig(**kwargs)
    except ValueError as exc:
        r.fail(node, "train", str(exc))
