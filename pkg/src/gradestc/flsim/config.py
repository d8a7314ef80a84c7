"""Experiment configuration and its YAML representation.

Example file::

    seed: 0
    rounds: 100
    n_clients: 10
    participation_fraction: 1.0
    local_epochs: 1
    batch_size: 32
    learning_rate: 0.05
    aggregation: uniform          # or "samples"
    accuracy_threshold: 0.8       # for the uplink-at-threshold metric
    partition: {kind: dirichlet, alpha: 0.5}
    data: {samples: 4000, test_samples: 1000, features: 32, classes: 4}
    model: {variant: mlp, hidden: 64, init_seed: 0}
    codecs:
      default: {kind: none}
      fc1.weight: {kind: gradestc, k: 8, l: 64}
      fc2.weight: {kind: gradestc, k: 8}

Any layer not named under ``codecs`` takes ``default``. ``data`` may
instead point at files: ``{csv: train.csv, test_csv: test.csv}`` or
``{idx_images: ..., idx_labels: ..., test_idx_images: ..., test_idx_labels: ...}``.
"""
from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..errors import ConfigError
from .codecs import CodecSpec
from .data import MixtureSpec
from .models import ModelSpec


@dataclass
class PartitionSpec:
    kind: str = "iid"
    alpha: float | None = None

    def __post_init__(self):
        if self.kind not in ("iid", "dirichlet"):
            raise ConfigError(f"unknown partition kind {self.kind!r}")
        if self.kind == "dirichlet" and (self.alpha is None or self.alpha <= 0):
            raise ConfigError("dirichlet partition needs alpha > 0")


@dataclass
class DataSpec:
    mixture: MixtureSpec = field(default_factory=MixtureSpec)
    files: dict | None = None


@dataclass
class SimConfig:
    n_clients: int = 10
    participation_fraction: float = 1.0
    rounds: int = 100
    local_epochs: int = 1
    batch_size: int = 32
    learning_rate: float = 0.05
    seed: int = 0
    partition: PartitionSpec = field(default_factory=PartitionSpec)
    data: DataSpec = field(default_factory=DataSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    codecs: dict[str, CodecSpec] = field(default_factory=dict)
    default_codec: CodecSpec = field(default_factory=CodecSpec)
    aggregation: str = "uniform"
    accuracy_threshold: float | None = None

    def __post_init__(self):
        if self.n_clients < 1 or self.rounds < 0 or self.local_epochs < 0 or self.batch_size < 1:
            raise ConfigError("n_clients, batch_size must be positive; rounds, local_epochs non-negative")
        if not 0 < self.participation_fraction <= 1:
            raise ConfigError("participation_fraction must be in (0, 1]")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.aggregation not in ("uniform", "samples"):
            raise ConfigError(f"unknown aggregation {self.aggregation!r}")

    def codec_for(self, layer: str) -> CodecSpec:
        return self.codecs.get(layer, self.default_codec)

    def resolve_codecs(self, layer_names) -> dict[str, CodecSpec]:
        """One codec per model layer; unknown layer names are an error."""
        names = list(layer_names)
        unknown = set(self.codecs) - set(names)
        if unknown:
            raise ConfigError(f"codecs assigned to unknown layers: {sorted(unknown)}")
        return {name: self.codec_for(name) for name in names}

    def with_codecs(self, **overrides) -> "SimConfig":
        cfg = copy.deepcopy(self)
        for layer, spec in overrides.items():
            cfg.codecs[layer] = spec
        return cfg

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(copy.deepcopy(self), **changes)

    def to_dict(self) -> dict:
        out = {
            f.name: getattr(self, f.name)
            for f in dataclasses.fields(self)
            if f.name not in ("partition", "data", "model", "codecs", "default_codec")
        }
        out["partition"] = dataclasses.asdict(self.partition)
        out["data"] = dict(self.data.files) if self.data.files else dataclasses.asdict(self.data.mixture)
        out["model"] = dataclasses.asdict(self.model)
        codecs = {"default": dataclasses.asdict(self.default_codec)}
        codecs.update({k: dataclasses.asdict(v) for k, v in self.codecs.items()})
        out["codecs"] = codecs
        return out


_FILE_KEYS = {"csv", "test_csv", "idx_images", "idx_labels", "test_idx_images", "test_idx_labels"}


def _build(cls, raw, what):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{what} must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    extra = set(raw) - names
    if extra:
        raise ConfigError(f"unknown {what} keys: {sorted(extra)}")
    return cls(**raw)


def config_from_dict(raw: dict, base_dir: Path | None = None) -> SimConfig:
    raw = dict(raw or {})
    partition = _build(PartitionSpec, raw.pop("partition", None), "partition")
    model = _build(ModelSpec, raw.pop("model", None), "model")

    data_raw = dict(raw.pop("data", None) or {})
    files = {k: data_raw.pop(k) for k in list(data_raw) if k in _FILE_KEYS}
    if files and base_dir is not None:
        files = {k: str((base_dir / v).resolve()) for k, v in files.items()}
    data = DataSpec(mixture=_build(MixtureSpec, data_raw, "data"), files=files or None)
    if not files:
        model.features = data.mixture.features
        model.classes = data.mixture.classes

    codecs_raw = dict(raw.pop("codecs", None) or {})
    default = _build(CodecSpec, codecs_raw.pop("default", None), "codec")
    codecs = {name: _build(CodecSpec, spec, f"codec {name}") for name, spec in codecs_raw.items()}

    names = {f.name for f in dataclasses.fields(SimConfig)}
    extra = set(raw) - names
    if extra:
        raise ConfigError(f"unknown config keys: {sorted(extra)}")
    return SimConfig(partition=partition, data=data, model=model, codecs=codecs, default_codec=default, **raw)


def load_config(path) -> SimConfig:
    path = Path(path)
    with path.open() as fh:
        raw = yaml.safe_load(fh)
    return config_from_dict(raw, base_dir=path.parent)


def dump_config(cfg: SimConfig, path) -> None:
    with Path(path).open("w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)
