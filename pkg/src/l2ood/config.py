"""Experiment configuration: nested dataclasses that round-trip through JSON.

A config file is a JSON object with optional sections ``model``, ``train``,
``data``, ``ood``, ``rules``, ``analysis`` and ``output_dir``. Missing keys
take the defaults below. A run manifest (which embeds the resolved config
under ``"config"``) is accepted wherever a config file is.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .datasets import SyntheticSpec
from .errors import ConfigError
from .model import ModelConfig
from .ood import RULES
from .trainer import TrainConfig


@dataclass(frozen=True)
class ModelSection:
    hidden_dims: tuple[int, ...] = (64, 64)
    feature_dim: int = 64
    leaky_slope: float = 0.01
    normalize: bool = True
    epsilon: float = 1e-12
    use_bias: bool = True


@dataclass(frozen=True)
class DataSection:
    source: str = "synthetic"  # or "image_binary"
    synthetic: SyntheticSpec = field(default_factory=lambda: SyntheticSpec(
        num_classes=8, input_dim=64, mean_radius=5.0, noise_sigma=1.25,
        samples_per_class=1000, seed=0))
    held_out_classes: int = 4
    train_fraction: float = 0.6   # synthetic only: share of the ID pool used for training
    val_fraction: float = 0.1     # share of the pool (synthetic) or of the test file (images)
    train_path: str | None = None
    test_path: str | None = None


@dataclass(frozen=True)
class AnalysisSection:
    cv_trajectory: bool = True
    feature_change: bool = True
    groups: str = "quantile:4"
    group_source: str = "train"  # or "test"
    bins: bool = True
    bin_count: int = 125
    bin_mode: str = "equal_count"
    norm_distributions: bool = True
    norm_vs_softmax: bool = True
    collapse: bool = True
    collapse_every: int = 10


DEFAULT_TRAIN = TrainConfig(epochs=100, batch_size=128, base_lr=0.005, lr_step_epochs=(70, 85),
                            lr_gamma=0.1, momentum=0.9, weight_decay=0.0, seed=0,
                            checkpoint_every=1)


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = DEFAULT_TRAIN
    data: DataSection = field(default_factory=DataSection)
    ood: tuple[str, ...] = ("held_out_classes", "gaussian_noise", "permuted_id")
    rules: tuple[str, ...] = ("feature_norm", "max_softmax", "max_logit", "logit_norm")
    analysis: AnalysisSection = field(default_factory=AnalysisSection)
    output_dir: str = "runs/default"

    def __post_init__(self):
        object.__setattr__(self, "ood", tuple(self.ood))
        object.__setattr__(self, "rules", tuple(self.rules))
        for r in self.rules:
            if r not in RULES:
                raise ConfigError(f"unknown scoring rule {r!r}")
        if self.data.source not in ("synthetic", "image_binary"):
            raise ConfigError(f"unknown data source {self.data.source!r}")
        if self.data.source == "image_binary" and "held_out_classes" in self.ood:
            raise ConfigError("held_out_classes OoD needs synthetic data")
        f = self.data.train_fraction + self.data.val_fraction
        if not (0 < self.data.train_fraction < 1 and 0 <= self.data.val_fraction and f < 1):
            raise ConfigError("train_fraction + val_fraction must leave a test split")

    def model_config(self) -> ModelConfig:
        if self.data.source == "synthetic":
            d_in, k = self.data.synthetic.input_dim, self.data.synthetic.num_classes
        else:
            d_in, k = 3072, 10
        m = self.model
        return ModelConfig(d_in, m.hidden_dims, m.feature_dim, k, m.leaky_slope,
                           m.normalize, m.epsilon, m.use_bias)

    def with_overrides(self, *, seed=None, normalize=None, output_dir=None,
                       bins=None, groups=None) -> "ExperimentConfig":
        cfg = self
        if seed is not None:
            cfg = dataclasses.replace(
                cfg, train=dataclasses.replace(cfg.train, seed=seed),
                data=dataclasses.replace(cfg.data, synthetic=dataclasses.replace(
                    cfg.data.synthetic, seed=seed)))
        if normalize is not None:
            cfg = dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, normalize=normalize))
        if output_dir is not None:
            cfg = dataclasses.replace(cfg, output_dir=str(output_dir))
        if bins is not None:
            cfg = dataclasses.replace(cfg, analysis=dataclasses.replace(cfg.analysis, bin_count=bins))
        if groups is not None:
            cfg = dataclasses.replace(cfg, analysis=dataclasses.replace(cfg.analysis, groups=groups))
        return cfg

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        if "model" in d:
            kw["model"] = _build(ModelSection, d["model"])
        if "train" in d:
            kw["train"] = _build(TrainConfig, {**dataclasses.asdict(DEFAULT_TRAIN), **d["train"]})
        if "data" in d:
            data = dict(d["data"])
            if "synthetic" in data:
                base = dataclasses.asdict(DataSection().synthetic)
                data["synthetic"] = _build(SyntheticSpec, {**base, **data["synthetic"]})
            kw["data"] = _build(DataSection, data)
        if "analysis" in d:
            kw["analysis"] = _build(AnalysisSection, d["analysis"])
        for key in ("ood", "rules", "output_dir"):
            if key in d:
                kw[key] = d[key]
        try:
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def _build(klass, values: dict):
    names = {f.name for f in dataclasses.fields(klass)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown keys for {klass.__name__}: {sorted(unknown)}")
    try:
        return klass(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{klass.__name__}: {exc}") from exc


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if isinstance(raw, dict) and "config" in raw and "artifacts" in raw:
        raw = raw["config"]
    return ExperimentConfig.from_dict(raw)


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"
