"""Flat, human-editable pipeline configuration (JSON text).

Keys follow the hyperparameter names of the method; command-line flags
override file values and the effective configuration is echoed into every
report.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .audio import FeatureConfig
from .autoencoder import NetworkConfig
from .clustering import TrainConfig
from .errors import ConfigError

# flat key -> (section, field)
KEYS = {
    "sample_rate": ("feature", "sample_rate"),
    "frame_length_ms": ("feature", "frame_ms"),
    "frame_hop_ms": ("feature", "hop_ms"),
    "mel_bands": ("feature", "n_mels"),
    "mfcc_dim": ("feature", "n_mfcc"),
    "log_floor": ("feature", "log_floor"),
    "clip_seconds": ("feature", "clip_seconds"),
    "input_rows": ("network", None),
    "conv_channels": ("network", "conv_channels"),
    "kernel_size": ("network", "kernel_size"),
    "conv_strides": ("network", "conv_strides"),
    "primary_grid": ("network", "primary_grid"),
    "primary_capsule_types": ("network", "primary_types"),
    "primary_capsule_dim": ("network", "primary_dim"),
    "class_capsules": ("network", "class_capsules"),
    "class_capsule_dim": ("network", "class_dim"),
    "fc_neurons": ("network", "fc_width"),
    "deconv_channels": ("network", "deconv_channels"),
    "activation": ("network", "activation"),
    "routing_iterations": ("network", "routing_iterations"),
    "squash_variant": ("network", "squash_variant"),
    "precision": ("network", "precision"),
    "alpha": ("train", "alpha"),
    "epsilon": ("train", "epsilon"),
    "pretrain_iterations": ("train", "pretrain_iterations"),
    "max_iterations": ("train", "max_iterations"),
    "batch_size": ("train", "batch_size"),
    "learning_rate": ("train", "learning_rate"),
    "optimizer": ("train", "optimizer"),
    "target_update_interval": ("train", "target_update_interval"),
    "n_clusters": ("train", "n_clusters"),
    "kmeans_restarts": ("train", "kmeans_restarts"),
    "kl_reduction": ("train", "kl_reduction"),
    "joint_unit": ("train", "joint_unit"),
    "inference_batch_size": ("train", "inference_batch_size"),
    "seed": ("train", "seed"),
    "nmi_normalization": (None, "nmi_normalization"),
}


@dataclass
class PipelineConfig:
    feature: FeatureConfig = field(default_factory=FeatureConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    nmi_normalization: str = "arithmetic"

    def to_flat(self) -> dict:
        sections = {
            "feature": self.feature.to_dict(),
            "network": self.network.to_dict(),
            "train": self.train.to_dict(),
        }
        out = {}
        for key, (section, name) in KEYS.items():
            if section is None:
                out[key] = getattr(self, name)
            elif key == "input_rows":
                out[key] = self.network.input_shape[0]
            else:
                out[key] = sections[section][name]
        return out

    @classmethod
    def from_flat(cls, flat: dict) -> "PipelineConfig":
        unknown = sorted(set(flat) - set(KEYS))
        if unknown:
            raise ConfigError(f"unknown configuration keys: {unknown}")
        sections: dict = {"feature": {}, "network": {}, "train": {}}
        extra = {}
        for key, value in flat.items():
            section, name = KEYS[key]
            if section is None:
                extra[name] = value
            elif name is not None:
                sections[section][name] = value
        feature = FeatureConfig.from_dict(sections["feature"])
        rows = flat.get("input_rows", NetworkConfig().input_shape[0])
        sections["network"]["input_shape"] = (rows, feature.n_mfcc)
        try:
            cfg = cls(feature, NetworkConfig.from_dict(sections["network"]),
                      TrainConfig.from_dict(sections["train"]), **extra)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        if cfg.nmi_normalization not in ("arithmetic", "sqrt"):
            raise ConfigError(f"nmi_normalization must be arithmetic or sqrt, got {cfg.nmi_normalization!r}")
        if cfg.train.n_clusters < 2:
            raise ConfigError("n_clusters must be >= 2")
        return cfg

    @classmethod
    def load(cls, path: Optional[str] = None, overrides: Optional[dict] = None) -> "PipelineConfig":
        flat = cls().to_flat()
        if path:
            try:
                data = json.loads(Path(path).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config file {path}: {exc}") from exc
            if not isinstance(data, dict):
                raise ConfigError(f"{path}: config must be a JSON object")
            unknown = sorted(set(data) - set(KEYS))
            if unknown:
                raise ConfigError(f"{path}: unknown configuration keys: {unknown}")
            flat.update(data)
        for key, value in (overrides or {}).items():
            if value is not None:
                flat[key] = value
        return cls.from_flat(flat)
