"""Run configuration: validated models, YAML loading and dotted-path overrides.

A config file is YAML. Keys may be nested sections or flat dotted paths, so
these two are equivalent::

    training:
      epochs: 5
    training.epochs: 5

Overrides use the same dotted paths, e.g. ``normalizer.eta=0.95``.
"""

from __future__ import annotations

import copy
import os
from pathlib import Path
from typing import Any, Literal, Sequence

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .data import DriftConfig

OUTPUT_ROOT_ENV = "TABCL_OUTPUT_ROOT"


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SyntheticConfig(_Strict):
    n_experiences: int = Field(6, ge=1)
    rows_per_experience: int = Field(20_000, ge=2)
    n_features: int = Field(20, ge=1)
    scale_jump_at: int = Field(3, ge=0)
    scale_factor: float = Field(100.0, gt=0)
    class_balance: float = Field(0.3, gt=0, lt=1)
    separation: float = Field(1.5, gt=0)
    heavy_tail: float = Field(0.0, ge=0, lt=1)

    @model_validator(mode="after")
    def _jump_inside(self):
        if self.scale_jump_at >= self.n_experiences:
            raise ValueError("scale_jump_at must be smaller than n_experiences")
        return self

    def drift_config(self, seed: int) -> DriftConfig:
        return DriftConfig(seed=seed, **self.model_dump())


class DatasetConfig(_Strict):
    kind: Literal["synthetic", "unsw", "cicids"] = "synthetic"
    path: str | None = None
    label_column: str = "Label"
    header: bool = True
    chunk_size: int | None = Field(None, ge=2)
    split_ratio: float = Field(0.8, gt=0, lt=1)
    drop_partial: bool = False
    synthetic: SyntheticConfig = SyntheticConfig()

    @model_validator(mode="after")
    def _path_for_files(self):
        if self.kind != "synthetic" and not self.path:
            raise ValueError(f"dataset.path is required for kind {self.kind!r}")
        return self

    def resolved_chunk_size(self) -> int:
        if self.chunk_size is not None:
            return self.chunk_size
        return self.synthetic.rows_per_experience if self.kind == "synthetic" else 500_000


class NormalizerConfig(_Strict):
    name: Literal["global", "local", "cn", "clean"] = "clean"
    eta: float = Field(0.9, ge=0, le=1)
    lam: float = Field(0.1, gt=0, le=1)
    eps_den: float = Field(1e-8, gt=0)
    eps_cn: float = Field(1e-8, gt=0)
    ema_per_batch: bool = False


class StrategyConfig(_Strict):
    name: Literal["finetune", "replay", "agem", "ewc"] = "finetune"
    buffer_size: int = Field(5_000, ge=1)
    replay_fraction: float = Field(0.5, ge=0, le=1)
    reference_batch: int = Field(1_024, ge=1)
    ewc_lambda: float = Field(100.0, ge=0)
    fisher_samples: int = Field(10_000, ge=1)


class TrainingConfig(_Strict):
    epochs: int = Field(20, ge=1)
    batch_size: int = Field(20_000, ge=1)
    learning_rate: float = Field(1e-3, gt=0)
    kappa: float = Field(0.5, ge=0, le=1)
    hidden: tuple[int, ...] = (128, 128, 128, 128)
    dropout: float = Field(0.5, ge=0, lt=1)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    shuffle: bool = True
    eval_every: Literal["epoch", "experience"] = "epoch"
    checkpoint: bool = False


class RunConfig(_Strict):
    name: str | None = None
    seed: int = 0
    output_dir: str = Field(default_factory=lambda: os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    dataset: DatasetConfig = DatasetConfig()
    normalizer: NormalizerConfig = NormalizerConfig()
    strategy: StrategyConfig = StrategyConfig()
    training: TrainingConfig = TrainingConfig()

    @property
    def label(self) -> str:
        return self.name or f"{self.normalizer.name}-{self.strategy.name}-s{self.seed}"

    def echo(self) -> dict:
        return self.model_dump(mode="json")


def _expand_dotted(flat: dict) -> dict:
    out: dict = {}
    for key, value in flat.items():
        if isinstance(value, dict):
            value = _expand_dotted(value)
        parts = str(key).split(".")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"config key {key!r} conflicts with a scalar value")
        leaf = parts[-1]
        if isinstance(value, dict) and isinstance(node.get(leaf), dict):
            node[leaf] = _merge(node[leaf], value)
        else:
            node[leaf] = value
    return out


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def parse_override(text: str) -> tuple[str, Any]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    key, raw = text.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


def build_config(data: dict | None = None, overrides: Sequence[str] | dict = ()) -> RunConfig:
    tree = _expand_dotted(data or {})
    if isinstance(overrides, dict):
        pairs = list(overrides.items())
    else:
        pairs = [parse_override(o) for o in overrides]
    for key, value in pairs:
        tree = _merge(tree, _expand_dotted({key: value}))
    try:
        return RunConfig.model_validate(tree)
    except ValidationError as exc:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in exc.errors()
        )
        raise ConfigError(f"invalid config: {problems}") from None


def load_config(path: str | Path | None = None, overrides: Sequence[str] | dict = ()) -> RunConfig:
    data = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    return build_config(data, overrides)
