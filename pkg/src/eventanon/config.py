"""Experiment configuration: TOML sections validated against the library dataclasses."""

from __future__ import annotations

import copy
import sys
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .events import AugmentationConfig, SplitProtocol
from .losses import LossWeights, TripletConfig
from .models import AnonymizerConfig, ClassifierConfig, DenoiserConfig
from .synthetic import SyntheticDatasetSpec
from .training import NoiseBaselineConfig, Stage, StageConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

_STRICT = ConfigDict(extra="forbid")
for _cls in (AugmentationConfig, TripletConfig, LossWeights, AnonymizerConfig, ClassifierConfig, DenoiserConfig,
             SyntheticDatasetSpec, StageConfig, NoiseBaselineConfig):
    _cls.__pydantic_config__ = _STRICT


class ConfigError(ValueError):
    def __init__(self, message, key_path=None):
        super().__init__(f"{key_path}: {message}" if key_path else message)
        self.key_path = key_path


class DatasetSection(BaseModel):
    model_config = _STRICT
    kind: Literal["synthetic", "archive"] = "synthetic"
    archive: Optional[str] = None
    protocol: SplitProtocol = SplitProtocol.DVS_GESTURE
    val_per_pair: int = Field(3, ge=1)
    synthetic: SyntheticDatasetSpec = Field(default_factory=SyntheticDatasetSpec)


class ModelSection(BaseModel):
    model_config = _STRICT
    anonymizer: AnonymizerConfig = Field(default_factory=AnonymizerConfig)
    classifier: ClassifierConfig = Field(default_factory=ClassifierConfig)
    denoiser: DenoiserConfig = Field(default_factory=DenoiserConfig)


class LossSection(BaseModel):
    model_config = _STRICT
    triplet: TripletConfig = Field(default_factory=TripletConfig)
    weights: LossWeights = Field(default_factory=LossWeights)


class BaselineSection(BaseModel):
    model_config = _STRICT
    std_values: list[float] = Field(default_factory=lambda: [32.0, 64.0, 128.0, 256.0])
    inversion: bool = False

    def to_config(self) -> NoiseBaselineConfig:
        return NoiseBaselineConfig(list(self.std_values))


class ExperimentConfig(BaseModel):
    model_config = _STRICT
    seed: int = 0
    output_dir: str = "runs"
    dataset: DatasetSection = Field(default_factory=DatasetSection)
    model: ModelSection = Field(default_factory=ModelSection)
    loss: LossSection = Field(default_factory=LossSection)
    augmentation: AugmentationConfig = Field(default_factory=AugmentationConfig)
    stages: list[StageConfig] = Field(default_factory=list)
    baseline: Optional[BaselineSection] = None

    @model_validator(mode="after")
    def _check(self):
        order = {Stage.PRETRAIN: 0, Stage.PIPELINE: 1, Stage.POSTTRAIN: 2, Stage.POSTTRAIN_INVERSION: 2}
        ranks = [order[s.stage] for s in self.stages]
        if ranks != sorted(ranks) or ranks.count(1) > 1:
            raise ValueError("stages must be ordered pretrain* -> pipeline -> posttrain/posttrain_inversion")
        if self.dataset.kind == "archive":
            if not self.dataset.archive:
                raise ValueError("dataset.archive is required when dataset.kind = 'archive'")
            if not (Path(self.dataset.archive) / "manifest.json").exists():
                raise ValueError(f"dataset.archive {self.dataset.archive!r} has no manifest.json")
        return self

    def resolved_stages(self) -> list[StageConfig]:
        """Configured stages, or the full-scale default schedule when none are given."""
        if self.stages:
            return [copy.deepcopy(s) for s in self.stages]
        return [StageConfig.defaults(s, seed=self.seed) for s in (Stage.PRETRAIN, Stage.PIPELINE, Stage.POSTTRAIN)]

    def snapshot(self) -> dict:
        return self.model_dump(mode="json")


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(data: dict, assignment: str):
    """Apply ``a.b.c=value`` (list elements addressed by index) to a raw config dict."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not KEY=VALUE")
    key, value = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = data
    for i, part in enumerate(parts[:-1]):
        nxt = parts[i + 1]
        if isinstance(node, list):
            try:
                node = node[int(part)]
            except (ValueError, IndexError):
                raise ConfigError("no such list element", ".".join(parts[:i + 1])) from None
            continue
        if part not in node or node[part] is None:
            node[part] = [] if nxt.isdigit() else {}
        node = node[part]
    last = parts[-1]
    if isinstance(node, list):
        try:
            node[int(last)] = _parse_value(value.strip())
        except (ValueError, IndexError):
            raise ConfigError("no such list element", key) from None
    else:
        node[last] = _parse_value(value.strip())


def _stage_seeds(data: dict):
    # stages inherit the top-level seed unless they set their own
    for st in data.get("stages", []) or []:
        if isinstance(st, dict):
            st.setdefault("seed", data.get("seed", 0))


def load_config(path=None, overrides=(), seed=None, output_dir=None) -> ExperimentConfig:
    data: dict = {}
    if path is not None:
        try:
            data = tomllib.loads(Path(path).read_text())
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"invalid TOML: {e}") from None
    for ov in overrides:
        apply_override(data, ov)
    if seed is not None:
        data["seed"] = seed
        for st in data.get("stages", []) or []:
            if isinstance(st, dict):
                st["seed"] = seed
    if output_dir is not None:
        data["output_dir"] = str(output_dir)
    _stage_seeds(data)
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        err = e.errors()[0]
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        raise ConfigError(err["msg"], loc) from None
